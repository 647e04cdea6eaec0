import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, NamedTuple, Sequence

import numpy as np
import pandas as pd
from scipy.stats import kendalltau

from app.agents.oracle import AgentDescriptor, QueryInstance, agent_feedback
from app.corpus.passages import PassageStore

logger = logging.getLogger(__name__)


class Similarity(NamedTuple):
    """A list-similarity value; degenerate marks a by-convention result"""

    value: float
    degenerate: bool


@dataclass
class MetricReport:
    """Downstream utility per agent plus the per-query outcomes behind it"""

    per_agent: Dict[str, float] = field(default_factory=dict)
    outcomes: Dict[str, List[int]] = field(default_factory=dict)
    query_ids: Dict[str, List[str]] = field(default_factory=dict)

    @property
    def macro_average(self) -> float:
        if not self.per_agent:
            return 0.0
        return float(np.mean([self.per_agent[a] for a in sorted(self.per_agent)]))

    def add(self, agent_id: str, query_ids: Sequence[str], outcomes: Sequence[int]) -> None:
        self.outcomes[agent_id] = list(outcomes)
        self.query_ids[agent_id] = list(query_ids)
        self.per_agent[agent_id] = float(np.mean(outcomes)) if len(outcomes) else 0.0

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {"agent_id": agent_id, "utility": self.per_agent[agent_id], "num_queries": len(self.outcomes[agent_id])}
            for agent_id in sorted(self.per_agent)
        ]
        return pd.DataFrame(rows, columns=["agent_id", "utility", "num_queries"])


def query_outcomes(
    agent: AgentDescriptor,
    served: Mapping[str, Sequence[str]],
    queries: Sequence[QueryInstance],
    store: PassageStore,
) -> List[int]:
    """
    Per-query success against the noise-free oracle: 1 iff at least one
    served passage is useful to the agent.
    """
    outcomes = []
    for query in queries:
        passage_ids = served.get(query.query_id, ())
        success = any(agent_feedback(agent, query, store[pid], noisy=False) for pid in passage_ids)
        outcomes.append(int(success))
    return outcomes


def downstream_utility(
    agent: AgentDescriptor,
    served: Mapping[str, Sequence[str]],
    queries: Sequence[QueryInstance],
    store: PassageStore,
) -> float:
    """Mean per-query success of an agent over its served lists"""
    if not queries:
        raise ValueError("query set must be non-empty")
    return float(np.mean(query_outcomes(agent, served, queries, store)))


def kendall_tau_detail(list_a: Sequence[str], list_b: Sequence[str]) -> Similarity:
    common = set(list_a) & set(list_b)
    if len(common) < 2:
        return Similarity(0.0, True)
    rank_b = {item: i for i, item in enumerate(list_b)}
    in_a = [item for item in list_a if item in common]
    # Rankings over the shared items are tie-free, so tau-b equals tau-a here.
    tau = kendalltau(np.arange(len(in_a)), [rank_b[item] for item in in_a])[0]
    return Similarity(float(tau), False)


def kendall_tau(list_a: Sequence[str], list_b: Sequence[str]) -> float:
    """Tau-a over the items both lists contain; 0 when fewer than two are shared"""
    return kendall_tau_detail(list_a, list_b).value


def jaccard_detail(list_a: Sequence[str], list_b: Sequence[str]) -> Similarity:
    a, b = set(list_a), set(list_b)
    if not a and not b:
        return Similarity(1.0, True)
    return Similarity(len(a & b) / len(a | b), False)


def jaccard(list_a: Sequence[str], list_b: Sequence[str]) -> float:
    return jaccard_detail(list_a, list_b).value
