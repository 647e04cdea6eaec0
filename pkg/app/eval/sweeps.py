import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from app.agents.oracle import AgentDescriptor, QueryInstance
from app.eval.metrics import MetricReport, jaccard_detail, kendall_tau_detail, query_outcomes
from app.eval.significance import mcnemar
from app.ium.engine import SearchEngine
from app.ium.offline import OfflineConfig, offline_train, serving_ids
from app.ium.online import AgentSession, OnlineConfig, online_serve_train
from app.reranker.model import RerankerParams
from app.reranker.train import OptimizerConfig

logger = logging.getLogger(__name__)

QuerySets = Mapping[str, Sequence[QueryInstance]]


def serve_lists(
    engine: SearchEngine,
    params: RerankerParams,
    agent: AgentDescriptor,
    queries: Sequence[QueryInstance],
    personalized: bool = True,
    k: Optional[int] = None,
) -> Dict[str, List[str]]:
    """Passage IDs served to one agent per query, without any learning"""
    ids = serving_ids(agent, personalized)
    depth = k if k is not None else agent.k
    return {
        q.query_id: [doc.passage_id for doc in engine.serve(params, ids, q.input, depth)]
        for q in queries
    }


def evaluate_params(
    engine: SearchEngine,
    params: RerankerParams,
    agents: Sequence[AgentDescriptor],
    query_sets: QuerySets,
    personalized: bool = True,
) -> MetricReport:
    """Downstream utility of a fixed parameter set for every agent"""
    report = MetricReport()
    for agent in agents:
        queries = query_sets[agent.agent_id]
        served = serve_lists(engine, params, agent, queries, personalized)
        report.add(agent.agent_id, [q.query_id for q in queries],
                   query_outcomes(agent, served, queries, engine.store))
    logger.info(f"Evaluated {len(agents)} agents: macro utility {report.macro_average:.4f}")
    return report


def significance_table(baseline: MetricReport, candidate: MetricReport) -> pd.DataFrame:
    """Per-agent McNemar test of candidate outcomes against baseline outcomes"""
    rows = []
    for agent_id in sorted(candidate.per_agent):
        if baseline.query_ids[agent_id] != candidate.query_ids[agent_id]:
            raise ValueError(f"reports for {agent_id} cover different queries")
        result = mcnemar(baseline.outcomes[agent_id], candidate.outcomes[agent_id])
        rows.append({
            "agent_id": agent_id,
            "baseline_utility": baseline.per_agent[agent_id],
            "utility": candidate.per_agent[agent_id],
            **result.to_dict(),
        })
    return pd.DataFrame(rows, columns=[
        "agent_id", "baseline_utility", "utility", "statistic", "p_value", "n01", "n10", "method",
    ])


def _row(report: MetricReport, **leading) -> dict:
    row = dict(leading)
    row["macro_utility"] = report.macro_average
    for agent_id in sorted(report.per_agent):
        row[agent_id] = report.per_agent[agent_id]
    return row


def sweep_iterations(
    engine: SearchEngine,
    agents: Sequence[AgentDescriptor],
    train_sets: QuerySets,
    eval_sets: QuerySets,
    config: OfflineConfig,
    optimizer: Optional[OptimizerConfig] = None,
    modes: Sequence[bool] = (True, False),
    initial_params: Optional[RerankerParams] = None,
) -> pd.DataFrame:
    """
    Macro and per-agent utility after every offline iteration 0..T.

    One offline run per personalization mode yields every iteration's
    checkpoint, so a sweep over T costs a single run of length T.
    """
    rows = []
    for personalized in modes:
        run_config = config.model_copy(update={"personalized": personalized})
        theta0 = initial_params.copy() if initial_params is not None else RerankerParams.zeros()
        rows.append(_row(evaluate_params(engine, theta0, agents, eval_sets, personalized),
                         personalized=personalized, iteration=0))

        def record(t, params, _metrics, personalized=personalized):
            rows.append(_row(evaluate_params(engine, params, agents, eval_sets, personalized),
                             personalized=personalized, iteration=t))

        offline_train(theta0, agents, train_sets, engine, run_config, optimizer, on_iteration=record)
    return pd.DataFrame(rows)


def run_online_report(
    engine: SearchEngine,
    agents: Sequence[AgentDescriptor],
    stream_sets: QuerySets,
    checkpoint: RerankerParams,
    config: OnlineConfig,
    optimizer: Optional[OptimizerConfig] = None,
) -> Tuple[MetricReport, Dict[str, AgentSession]]:
    """Run one isolated online session per agent and score what each was served"""
    report = MetricReport()
    sessions: Dict[str, AgentSession] = {}
    for agent in agents:
        queries = stream_sets[agent.agent_id]
        session = AgentSession.for_agent(agent, checkpoint)
        served = {s.query_id: s.passage_ids for s in online_serve_train(session, agent, queries, engine, config, optimizer)}
        report.add(agent.agent_id, [q.query_id for q in queries],
                   query_outcomes(agent, served, queries, engine.store))
        sessions[agent.agent_id] = session
        logger.debug(f"Online session {agent.agent_id}: {session.update_count} updates")
    return report, sessions


def sweep_batch_size(
    engine: SearchEngine,
    agents: Sequence[AgentDescriptor],
    stream_sets: QuerySets,
    checkpoint: RerankerParams,
    b_values: Sequence[int],
    config: Optional[OnlineConfig] = None,
    optimizer: Optional[OptimizerConfig] = None,
) -> pd.DataFrame:
    """
    Online utility per batch size b, preceded by a no-update row serving the
    stream with the checkpoint alone (b empty, updates 0).
    """
    config = config or OnlineConfig()
    baseline = evaluate_params(engine, checkpoint, agents, stream_sets)
    rows = [_row(baseline, b=None, updates=0)]
    for b in b_values:
        report, sessions = run_online_report(
            engine, agents, stream_sets, checkpoint, config.model_copy(update={"b": b}), optimizer
        )
        updates = sum(s.update_count for s in sessions.values())
        rows.append(_row(report, b=b, updates=updates))
        logger.info(f"b={b}: macro utility {report.macro_average:.4f} after {updates} updates")
    frame = pd.DataFrame(rows)
    frame["b"] = frame["b"].astype("Int64")
    return frame


@dataclass
class PersonalizationReport:
    """Pairwise list similarity between agents served the same queries"""

    agent_ids: List[str]
    jaccard: pd.DataFrame
    kendall_tau: pd.DataFrame
    pairs: pd.DataFrame
    summary: Dict[str, float] = field(default_factory=dict)


def _mean(values: Sequence[float]) -> float:
    return float(np.mean(values)) if len(values) else float("nan")


def personalization_analysis(
    engine: SearchEngine,
    params: RerankerParams,
    agents: Sequence[AgentDescriptor],
    queries: Sequence[QueryInstance],
    personalized: bool = True,
    depth: Optional[int] = None,
) -> PersonalizationReport:
    """
    Serve one shared query set to every agent and compare the lists pairwise.

    Each pair is compared at depth min(k_a, k_b) unless depth is given.
    Pairs of agents with the same oracle kind and pairs with different kinds
    are summarized separately.
    """
    ids = [a.agent_id for a in agents]
    max_k = max(a.k for a in agents) if depth is None else depth
    lists = {a.agent_id: serve_lists(engine, params, a, queries, personalized, k=max_k) for a in agents}
    jac = pd.DataFrame(1.0, index=ids, columns=ids)
    tau = pd.DataFrame(1.0, index=ids, columns=ids)
    pair_rows = []

    for a, b in itertools.combinations(agents, 2):
        cut = depth if depth is not None else min(a.k, b.k)
        j_values, t_values, degenerate = [], [], 0
        for q in queries:
            la = lists[a.agent_id][q.query_id][:cut]
            lb = lists[b.agent_id][q.query_id][:cut]
            j = jaccard_detail(la, lb)
            t = kendall_tau_detail(la, lb)
            j_values.append(j.value)
            t_values.append(t.value)
            degenerate += int(j.degenerate) + int(t.degenerate)
        mj, mt = _mean(j_values), _mean(t_values)
        jac.loc[a.agent_id, b.agent_id] = jac.loc[b.agent_id, a.agent_id] = mj
        tau.loc[a.agent_id, b.agent_id] = tau.loc[b.agent_id, a.agent_id] = mt
        pair_rows.append({
            "agent_a": a.agent_id,
            "agent_b": b.agent_id,
            "same_kind": a.oracle.kind == b.oracle.kind,
            "depth": cut,
            "jaccard": mj,
            "kendall_tau": mt,
            "degenerate": degenerate,
        })

    pairs = pd.DataFrame(pair_rows, columns=[
        "agent_a", "agent_b", "same_kind", "depth", "jaccard", "kendall_tau", "degenerate",
    ])
    same = pairs[pairs["same_kind"]]
    cross = pairs[~pairs["same_kind"]]
    summary = {
        "personalized": float(personalized),
        "mean_jaccard": _mean(pairs["jaccard"].tolist()),
        "mean_jaccard_same_kind": _mean(same["jaccard"].tolist()),
        "mean_jaccard_cross_kind": _mean(cross["jaccard"].tolist()),
        "mean_tau": _mean(pairs["kendall_tau"].tolist()),
        "mean_tau_same_kind": _mean(same["kendall_tau"].tolist()),
        "mean_tau_cross_kind": _mean(cross["kendall_tau"].tolist()),
        "degenerate_comparisons": float(pairs["degenerate"].sum()) if len(pairs) else 0.0,
    }
    logger.info(f"Personalization analysis over {len(queries)} queries: "
                f"mean Jaccard {summary['mean_jaccard']:.4f}, "
                f"tau same-kind {summary['mean_tau_same_kind']:.4f} vs cross-kind {summary['mean_tau_cross_kind']:.4f}")
    return PersonalizationReport(ids, jac, tau, pairs, summary)
