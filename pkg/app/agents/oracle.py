import hashlib
import json
import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.agents.utility import UTILITY_FUNCTIONS, normalize_answer
from app.corpus.passages import Passage
from app.corpus.tokenize import tokenize
from app.reranker.model import UNK, AgentIds

logger = logging.getLogger(__name__)


class OracleKind(str, Enum):
    CONTAINMENT = "containment"
    TITLE_SENSITIVE = "title_sensitive"
    POSITION_SENSITIVE = "position_sensitive"


class UtilityKind(str, Enum):
    EXACT_MATCH = "exact_match"
    ACCURACY = "accuracy"


class OracleAgentSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: OracleKind
    noise_rate: float = Field(0.0, ge=0.0, lt=0.5)
    seed: int = 0


class AgentDescriptor(BaseModel):
    """A black-box agent as the engine sees it"""

    model_config = ConfigDict(frozen=True)

    agent_id: str = Field(min_length=1)
    tid: str = Field(min_length=1)
    mid: str = Field(min_length=1)
    k: int = Field(ge=1)
    utility_kind: UtilityKind
    oracle: OracleAgentSpec

    @field_validator("tid", "mid")
    @classmethod
    def _not_reserved(cls, value: str) -> str:
        if value == UNK:
            raise ValueError(f'"{UNK}" is reserved and cannot identify a real agent')
        return value

    @property
    def ids(self) -> AgentIds:
        return AgentIds(self.tid, self.mid)


class QueryInstance(BaseModel):
    model_config = ConfigDict(frozen=True)

    query_id: str = Field(min_length=1)
    input: str
    answers: List[str] = Field(min_length=1)

    @field_validator("input")
    @classmethod
    def _non_empty_input(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("input must be non-empty")
        return value


@dataclass(frozen=True)
class FeedbackRecord:
    query_id: str
    agent_id: str
    passage_id: str
    label: int


def _answer_position(normalized_text: str, normalized_answer: str) -> Optional[int]:
    """Word offset of the first occurrence of the answer, None if absent"""
    at = normalized_text.find(normalized_answer)
    if at < 0:
        return None
    return len(normalized_text[:at].split())


@lru_cache(maxsize=1 << 16)
def _normalized_passage(text: str) -> str:
    return normalize_answer(text)


def oracle_prediction(kind: OracleKind, query: QueryInstance, passage: Passage) -> Optional[str]:
    """
    The gold answer an oracle agent produces from this single passage, or
    None when the passage does not let it answer.
    """
    text = _normalized_passage(passage.text)
    supported = None
    for answer in query.answers:
        gold = normalize_answer(answer)
        if not gold:
            continue
        position = _answer_position(text, gold)
        if position is None:
            continue
        if kind == OracleKind.POSITION_SENSITIVE and position >= len(text.split()) / 2:
            continue
        supported = answer
        break

    if supported is None:
        return None
    if kind == OracleKind.TITLE_SENSITIVE:
        if not set(tokenize(query.input)) & set(tokenize(passage.title)):
            return None
    return supported


def _noise_draw(seed: int, query_id: str, passage_id: str) -> float:
    digest = hashlib.blake2b(f"{seed}\x1f{query_id}\x1f{passage_id}".encode("utf-8"), digest_size=8).digest()
    return float(np.random.default_rng(int.from_bytes(digest, "big")).random())


def agent_feedback(agent: AgentDescriptor, query: QueryInstance, passage: Passage, noisy: bool = True) -> int:
    """
    Binary usefulness of one passage for one query, as the agent reports it

    The oracle answers from the passage alone; the agent's utility function
    scores that answer against the gold answers. With noisy=True the label is
    flipped with probability noise_rate, seeded per (oracle seed, query_id,
    passage_id).
    """
    prediction = oracle_prediction(agent.oracle.kind, query, passage)
    label = 0
    if prediction is not None:
        label = UTILITY_FUNCTIONS[agent.utility_kind.value](prediction, query.answers)

    rate = agent.oracle.noise_rate
    if noisy and rate > 0.0 and _noise_draw(agent.oracle.seed, query.query_id, passage.passage_id) < rate:
        label = 1 - label
    return label


def load_roster(path: Union[str, Path]) -> List[AgentDescriptor]:
    """Read an agent roster: a JSON list or {"agents": [...]}"""
    with open(path, "r", encoding="utf-8") as handle:
        raw = json.load(handle)
    entries = raw["agents"] if isinstance(raw, dict) else raw
    agents = [AgentDescriptor.model_validate(entry) for entry in entries]

    seen = set()
    for agent in agents:
        if agent.agent_id in seen:
            raise ValueError(f"duplicate agent_id in roster: {agent.agent_id}")
        seen.add(agent.agent_id)
    logger.info(f"Loaded roster of {len(agents)} agents from {path}")
    return agents


def save_roster(agents: Sequence[AgentDescriptor], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump({"agents": [a.model_dump(mode="json") for a in agents]}, handle, indent=2, sort_keys=True)
        handle.write("\n")


def load_queries(path: Union[str, Path]) -> List[QueryInstance]:
    """Read newline-delimited JSON query records"""
    queries = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                queries.append(QueryInstance.model_validate_json(line))
    return queries


def write_queries(queries: Sequence[QueryInstance], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for query in queries:
            handle.write(json.dumps(query.model_dump(mode="json"), sort_keys=True) + "\n")
