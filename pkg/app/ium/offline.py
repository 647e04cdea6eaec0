import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field, model_validator

from app.agents.oracle import AgentDescriptor, FeedbackRecord, QueryInstance, agent_feedback
from app.index.bm25 import DEFAULT_FIRST_STAGE_N
from app.ium.engine import SearchEngine
from app.reranker.features import FeatureVector
from app.reranker.model import AgentIds, RerankerParams, TrainingExample, apply_id_dropout
from app.reranker.train import OptimizerConfig, fit

logger = logging.getLogger(__name__)


class OfflineConfig(BaseModel):
    """Hyperparameters of the iterative feedback-collection / retraining loop"""

    T: int = Field(3, ge=1)
    k_train: int = Field(32, ge=1)
    epochs: int = Field(2, ge=0)
    unk_rate: float = Field(0.1, ge=0.0, le=1.0)
    first_stage_n: int = Field(DEFAULT_FIRST_STAGE_N, ge=1)
    personalized: bool = True
    seed: int = 0

    @model_validator(mode="after")
    def _k_within_first_stage(self) -> "OfflineConfig":
        if self.k_train > self.first_stage_n:
            raise ValueError(f"k_train ({self.k_train}) must not exceed first_stage_n ({self.first_stage_n})")
        return self


@dataclass(frozen=True)
class DatasetRecord:
    """One feedback label joined with what the scorer saw when it was collected"""

    feedback: FeedbackRecord
    ids: AgentIds
    features: FeatureVector
    provenance: str


@dataclass
class IterationDataset:
    iteration: int
    records: List[DatasetRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def add(self, record: DatasetRecord) -> None:
        self.records.append(record)

    def to_examples(self) -> List[TrainingExample]:
        return [TrainingExample(r.ids, r.features, r.feedback.label) for r in self.records]

    def positive_rate(self) -> Dict[str, float]:
        """Fraction of label-1 records per agent"""
        totals: Dict[str, List[int]] = {}
        for r in self.records:
            counts = totals.setdefault(r.feedback.agent_id, [0, 0])
            counts[0] += r.feedback.label
            counts[1] += 1
        return {agent_id: pos / n for agent_id, (pos, n) in sorted(totals.items())}


@dataclass
class IterationMetrics:
    """
    Summary of one offline iteration

    served_positive_rate is measured on the lists collected in this
    iteration's E-step, i.e. under the parameters of the previous iteration.
    """

    iteration: int
    num_records: int
    served_positive_rate: Dict[str, float]
    train_loss: Optional[float]

    @property
    def mean_positive_rate(self) -> float:
        rates = list(self.served_positive_rate.values())
        return float(np.mean(rates)) if rates else 0.0

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "num_records": self.num_records,
            "mean_positive_rate": self.mean_positive_rate,
            "served_positive_rate": dict(self.served_positive_rate),
            "train_loss": self.train_loss,
        }


@dataclass
class OfflineResult:
    checkpoints: List[RerankerParams]
    metrics: List[IterationMetrics]

    @property
    def final(self) -> RerankerParams:
        return self.checkpoints[-1]


def checkpoint_tag(iteration: int) -> str:
    return f"theta_{iteration}"


def serving_ids(agent: AgentDescriptor, personalized: bool) -> AgentIds:
    return agent.ids if personalized else AgentIds.unknown()


def e_step_collect(
    params: RerankerParams,
    agents: Sequence[AgentDescriptor],
    train_sets: Mapping[str, Sequence[QueryInstance]],
    engine: SearchEngine,
    config: OfflineConfig,
    iteration: int = 1,
) -> IterationDataset:
    """
    Serve every training query to every agent and record per-passage feedback.

    Args:
        params: Parameters the lists are ranked with (θ^{t-1})
        agents: Roster
        train_sets: Training queries keyed by agent_id
        engine: Search engine holding the index and candidate pools
        config: Offline configuration
        iteration: Index of the dataset being built

    Returns:
        A fresh IterationDataset; nothing carries over from earlier iterations
    """
    if not agents:
        raise ValueError("roster must be non-empty")

    dataset = IterationDataset(iteration=iteration)
    provenance = checkpoint_tag(iteration - 1)

    for agent in agents:
        queries = train_sets.get(agent.agent_id)
        if not queries:
            raise ValueError(f"no training queries for agent {agent.agent_id}")
        ids = serving_ids(agent, config.personalized)

        for query in queries:
            served = engine.serve(params, ids, query.input, config.k_train)
            if not served:
                logger.warning(f"Query {query.query_id} has no first-stage candidates, no records for {agent.agent_id}")
                continue
            for doc in served:
                label = agent_feedback(agent, query, engine.store[doc.passage_id])
                dataset.add(DatasetRecord(
                    feedback=FeedbackRecord(query.query_id, agent.agent_id, doc.passage_id, label),
                    ids=ids,
                    features=doc.features,
                    provenance=provenance,
                ))

    logger.info(f"E-step {iteration}: collected {len(dataset)} feedback records from {len(agents)} agents")
    return dataset


def m_step_update(
    params: RerankerParams,
    dataset: IterationDataset,
    config: OfflineConfig,
    optimizer: Optional[OptimizerConfig] = None,
) -> RerankerParams:
    """Retrain on one iteration's feedback, warm-starting from params"""
    return _m_step(params, dataset, config, optimizer or OptimizerConfig())[0]


def _m_step(params, dataset, config, optimizer):
    if not len(dataset):
        raise ValueError("cannot run an M-step on an empty dataset")

    dropout_rng = np.random.default_rng([config.seed, dataset.iteration, 0])
    examples = apply_id_dropout(dataset.to_examples(), config.unk_rate, rng=dropout_rng)
    result = fit(params, examples, config.epochs, optimizer, seed=[config.seed, dataset.iteration, 1])
    loss = result.epoch_losses[-1] if result.epoch_losses else None
    return result.params, loss


def offline_train(
    initial_params: RerankerParams,
    agents: Sequence[AgentDescriptor],
    train_sets: Mapping[str, Sequence[QueryInstance]],
    engine: SearchEngine,
    config: OfflineConfig,
    optimizer: Optional[OptimizerConfig] = None,
    on_iteration: Optional[Callable[[int, RerankerParams, IterationMetrics], None]] = None,
) -> OfflineResult:
    """
    Alternate feedback collection and retraining for config.T iterations.

    Args:
        initial_params: θ^0; all zeros reproduces the BM25 order
        agents: Roster
        train_sets: Training queries keyed by agent_id
        engine: Search engine
        config: Offline configuration
        optimizer: Adam settings used by every M-step
        on_iteration: Called with (t, θ^t, metrics) after each iteration,
            e.g. to write a checkpoint

    Returns:
        θ^1..θ^T and one IterationMetrics per iteration
    """
    optimizer = optimizer or OptimizerConfig()
    if engine.first_stage_n < config.k_train:
        raise ValueError(f"engine first stage depth {engine.first_stage_n} is below k_train {config.k_train}")

    params = initial_params
    result = OfflineResult(checkpoints=[], metrics=[])

    for t in range(1, config.T + 1):
        dataset = e_step_collect(params, agents, train_sets, engine, config, iteration=t)
        params, loss = _m_step(params, dataset, config, optimizer)

        metrics = IterationMetrics(
            iteration=t,
            num_records=len(dataset),
            served_positive_rate=dataset.positive_rate(),
            train_loss=loss,
        )
        result.checkpoints.append(params)
        result.metrics.append(metrics)
        logger.info(f"Iteration {t}/{config.T}: {metrics.num_records} records, "
                    f"served positive rate {metrics.mean_positive_rate:.4f}")
        if on_iteration is not None:
            on_iteration(t, params, metrics)

    return result
