import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Literal, Mapping, Optional, Sequence, Set, Tuple

from pydantic import BaseModel, Field

from app.agents.oracle import AgentDescriptor, FeedbackRecord, QueryInstance, agent_feedback
from app.errors import ProtocolError
from app.ium.engine import SearchEngine
from app.ium.offline import DatasetRecord, IterationDataset
from app.reranker.model import AgentIds, RerankerParams, ScoredDoc
from app.reranker.train import OptimizerConfig, fit

logger = logging.getLogger(__name__)


class OnlineConfig(BaseModel):
    """Serving-time adaptation settings; k comes from each agent"""

    b: int = Field(256, ge=1)
    epochs: int = Field(2, ge=0)
    count_by: Literal["queries", "records"] = "queries"
    seed: int = 0


@dataclass(frozen=True)
class ServedList:
    query_id: str
    results: Tuple[ScoredDoc, ...]
    params_version: int

    @property
    def passage_ids(self) -> List[str]:
        return [doc.passage_id for doc in self.results]


@dataclass
class AgentSession:
    """Per-agent serving state forked from an offline checkpoint"""

    agent_id: str
    ids: AgentIds
    k: int
    params: RerankerParams
    served_count: int = 0
    update_count: int = 0
    queries_with_feedback: int = 0
    dataset: IterationDataset = field(default_factory=lambda: IterationDataset(iteration=0))
    pending: Dict[str, ServedList] = field(default_factory=dict)
    served_ids: Set[str] = field(default_factory=set)
    update_losses: List[float] = field(default_factory=list)

    @classmethod
    def start(cls, agent_id: str, ids: AgentIds, k: int, checkpoint: RerankerParams) -> "AgentSession":
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        return cls(agent_id=agent_id, ids=ids, k=k, params=checkpoint.copy())

    @classmethod
    def for_agent(cls, agent: AgentDescriptor, checkpoint: RerankerParams) -> "AgentSession":
        return cls.start(agent.agent_id, agent.ids, agent.k, checkpoint)

    @property
    def provenance(self) -> str:
        return f"online:{self.agent_id}:v{self.update_count}"


class OnlineLearner:
    """
    Serves one agent and retrains its private parameters every b units of
    feedback (queries or records, per count_by).

    Requests are handled strictly in order: a query's results are fixed
    before its feedback is accepted, so its own labels never reach its own
    ranking.
    """

    def __init__(
        self,
        session: AgentSession,
        engine: SearchEngine,
        config: OnlineConfig,
        optimizer: Optional[OptimizerConfig] = None,
    ):
        self.session = session
        self.engine = engine
        self.config = config
        self.optimizer = optimizer or OptimizerConfig()

    def serve(self, query_id: str, text: str) -> ServedList:
        session = self.session
        if query_id in session.served_ids:
            raise ProtocolError(f"query {query_id} already served")

        results = self.engine.serve(session.params, session.ids, text, session.k)
        served = ServedList(query_id, tuple(results), session.update_count)
        session.served_ids.add(query_id)
        session.pending[query_id] = served
        session.served_count += 1
        if not results:
            logger.warning(f"Query {query_id} has no first-stage candidates for {session.agent_id}")
        return served

    def submit_feedback(self, query_id: str, labels: Mapping[str, int]) -> bool:
        """
        Record labels for a served query.

        Returns:
            True when this feedback triggered a parameter update
        """
        session = self.session
        served = session.pending.get(query_id)
        if served is None:
            if query_id in session.served_ids:
                raise ProtocolError(f"feedback for query {query_id} already submitted")
            raise ProtocolError(f"unknown query_id {query_id}")

        served_ids = served.passage_ids
        unserved = sorted(set(labels) - set(served_ids))
        if unserved:
            raise ProtocolError(f"label for unserved passage_id: {', '.join(unserved)}")
        missing = [pid for pid in served_ids if pid not in labels]
        if missing:
            raise ProtocolError(f"missing labels for passage_ids: {', '.join(missing)}")
        for pid, label in labels.items():
            if label not in (0, 1):
                raise ProtocolError(f"label for {pid} must be 0 or 1, got {label!r}")

        provenance = session.provenance
        for doc in served.results:
            session.dataset.add(DatasetRecord(
                feedback=FeedbackRecord(query_id, session.agent_id, doc.passage_id, int(labels[doc.passage_id])),
                ids=session.ids,
                features=doc.features,
                provenance=provenance,
            ))
        del session.pending[query_id]
        session.queries_with_feedback += 1

        if self._update_due(len(served_ids)):
            self._update()
            return True
        return False

    def _update_due(self, added_records: int) -> bool:
        if self.config.count_by == "queries":
            return self.session.queries_with_feedback % self.config.b == 0
        total = len(self.session.dataset)
        # Trigger when this submission crossed a multiple of b
        return added_records > 0 and total // self.config.b > (total - added_records) // self.config.b

    def _update(self) -> None:
        session = self.session
        if not len(session.dataset):
            logger.info(f"Skipping update for {session.agent_id}: no feedback records yet")
            session.update_count += 1
            return
        result = fit(
            session.params,
            session.dataset,
            self.config.epochs,
            self.optimizer,
            seed=[self.config.seed, session.update_count],
        )
        # Reference swap: results already served keep pointing at the old snapshot
        session.params = result.params
        session.update_count += 1
        if result.epoch_losses:
            session.update_losses.append(result.epoch_losses[-1])
        logger.info(f"Online update {session.update_count} for {session.agent_id} "
                    f"on {len(session.dataset)} records from {session.queries_with_feedback} queries")

    def stats(self) -> dict:
        session = self.session
        return {
            "agent_id": session.agent_id,
            "served_count": session.served_count,
            "queries_with_feedback": session.queries_with_feedback,
            "records": len(session.dataset),
            "pending": len(session.pending),
            "update_counter": session.update_count,
        }


def online_serve_train(
    session: AgentSession,
    agent: AgentDescriptor,
    query_stream: Sequence[QueryInstance],
    engine: SearchEngine,
    config: OnlineConfig,
    optimizer: Optional[OptimizerConfig] = None,
) -> Iterator[ServedList]:
    """
    Serve a query stream to one agent in arrival order, collecting the agent's
    feedback after each query and updating every b units.

    Yields each served list as soon as it is ranked; the session is updated
    in place and holds the final parameters when the stream is exhausted.
    """
    if agent.agent_id != session.agent_id:
        raise ValueError(f"session belongs to {session.agent_id}, not {agent.agent_id}")
    learner = OnlineLearner(session, engine, config, optimizer)

    for query in query_stream:
        served = learner.serve(query.query_id, query.input)
        yield served
        labels = {
            doc.passage_id: agent_feedback(agent, query, engine.store[doc.passage_id])
            for doc in served.results
        }
        learner.submit_feedback(query.query_id, labels)


def run_online(
    agent: AgentDescriptor,
    checkpoint: RerankerParams,
    query_stream: Sequence[QueryInstance],
    engine: SearchEngine,
    config: OnlineConfig,
    optimizer: Optional[OptimizerConfig] = None,
) -> Tuple[List[ServedList], AgentSession]:
    """Run a whole stream and return every served list with the final session"""
    session = AgentSession.for_agent(agent, checkpoint)
    served = list(online_serve_train(session, agent, query_stream, engine, config, optimizer))
    return served, session
