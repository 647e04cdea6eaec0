from sqlalchemy import create_engine, func, Column, Integer, String, DateTime, Text, Float
from sqlalchemy.orm import Session, declarative_base, sessionmaker
from sqlalchemy.pool import StaticPool
from datetime import datetime
from typing import Dict, Mapping, Optional, Sequence
import json
import logging
import threading

logger = logging.getLogger(__name__)

Base = declarative_base()

class ServedQuery(Base):
    __tablename__ = 'served_queries'

    id = Column(Integer, primary_key=True)
    session_id = Column(String(64), nullable=False, index=True)
    agent_id = Column(String(200), nullable=False)
    query_id = Column(String(200), nullable=False)
    passages_data = Column(Text)  # JSON list of [passage_id, relevance_prob]
    params_version = Column(Integer, default=0)
    timestamp = Column(DateTime, default=datetime.utcnow)

    def get_passages(self):
        return json.loads(self.passages_data) if self.passages_data else []

    def set_passages(self, passages):
        self.passages_data = json.dumps(passages)

class FeedbackLabel(Base):
    __tablename__ = 'feedback_labels'

    id = Column(Integer, primary_key=True)
    session_id = Column(String(64), nullable=False, index=True)
    agent_id = Column(String(200), nullable=False)
    query_id = Column(String(200), nullable=False)
    passage_id = Column(String(200), nullable=False)
    label = Column(Integer, nullable=False)
    timestamp = Column(DateTime, default=datetime.utcnow)

class ModelUpdate(Base):
    __tablename__ = 'model_updates'

    id = Column(Integer, primary_key=True)
    session_id = Column(String(64), nullable=False, index=True)
    agent_id = Column(String(200), nullable=False)
    update_counter = Column(Integer, nullable=False)
    num_queries = Column(Integer, nullable=False)
    num_records = Column(Integer, nullable=False)
    final_loss = Column(Float)
    timestamp = Column(DateTime, default=datetime.utcnow)

class Database:
    """Serve log: every served list, submitted label and online update"""

    def __init__(self, db_url="sqlite:///ium_serve.db"):
        kwargs = {}
        if db_url.startswith("sqlite"):
            # Sessions write from worker threads
            kwargs["connect_args"] = {"check_same_thread": False}
            if db_url in ("sqlite://", "sqlite:///:memory:"):
                kwargs["poolclass"] = StaticPool
        self.engine = create_engine(db_url, **kwargs)
        Base.metadata.create_all(self.engine)
        self.Session = sessionmaker(bind=self.engine)
        self._lock = threading.Lock()

    def get_session(self) -> Session:
        """A new ORM session; callers close it, usually via `with`"""
        return self.Session()

    def _write(self, *rows) -> None:
        with self._lock:
            with self.get_session() as session:
                session.add_all(rows)
                session.commit()

    def record_served(self, session_id: str, agent_id: str, query_id: str,
                      passages: Sequence, params_version: int) -> None:
        row = ServedQuery(session_id=session_id, agent_id=agent_id, query_id=query_id,
                          params_version=params_version)
        row.set_passages([[pid, prob] for pid, prob in passages])
        self._write(row)

    def record_feedback(self, session_id: str, agent_id: str, query_id: str,
                        labels: Mapping[str, int]) -> None:
        self._write(*[
            FeedbackLabel(session_id=session_id, agent_id=agent_id, query_id=query_id,
                          passage_id=pid, label=int(label))
            for pid, label in sorted(labels.items())
        ])

    def record_update(self, session_id: str, agent_id: str, update_counter: int,
                      num_queries: int, num_records: int, final_loss: Optional[float]) -> None:
        self._write(ModelUpdate(session_id=session_id, agent_id=agent_id, update_counter=update_counter,
                                num_queries=num_queries, num_records=num_records, final_loss=final_loss))
        logger.debug(f"Logged update {update_counter} for {agent_id} in session {session_id}")

    def counts(self) -> Dict[str, int]:
        with self.get_session() as session:
            return {
                "served_queries": session.query(func.count(ServedQuery.id)).scalar(),
                "feedback_labels": session.query(func.count(FeedbackLabel.id)).scalar(),
                "model_updates": session.query(func.count(ModelUpdate.id)).scalar(),
            }

    def close(self):
        self.engine.dispose()
