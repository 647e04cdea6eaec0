import asyncio
import logging
import sys
import threading
import uuid
from typing import Dict, List, Optional, TextIO

from app.errors import IUMError
from app.ium.engine import SearchEngine
from app.ium.online import AgentSession, OnlineConfig, OnlineLearner
from app.reranker.model import AgentIds, RerankerParams
from app.reranker.train import OptimizerConfig
from app.serve.protocol import (
    FeedbackRequest,
    HelloRequest,
    RequestError,
    RetrieveRequest,
    ShutdownRequest,
    StatsRequest,
    decode_request,
    encode_message,
    error_response,
    ok_response,
)
from app.storage.db import Database

logger = logging.getLogger(__name__)

MAX_LINE_BYTES = 1 << 20


class ServeSession:
    """
    One client connection. A hello establishes the agent; every later request
    runs against that agent's private learner, strictly in arrival order.
    """

    def __init__(
        self,
        engine: SearchEngine,
        checkpoint: RerankerParams,
        config: OnlineConfig,
        optimizer: Optional[OptimizerConfig] = None,
        db: Optional[Database] = None,
        session_id: Optional[str] = None,
    ):
        self.engine = engine
        self.checkpoint = checkpoint
        self.config = config
        self.optimizer = optimizer or OptimizerConfig()
        self.db = db
        self.session_id = session_id or uuid.uuid4().hex[:12]
        self.learner: Optional[OnlineLearner] = None
        self.closed = False

    @property
    def update_counter(self) -> int:
        return self.learner.session.update_count if self.learner else 0

    def handle_line(self, line) -> str:
        """Decode one request line and return the encoded response line"""
        return encode_message(self.handle_raw(line))

    def handle_raw(self, line) -> dict:
        try:
            request = decode_request(line)
        except RequestError as e:
            logger.warning(f"Session {self.session_id}: {e}")
            return error_response(e.request_id, str(e), self.update_counter)

        try:
            return self.handle(request)
        except (IUMError, ValueError) as e:
            logger.warning(f"Session {self.session_id}: {request.op} failed: {e}")
            return error_response(request.request_id, str(e), self.update_counter)
        except Exception as e:
            logger.exception(f"Session {self.session_id}: unexpected error handling {request.op}")
            return error_response(request.request_id, f"internal error: {e}", self.update_counter)

    def handle(self, request) -> dict:
        if isinstance(request, HelloRequest):
            return self.handle_hello(request)
        if isinstance(request, ShutdownRequest):
            self.closed = True
            return ok_response(request.request_id, self.update_counter, closing=True)
        if self.learner is None:
            return error_response(request.request_id, "no session: send hello first", 0)
        if isinstance(request, RetrieveRequest):
            return self.handle_retrieve(request)
        if isinstance(request, FeedbackRequest):
            return self.handle_feedback(request)
        if isinstance(request, StatsRequest):
            return ok_response(request.request_id, self.update_counter, stats=self.learner.stats())
        return error_response(request.request_id, f"unsupported op {request.op}", self.update_counter)

    def handle_hello(self, request: HelloRequest) -> dict:
        if self.learner is not None:
            return error_response(request.request_id, "session already established", self.update_counter)
        session = AgentSession.start(request.agent_id, AgentIds(request.tid, request.mid), request.k, self.checkpoint)
        self.learner = OnlineLearner(session, self.engine, self.config, self.optimizer)
        logger.info(f"Session {self.session_id}: agent {request.agent_id} "
                    f"(tid={request.tid}, mid={request.mid}, k={request.k})")
        return ok_response(request.request_id, 0, session_id=self.session_id, b=self.config.b)

    def handle_retrieve(self, request: RetrieveRequest) -> dict:
        served = self.learner.serve(request.query_id, request.input)
        results = []
        for doc in served.results:
            passage = self.engine.store[doc.passage_id]
            results.append({
                "passage_id": doc.passage_id,
                "title": passage.title,
                "text": passage.text,
                "relevance_prob": doc.relevance_prob,
            })
        if self.db is not None:
            self.db.record_served(
                self.session_id,
                self.learner.session.agent_id,
                request.query_id,
                [(doc.passage_id, doc.relevance_prob) for doc in served.results],
                served.params_version,
            )
        return ok_response(request.request_id, self.update_counter, results=results)

    def handle_feedback(self, request: FeedbackRequest) -> dict:
        labels = request.label_map()
        updated = self.learner.submit_feedback(request.query_id, labels)
        session = self.learner.session
        if self.db is not None:
            self.db.record_feedback(self.session_id, session.agent_id, request.query_id, labels)
            if updated:
                self.db.record_update(
                    self.session_id,
                    session.agent_id,
                    session.update_count,
                    session.queries_with_feedback,
                    len(session.dataset),
                    session.update_losses[-1] if session.update_losses else None,
                )
        return ok_response(request.request_id, self.update_counter, updated=updated)

    def stats(self) -> dict:
        if self.learner is None:
            return {"session_id": self.session_id, "agent_id": None}
        return {"session_id": self.session_id, **self.learner.stats()}


class SessionRegistry:
    """Live sessions, read by the status app"""

    def __init__(self):
        self._sessions: Dict[str, ServeSession] = {}
        self._lock = threading.Lock()

    def add(self, session: ServeSession) -> None:
        with self._lock:
            self._sessions[session.session_id] = session

    def remove(self, session: ServeSession) -> None:
        with self._lock:
            self._sessions.pop(session.session_id, None)

    def snapshot(self) -> List[dict]:
        with self._lock:
            sessions = list(self._sessions.values())
        return [s.stats() for s in sessions]

    def __len__(self) -> int:
        with self._lock:
            return len(self._sessions)


class ServeServer:
    """Newline-delimited JSON over TCP, one ServeSession per connection"""

    def __init__(
        self,
        engine: SearchEngine,
        checkpoint: RerankerParams,
        config: OnlineConfig,
        optimizer: Optional[OptimizerConfig] = None,
        db: Optional[Database] = None,
        registry: Optional[SessionRegistry] = None,
        retain_sessions: bool = False,
    ):
        self.engine = engine
        self.checkpoint = checkpoint
        self.config = config
        self.optimizer = optimizer or OptimizerConfig()
        self.db = db
        self.registry = registry if registry is not None else SessionRegistry()
        # Live sessions are tracked by the registry only; closed ones are kept
        # here when retain_sessions is set, for runs that read final parameters.
        self.retain_sessions = retain_sessions
        self.retained: List[ServeSession] = []
        self.server = None

    def new_session(self) -> ServeSession:
        session = ServeSession(self.engine, self.checkpoint, self.config, self.optimizer, self.db)
        if self.retain_sessions:
            self.retained.append(session)
        return session

    async def handle_connection(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        session = self.new_session()
        self.registry.add(session)
        peer = writer.get_extra_info("peername")
        logger.info(f"Session {session.session_id} opened from {peer}")
        try:
            while not session.closed:
                try:
                    line = await reader.readline()
                except (asyncio.LimitOverrunError, ValueError):
                    writer.write(encode_message(error_response(None, "request line too long")).encode("utf-8"))
                    await writer.drain()
                    break
                if not line:
                    break
                if not line.strip():
                    continue
                # Training may run inside this call; other sessions keep being served
                response = await asyncio.to_thread(session.handle_line, line)
                writer.write(response.encode("utf-8"))
                await writer.drain()
        except ConnectionError as e:
            logger.warning(f"Session {session.session_id} connection lost: {e}")
        finally:
            self.registry.remove(session)
            writer.close()
            try:
                await writer.wait_closed()
            except ConnectionError:
                pass
            logger.info(f"Session {session.session_id} closed")

    async def start(self, host: str, port: int):
        self.server = await asyncio.start_server(self.handle_connection, host, port, limit=MAX_LINE_BYTES)
        sockets = self.server.sockets or []
        bound = sockets[0].getsockname() if sockets else (host, port)
        logger.info(f"Serving on {bound[0]}:{bound[1]} (b={self.config.b}, epochs={self.config.epochs})")
        return self.server

    @property
    def port(self) -> Optional[int]:
        if self.server is None or not self.server.sockets:
            return None
        return self.server.sockets[0].getsockname()[1]

    async def serve_forever(self, host: str, port: int) -> None:
        server = await self.start(host, port)
        async with server:
            await server.serve_forever()

    def close(self) -> None:
        if self.server is not None:
            self.server.close()


def run_stdio(server: ServeServer, stdin: Optional[TextIO] = None, stdout: Optional[TextIO] = None) -> ServeSession:
    """Single session over standard input/output; returns when input ends or on shutdown"""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    # Raw bytes when available so undecodable lines get a per-line error response
    lines = getattr(stdin, "buffer", stdin)
    session = server.new_session()
    server.registry.add(session)
    try:
        for line in lines:
            if not line.strip():
                continue
            stdout.write(session.handle_line(line))
            stdout.flush()
            if session.closed:
                break
    finally:
        server.registry.remove(session)
    return session


class BackgroundServer:
    """Runs a ServeServer on its own event loop in a daemon thread"""

    def __init__(self, server: ServeServer, host: str = "127.0.0.1", port: int = 0):
        self.server = server
        self.host = host
        self.port = port
        self.loop = asyncio.new_event_loop()
        self._thread: Optional[threading.Thread] = None
        self._ready = threading.Event()
        self._error: Optional[BaseException] = None

    def _run(self) -> None:
        asyncio.set_event_loop(self.loop)
        try:
            self.loop.run_until_complete(self.server.start(self.host, self.port))
        except BaseException as e:
            self._error = e
            self._ready.set()
            return
        self.port = self.server.port
        self._ready.set()
        self.loop.run_forever()

    def start(self) -> int:
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()
        self._ready.wait()
        if self._error is not None:
            raise self._error
        return self.port

    def stop(self, timeout: float = 10.0) -> None:
        if self._thread is None:
            return
        self.loop.call_soon_threadsafe(self.server.close)
        self.loop.call_soon_threadsafe(self.loop.stop)
        self._thread.join(timeout)
        self._thread = None

    def __enter__(self) -> "BackgroundServer":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()
