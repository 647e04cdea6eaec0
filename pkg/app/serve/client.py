import logging
import socket
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple

from app.agents.oracle import AgentDescriptor, QueryInstance, agent_feedback
from app.corpus.passages import Passage
from app.corpus.tokenize import split_words
from app.errors import ProtocolError
from app.serve.protocol import decode_response, encode_request

logger = logging.getLogger(__name__)


class LineTransport(Protocol):
    def request(self, line: str) -> str:
        ...

    def close(self) -> None:
        ...


class InProcessTransport:
    """Hands request lines straight to a line handler, e.g. ServeSession.handle_line"""

    def __init__(self, handler: Callable[[str], str]):
        self.handler = handler

    def request(self, line: str) -> str:
        return self.handler(line)

    def close(self) -> None:
        pass


class SocketTransport:
    """Blocking TCP transport, one request line out, one response line back"""

    def __init__(self, host: str, port: int, timeout: Optional[float] = 60.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.reader = self.sock.makefile("rb")

    def request(self, line: str) -> str:
        self.sock.sendall(line.encode("utf-8"))
        response = self.reader.readline()
        if not response:
            raise ConnectionError("server closed the connection")
        return response.decode("utf-8")

    def close(self) -> None:
        self.reader.close()
        self.sock.close()


@dataclass
class ClientRun:
    """What an agent saw over one stream"""

    served: List[Tuple[str, List[Tuple[str, float]]]] = field(default_factory=list)
    update_counter: int = 0

    def passage_ids(self) -> Dict[str, List[str]]:
        return {query_id: [pid for pid, _ in results] for query_id, results in self.served}


class OracleAgentClient:
    """
    Drives an oracle agent through the wire protocol: retrieve, judge each
    returned passage, send the labels back.
    """

    def __init__(self, agent: AgentDescriptor, transport: LineTransport):
        self.agent = agent
        self.transport = transport
        self._next_id = 0

    def call(self, op: str, **fields) -> dict:
        self._next_id += 1
        request_id = self._next_id
        response = decode_response(self.transport.request(encode_request(op, request_id, **fields)))
        if response.get("request_id") != request_id:
            raise ProtocolError(f"response for request {response.get('request_id')}, expected {request_id}")
        if not response["ok"]:
            raise ProtocolError(f"{op} failed: {response.get('error')}")
        return response

    def hello(self) -> dict:
        return self.call("hello", agent_id=self.agent.agent_id, tid=self.agent.tid, mid=self.agent.mid, k=self.agent.k)

    def run(self, queries: Sequence[QueryInstance]) -> ClientRun:
        run = ClientRun()
        for query in queries:
            response = self.call("retrieve", query_id=query.query_id, input=query.input)
            results = response["results"]
            labels = []
            for item in results:
                passage = Passage(
                    passage_id=item["passage_id"],
                    title=item["title"],
                    text=item["text"],
                    word_count=len(split_words(item["text"])),
                )
                labels.append({"passage_id": passage.passage_id, "label": agent_feedback(self.agent, query, passage)})
            run.served.append((query.query_id, [(item["passage_id"], item["relevance_prob"]) for item in results]))
            ack = self.call("feedback", query_id=query.query_id, labels=labels)
            run.update_counter = ack["update_counter"]
        logger.info(f"Agent {self.agent.agent_id}: {len(run.served)} queries over the wire, "
                    f"{run.update_counter} updates")
        return run

    def stats(self) -> dict:
        return self.call("stats")["stats"]

    def shutdown(self) -> None:
        self.call("shutdown")
