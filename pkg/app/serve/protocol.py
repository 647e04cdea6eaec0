"""
Line-delimited JSON wire protocol.

Each request and each response is one UTF-8 JSON object on its own line.
Every request carries a client-chosen ``request_id`` that the response
echoes. Requests::

    {"op": "hello",    "request_id": 1, "agent_id": "nq-fid", "tid": "nq", "mid": "fid", "k": 10}
    {"op": "retrieve", "request_id": 2, "query_id": "nq-q17", "input": "who ..."}
    {"op": "feedback", "request_id": 3, "query_id": "nq-q17",
     "labels": [{"passage_id": "d1#0", "label": 1}, ...]}
    {"op": "stats",    "request_id": 4}
    {"op": "shutdown", "request_id": 5}

Responses::

    {"request_id": 2, "ok": true, "update_counter": 0,
     "results": [{"passage_id": ..., "title": ..., "text": ..., "relevance_prob": ...}]}
    {"request_id": 3, "ok": true, "update_counter": 1, "updated": true}
    {"request_id": 9, "ok": false, "update_counter": 0, "error": "query nq-q17 already served"}

Responses are serialized with sorted keys and no insignificant whitespace;
floats use their shortest round-trip representation.
"""
import json
import logging
from typing import Annotated, Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError, field_validator

from app.errors import ProtocolError
from app.reranker.model import UNK

logger = logging.getLogger(__name__)

RequestId = Union[int, str]


class _Request(BaseModel):
    model_config = ConfigDict(extra="forbid")

    request_id: RequestId


class HelloRequest(_Request):
    op: Literal["hello"]
    agent_id: str = Field(min_length=1)
    tid: str = Field(min_length=1)
    mid: str = Field(min_length=1)
    k: int = Field(ge=1)

    @field_validator("tid", "mid")
    @classmethod
    def _not_reserved(cls, value: str) -> str:
        if value == UNK:
            raise ValueError(f'"{UNK}" is reserved for unseen identities')
        return value


class RetrieveRequest(_Request):
    op: Literal["retrieve"]
    query_id: str = Field(min_length=1)
    input: str


class LabelItem(BaseModel):
    model_config = ConfigDict(extra="forbid")

    passage_id: str
    label: Literal[0, 1]


class FeedbackRequest(_Request):
    op: Literal["feedback"]
    query_id: str = Field(min_length=1)
    labels: List[LabelItem]

    def label_map(self) -> Dict[str, int]:
        labels: Dict[str, int] = {}
        for item in self.labels:
            if item.passage_id in labels:
                raise ProtocolError(f"duplicate label for passage_id {item.passage_id}")
            labels[item.passage_id] = item.label
        return labels


class StatsRequest(_Request):
    op: Literal["stats"]


class ShutdownRequest(_Request):
    op: Literal["shutdown"]


WireMessage = Annotated[
    Union[HelloRequest, RetrieveRequest, FeedbackRequest, StatsRequest, ShutdownRequest],
    Field(discriminator="op"),
]
_WIRE_ADAPTER = TypeAdapter(WireMessage)


class RequestError(ProtocolError):
    """A request that could not be decoded; keeps whatever request_id was readable"""

    def __init__(self, message: str, request_id: Optional[RequestId] = None):
        self.request_id = request_id
        super().__init__(message)


def decode_request(line: Union[str, bytes]) -> WireMessage:
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as e:
            raise RequestError(f"request is not valid UTF-8: {e}")
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as e:
        raise RequestError(f"malformed JSON: {e.msg} at char {e.pos}")
    if not isinstance(raw, dict):
        raise RequestError("request must be a JSON object")

    request_id = raw.get("request_id")
    if not isinstance(request_id, (int, str)) or isinstance(request_id, bool):
        request_id = None
    try:
        return _WIRE_ADAPTER.validate_python(raw)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(part) for part in first["loc"]) or "request"
        raise RequestError(f"invalid request ({where}: {first['msg']})", request_id)


def encode_message(payload: Dict[str, Any]) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n"


def encode_request(op: str, request_id: RequestId, **fields: Any) -> str:
    return encode_message({"op": op, "request_id": request_id, **fields})


def ok_response(request_id: Optional[RequestId], update_counter: int, **payload: Any) -> Dict[str, Any]:
    return {"request_id": request_id, "ok": True, "update_counter": update_counter, **payload}


def error_response(request_id: Optional[RequestId], message: str, update_counter: int = 0) -> Dict[str, Any]:
    return {"request_id": request_id, "ok": False, "update_counter": update_counter, "error": message}


def decode_response(line: Union[str, bytes]) -> Dict[str, Any]:
    if isinstance(line, bytes):
        line = line.decode("utf-8")
    try:
        response = json.loads(line)
    except json.JSONDecodeError as e:
        raise ProtocolError(f"malformed response: {e.msg}")
    if not isinstance(response, dict) or "ok" not in response:
        raise ProtocolError("response must be a JSON object with an ok field")
    return response
