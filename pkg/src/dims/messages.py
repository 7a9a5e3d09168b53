"""Wire format for coordinator <-> worker messages.

Payloads are UTF-8 JSON.  Objects travel as ``[id, payload]`` pairs where a
vector payload is a list of floats; Python's float repr round-trips exactly,
so decode(encode(x)) == x bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

from .metric import MetricObject


class MessageKind(str, Enum):
    BUILD_LOCAL = "BuildLocal"
    RANGE_TASK = "RangeTask"
    KNN_TASK = "KnnTask"
    INSERT_TASK = "InsertTask"
    DELETE_TASK = "DeleteTask"
    RESULT = "Result"
    ACK = "Ack"


PRIMARY = -1

# payload field whose length is the message's entry count
_COUNTED = {
    MessageKind.BUILD_LOCAL: "objects",
    MessageKind.RANGE_TASK: "partitions",
    MessageKind.KNN_TASK: "partitions",
    MessageKind.INSERT_TASK: "objects",
    MessageKind.DELETE_TASK: "ids",
    MessageKind.RESULT: "entries",
}


@dataclass(frozen=True)
class Message:
    kind: MessageKind
    payload: bytes
    entry_count: int
    src: int
    dst: int

    def decode(self) -> dict:
        return decode_payload(self.payload)


def obj_to_wire(o: MetricObject) -> list:
    p = o.payload
    return [o.id, p if isinstance(p, str) else list(p)]


def obj_from_wire(w) -> MetricObject:
    oid, p = w
    return MetricObject(int(oid), p if isinstance(p, str) else tuple(float(x) for x in p))


def encode_payload(body: dict) -> bytes:
    return json.dumps(body, separators=(",", ":"), sort_keys=True).encode("utf-8")


def decode_payload(raw: bytes) -> dict:
    return json.loads(raw.decode("utf-8"))


def element_count(kind: MessageKind, body: dict) -> int:
    field = _COUNTED.get(kind)
    return len(body[field]) if field else 0


def make_message(kind: MessageKind, body: dict, src: int, dst: int) -> Message:
    return Message(MessageKind(kind), encode_payload(body), element_count(kind, body), src, dst)
