"""Typed message envelopes and their canonical JSON encoding.

Every message between nodes is an Envelope.  The wire encoding is
canonical JSON: UTF-8, keys sorted, no whitespace, NaN and infinities
rejected in both directions.  Python's float repr is shortest-round-trip,
so float64 values cross the text encoding losslessly; two equal payloads
always encode to identical bytes.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from ..errors import ProtocolError
from ..models import Hyperparams, ModelParams


class MsgType(str, enum.Enum):
    JOIN = "JOIN"
    JOIN_ACK = "JOIN_ACK"
    FIT_INSTRUCT = "FIT_INSTRUCT"
    FIT_RESULT = "FIT_RESULT"
    EVAL_INSTRUCT = "EVAL_INSTRUCT"
    EVAL_RESULT = "EVAL_RESULT"
    MODEL_BROADCAST = "MODEL_BROADCAST"
    RING_PASS = "RING_PASS"
    ROUND_DONE = "ROUND_DONE"
    SHUTDOWN = "SHUTDOWN"
    ERROR = "ERROR"


# Payload keys that must be present per message type.  FIT_INSTRUCT and
# EVAL_INSTRUCT additionally need exactly one of "params"/"cluster_params",
# checked separately.
REQUIRED_FIELDS: dict[MsgType, tuple[str, ...]] = {
    MsgType.JOIN: ("client_id", "num_samples_hint"),
    MsgType.JOIN_ACK: ("client_id",),
    MsgType.FIT_INSTRUCT: ("hyper", "deadline_ms", "subround"),
    MsgType.FIT_RESULT: ("client_id", "params", "num_samples", "train_metrics", "cluster_id", "subround"),
    MsgType.EVAL_INSTRUCT: ("deadline_ms",),
    MsgType.EVAL_RESULT: ("client_id", "eval_loss", "accuracy", "num_samples", "cluster_id"),
    MsgType.MODEL_BROADCAST: (),
    MsgType.RING_PASS: ("params", "pass_index"),
    MsgType.ROUND_DONE: (),
    MsgType.SHUTDOWN: (),
    MsgType.ERROR: ("code", "message"),
}

_MODEL_CARRIERS = (MsgType.FIT_INSTRUCT, MsgType.EVAL_INSTRUCT, MsgType.MODEL_BROADCAST)


@dataclass(frozen=True)
class Envelope:
    """One routed message.  payload must be canonical-JSON-encodable."""

    msg_type: MsgType
    sender: str
    receiver: str
    round: int
    payload: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "msg_type", MsgType(self.msg_type))
        if not self.sender or not self.receiver:
            raise ProtocolError("sender and receiver must be non-empty")
        if self.round < 0:
            raise ProtocolError("round must be >= 0")
        missing = [k for k in REQUIRED_FIELDS[self.msg_type] if k not in self.payload]
        if missing:
            raise ProtocolError(f"{self.msg_type.value} payload missing {missing}")
        if self.msg_type in _MODEL_CARRIERS:
            has = ("params" in self.payload) + ("cluster_params" in self.payload)
            if has != 1:
                raise ProtocolError(
                    f"{self.msg_type.value} needs exactly one of params/cluster_params"
                )

    def to_wire(self) -> dict[str, Any]:
        return {
            "msg_type": self.msg_type.value,
            "sender": self.sender,
            "receiver": self.receiver,
            "round": self.round,
            "payload": self.payload,
        }

    @classmethod
    def from_wire(cls, obj: Any) -> "Envelope":
        if not isinstance(obj, dict):
            raise ProtocolError("envelope must be a JSON object")
        try:
            msg_type = MsgType(obj["msg_type"])
        except (KeyError, ValueError) as exc:
            raise ProtocolError(f"unknown or missing msg_type: {exc}") from exc
        for key in ("sender", "receiver", "round", "payload"):
            if key not in obj:
                raise ProtocolError(f"envelope missing field {key!r}")
        if not isinstance(obj["round"], int) or isinstance(obj["round"], bool):
            raise ProtocolError("round must be an integer")
        if not isinstance(obj["payload"], dict):
            raise ProtocolError("payload must be a JSON object")
        return cls(
            msg_type=msg_type,
            sender=obj["sender"],
            receiver=obj["receiver"],
            round=obj["round"],
            payload=obj["payload"],
        )


def canonical_json(obj: Any) -> str:
    """Deterministic JSON text: sorted keys, no whitespace, finite floats only."""
    try:
        return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)
    except ValueError as exc:
        raise ProtocolError(f"value not encodable as canonical JSON: {exc}") from exc


def _reject_constant(token: str) -> float:
    raise ProtocolError(f"non-finite number {token!r} on the wire")


def canonical_loads(text: str | bytes) -> Any:
    """Parse JSON, rejecting NaN/Infinity literals."""
    try:
        return json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"malformed JSON: {exc}") from exc


def params_to_wire(params: ModelParams) -> dict[str, Any]:
    """Lossless JSON form: row-major float lists plus shapes and fingerprint."""
    return {
        "spec_hash": params.spec_hash,
        "layers": [
            {"shape": list(arr.shape), "values": [float(v) for v in arr.ravel()]}
            for arr in params.layers
        ],
    }


def params_from_wire(obj: Any) -> ModelParams:
    try:
        layers = tuple(
            np.array(layer["values"], dtype=np.float64).reshape(layer["shape"])
            for layer in obj["layers"]
        )
        spec_hash = int(obj["spec_hash"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed model params: {exc}") from exc
    return ModelParams(layers, spec_hash)


def hyper_to_wire(hyper: Hyperparams) -> dict[str, Any]:
    return {
        "learning_rate": hyper.learning_rate,
        "local_epochs": hyper.local_epochs,
        "batch_size": hyper.batch_size,
        "seed": hyper.seed,
    }


def hyper_from_wire(obj: Any) -> Hyperparams:
    try:
        return Hyperparams(
            learning_rate=float(obj["learning_rate"]),
            local_epochs=int(obj["local_epochs"]),
            batch_size=int(obj["batch_size"]),
            seed=int(obj["seed"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed hyperparams: {exc}") from exc


def assert_finite_payload(obj: Any, path: str = "payload") -> None:
    """Recursively reject non-finite floats before they reach the wire."""
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ProtocolError(f"non-finite float at {path}")
    elif isinstance(obj, dict):
        for key, value in obj.items():
            assert_finite_payload(value, f"{path}.{key}")
    elif isinstance(obj, (list, tuple)):
        for i, value in enumerate(obj):
            assert_finite_payload(value, f"{path}[{i}]")
