"""Message envelopes, framing, fault injection, and the two transports."""

from .envelope import (
    Envelope,
    MsgType,
    canonical_json,
    canonical_loads,
    hyper_from_wire,
    hyper_to_wire,
    params_from_wire,
    params_to_wire,
)
from .framing import FrameAssembler, decode_frame, encode_frame
from .faults import FaultSpec, LinkState, lifecycle_state, sim_deliver
from .network import NodeNetwork
from .sim import SimNet

__all__ = [
    "Envelope",
    "MsgType",
    "canonical_json",
    "canonical_loads",
    "params_to_wire",
    "params_from_wire",
    "hyper_to_wire",
    "hyper_from_wire",
    "FrameAssembler",
    "encode_frame",
    "decode_frame",
    "FaultSpec",
    "LinkState",
    "lifecycle_state",
    "sim_deliver",
    "NodeNetwork",
    "SimNet",
]
