"""Length-prefixed framing of canonical-JSON envelopes.

A frame is a 4-byte big-endian unsigned body length followed by the UTF-8
body.  Bodies above 2**31 - 1 bytes are refused outright so a corrupted
length can never trigger a giant allocation on the receiving side.
"""
from __future__ import annotations

import struct

from ..errors import FrameTooLargeError, IncompleteFrameError
from .envelope import Envelope, canonical_json, canonical_loads

HEADER_LEN = 4
MAX_BODY = 2**31 - 1


def encode_frame(env: Envelope) -> bytes:
    body = canonical_json(env.to_wire()).encode("utf-8")
    if len(body) > MAX_BODY:
        raise FrameTooLargeError(f"frame body of {len(body)} bytes exceeds {MAX_BODY}")
    return struct.pack(">I", len(body)) + body


def decode_frame(data: bytes) -> Envelope:
    """Decode the first complete frame in `data`.

    Raises IncompleteFrameError when the buffer ends early; the caller is
    expected to read more bytes and retry (see FrameAssembler).
    """
    if len(data) < HEADER_LEN:
        raise IncompleteFrameError(f"need {HEADER_LEN} header bytes, have {len(data)}")
    (body_len,) = struct.unpack(">I", data[:HEADER_LEN])
    if body_len > MAX_BODY:
        raise FrameTooLargeError(f"announced body of {body_len} bytes exceeds {MAX_BODY}")
    if len(data) < HEADER_LEN + body_len:
        raise IncompleteFrameError(
            f"announced body of {body_len} bytes, only {len(data) - HEADER_LEN} available"
        )
    body = data[HEADER_LEN : HEADER_LEN + body_len]
    return Envelope.from_wire(canonical_loads(body.decode("utf-8")))


class FrameAssembler:
    """Incremental decoder for a byte stream arriving in arbitrary chunks."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, chunk: bytes) -> list[Envelope]:
        """Absorb a chunk and return every envelope it completed."""
        self._buf.extend(chunk)
        out: list[Envelope] = []
        while True:
            if len(self._buf) < HEADER_LEN:
                return out
            (body_len,) = struct.unpack(">I", bytes(self._buf[:HEADER_LEN]))
            if body_len > MAX_BODY:
                raise FrameTooLargeError(f"announced body of {body_len} bytes exceeds {MAX_BODY}")
            end = HEADER_LEN + body_len
            if len(self._buf) < end:
                return out
            body = bytes(self._buf[HEADER_LEN:end])
            del self._buf[:end]
            out.append(Envelope.from_wire(canonical_loads(body.decode("utf-8"))))

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)
