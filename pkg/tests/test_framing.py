"""Length-prefixed framing over canonical JSON."""
import struct

import pytest

from fedtopo.errors import FrameTooLargeError, IncompleteFrameError, ProtocolError
from fedtopo.transport.envelope import Envelope, MsgType
from fedtopo.transport.framing import FrameAssembler, HEADER_LEN, decode_frame, encode_frame


def shutdown_env():
    return Envelope(MsgType.SHUTDOWN, "collector", "c000", 3, {})


class TestEncode:
    def test_prefix_is_big_endian_body_length(self):
        frame = encode_frame(shutdown_env())
        (announced,) = struct.unpack(">I", frame[:HEADER_LEN])
        assert announced == len(frame) - HEADER_LEN

    def test_body_is_canonical_json(self):
        frame = encode_frame(shutdown_env())
        body = frame[HEADER_LEN:]
        assert body.startswith(b"{")
        assert b" " not in body


class TestDecode:
    def test_round_trip_identity(self):
        env = shutdown_env()
        assert decode_frame(encode_frame(env)) == env

    def test_truncated_header(self):
        with pytest.raises(IncompleteFrameError):
            decode_frame(b"\x00\x00")

    def test_truncated_body(self):
        # Announces ten bytes, provides five.
        with pytest.raises(IncompleteFrameError):
            decode_frame(struct.pack(">I", 10) + b"abcde")

    def test_oversized_length_rejected_without_reading(self):
        with pytest.raises(FrameTooLargeError):
            decode_frame(struct.pack(">I", 2**31) + b"x")

    def test_garbage_body(self):
        with pytest.raises(ProtocolError):
            decode_frame(struct.pack(">I", 4) + b"zzzz")


class TestAssembler:
    def test_byte_at_a_time(self):
        env = shutdown_env()
        frame = encode_frame(env)
        assembler = FrameAssembler()
        seen = []
        for i in range(len(frame)):
            seen.extend(assembler.feed(frame[i : i + 1]))
        assert seen == [env]
        assert assembler.pending_bytes == 0

    def test_two_frames_in_one_chunk(self):
        first = shutdown_env()
        second = Envelope(MsgType.ROUND_DONE, "collector", "c001", 4, {})
        out = FrameAssembler().feed(encode_frame(first) + encode_frame(second))
        assert out == [first, second]

    def test_incomplete_tail_kept_pending(self):
        env = shutdown_env()
        frame = encode_frame(env)
        assembler = FrameAssembler()
        assert assembler.feed(frame[: len(frame) // 2]) == []
        assert assembler.pending_bytes == len(frame) // 2
        assert assembler.feed(frame[len(frame) // 2 :]) == [env]
