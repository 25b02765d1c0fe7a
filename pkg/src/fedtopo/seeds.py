"""Deterministic seed derivation.

Every random stream in the system is derived from the run seed through
`mix64`, a splitmix64-style integer mixer.  Streams are separated by the
salt constants below so that, say, client sampling can never collide with
data partitioning no matter how the inputs line up.

The derivation is topology-independent on purpose: a client's training
seed for a given round is the same whether the instruction reached it
directly, through a mid-aggregator, or around a ring.  Equivalence checks
between topologies rely on that.
"""
from __future__ import annotations

MASK64 = (1 << 64) - 1

_GAMMA = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB

# Stream salts.  Arbitrary distinct constants; never reorder or reuse.
SALT_FIT_SAMPLE = 0xA1
SALT_EVAL_SAMPLE = 0xA2
SALT_TRAIN = 0xA3
SALT_SPLIT = 0xA4
SALT_LINK = 0xA5
SALT_GEN = 0xA6
SALT_PART = 0xA7
SALT_HOLDOUT = 0xA8


def splitmix64(x: int) -> int:
    """One scrambling step of the splitmix64 generator."""
    x = (x + _GAMMA) & MASK64
    x = (x ^ (x >> 30)) * _MIX_A & MASK64
    x = (x ^ (x >> 27)) * _MIX_B & MASK64
    return x ^ (x >> 31)


def mix64(*parts: int) -> int:
    """Fold any number of integers into one 64-bit seed.

    Order-sensitive and deterministic; negative inputs are reduced
    modulo 2**64 before mixing.
    """
    state = 0
    for part in parts:
        state = splitmix64(state ^ (part & MASK64))
    return state


def fnv1a64(text: str) -> int:
    """FNV-1a hash of a string, for mixing node ids into seeds."""
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & MASK64
    return h


def round_seed(run_seed: int, client_index: int, round_index: int, subround: int = 0) -> int:
    """Training seed for one client in one round.

    Depends only on the run seed, the client's global index, and the round
    coordinates, never on the topology that routed the instruction.
    """
    return mix64(run_seed, SALT_TRAIN, client_index, round_index, subround)


def link_seed(run_seed: int, sender: str, receiver: str) -> int:
    """Fault-injection RNG seed for one directed link."""
    return mix64(run_seed, SALT_LINK, fnv1a64(sender), fnv1a64(receiver))
