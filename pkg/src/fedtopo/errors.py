"""Exception taxonomy shared across the package.

Every error raised on purpose derives from FedTopoError so callers can
distinguish domain failures from genuine bugs.
"""


class FedTopoError(Exception):
    """Base class for all deliberate failures."""


class ConfigError(FedTopoError):
    """A spec, manifest, or config value is malformed or inconsistent."""


class ShapeError(FedTopoError):
    """Tensor shapes or model fingerprints do not line up."""


class EmptyPartitionError(FedTopoError):
    """A partition scheme produced (or was asked to produce) an empty share."""


class InsufficientClientsError(FedTopoError):
    """Fewer eligible clients than the strategy minimum."""


class EmptyAggregationError(FedTopoError):
    """Aggregation was invoked with no results."""


class TopologyError(FedTopoError):
    """A topology plan is invalid or was queried inconsistently."""


class RingCollapsedError(TopologyError):
    """No live successor exists anywhere on the ring."""


class ProtocolError(FedTopoError):
    """A wire message is malformed: unknown type, missing fields, bad values."""


class FrameTooLargeError(ProtocolError):
    """Encoded frame body exceeds the 32-bit length-prefix budget."""


class IncompleteFrameError(ProtocolError):
    """Byte buffer ends before the announced frame length."""


class ChannelClosed(FedTopoError):
    """The peer or the transport shut down while a node was waiting."""


class StartupFailureError(FedTopoError):
    """Too few clients joined within the join window."""


class RoundAbortedError(FedTopoError):
    """A round could not reach quorum even after the retry."""


class NotFoundError(FedTopoError):
    """A run, artifact, or record does not exist in the repository."""


class InvalidRecordError(FedTopoError):
    """A metric record violates the schema (bad scope, non-finite value)."""
