"""Exception taxonomy shared by all spherecut modules.

Every exception carries a short machine-parsable ``code`` (its class name
without the ``Error`` suffix); the CLI prints ``error=<CODE>`` on stderr.
"""


class SpherecutError(Exception):
    """Base class for all library errors."""

    @property
    def code(self) -> str:
        name = type(self).__name__
        return name[:-5] if name.endswith("Error") else name


class ZeroVectorError(SpherecutError):
    """Normalization of a (numerically) zero vector was requested.

    Reaching this from an engine means a step size violated its admissible
    interval: valid steps keep the normalization denominator bounded away
    from zero.
    """


class DimensionMismatchError(SpherecutError):
    pass


class ProblemFileError(SpherecutError):
    """A problem JSON file failed validation; message carries field context."""


# -- partition construction -------------------------------------------------

class PartitionError(SpherecutError):
    pass


class MultipleParentsError(PartitionError):
    """An agent couples with earlier agents in a way no single parent covers."""


class DisconnectedAgentsError(PartitionError):
    """Some agent shares no index with any lower-numbered agent."""


class OrphanIndexError(PartitionError):
    """Some column index belongs to no agent (or has no home agent)."""


class OwnershipViolationError(PartitionError):
    """An entry's owner does not contain both endpoints, or the ownership
    layout is incompatible with the asynchronous engine's requirements."""


class CyclicPrecedenceError(PartitionError):
    """Defensive: the reordering partial order admitted no linear extension."""


class TooManyAgentsError(PartitionError):
    pass


class BadSigmaError(SpherecutError):
    """Step-size safety margin outside (0, 1)."""


class TooLargeError(SpherecutError):
    """Instance too large for brute-force enumeration."""


# -- engine protocol --------------------------------------------------------

class EngineProtocolError(SpherecutError):
    pass


class NotAChildError(EngineProtocolError):
    pass


class NoParentError(EngineProtocolError):
    pass


class MissingMessageError(EngineProtocolError):
    """A child sharing the index never reported its message this sweep."""


class StaleBeyondBError(EngineProtocolError):
    """A mailbox stamp older than the staleness window: scheduler bug."""


# -- image IO ----------------------------------------------------------------

class ImageError(SpherecutError):
    pass


class UnsupportedFormatError(ImageError):
    pass


class CorruptHeaderError(ImageError):
    pass


class TruncatedPixelDataError(ImageError):
    pass
