"""Exception hierarchy shared by every module of the package."""


class DLSError(Exception):
    """Base class for all errors raised by dlspubsub."""


# label space
class TypeMismatchError(DLSError, TypeError):
    pass


class EmptyRangeError(DLSError, ValueError):
    pass


class OutOfDomainError(DLSError, ValueError):
    pass


class IndexOverflowError(DLSError, ValueError):
    pass


class MalformedLabelError(DLSError, ValueError):
    pass


class LabelSetOverflowError(DLSError):
    """A subscription expands to more labels than the configured cap."""


class SchemaError(DLSError, ValueError):
    pass


# counting Bloom filter
class DomainError(DLSError, ValueError):
    pass


# broker / overlay
class UnknownConnectionError(DLSError, KeyError):
    pass


class NonEmptyTableError(DLSError):
    pass


class TopologyError(DLSError, ValueError):
    pass


class CyclicTopologyError(TopologyError):
    pass


class ParamsMismatchError(DLSError, ValueError):
    pass


class UnknownClientError(DLSError, KeyError):
    pass


class SaturationAbort(DLSError):
    """Raised when a run that requires exact counters saw saturation/underflow."""
