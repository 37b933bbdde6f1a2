"""Exception types raised by the library."""


class NCAMRError(Exception):
    """Base class for all library errors."""


class InvalidRefType(NCAMRError, ValueError):
    pass


class NotRefined(NCAMRError):
    pass


class StaleMatrix(NCAMRError):
    pass


class ConsistencyLimitExceeded(NCAMRError):
    pass


class IndexOverflow(NCAMRError, OverflowError):
    """Entity index no longer fits in a signed 32-bit integer."""


class InconsistentMesh(NCAMRError):
    pass


class ConflictingConstraint(NCAMRError):
    pass


class CyclicDependency(NCAMRError):
    pass


class DegenerateElement(NCAMRError):
    pass


class DimensionMismatch(NCAMRError, ValueError):
    pass


class BCOnSlave(NCAMRError):
    pass


class NoConvergence(NCAMRError):
    pass


class UnsupportedCurve(NCAMRError, ValueError):
    pass


class DecodeError(NCAMRError):
    pass


class Deadlock(NCAMRError):
    pass


class MeshFormatError(NCAMRError):
    pass
