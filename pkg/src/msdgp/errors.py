"""Exception types shared across the package."""


class MsdgpError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(MsdgpError, ValueError):
    """A Cholesky factorization hit a non-positive pivot."""


class IndexOutOfRange(MsdgpError, IndexError):
    pass


class InvalidConfig(MsdgpError, ValueError):
    pass


class InvalidSpec(MsdgpError, ValueError):
    pass


class InsufficientData(InvalidSpec):
    pass


class EmptyTrainSplit(MsdgpError, ValueError):
    pass


class DivergenceDetected(MsdgpError, FloatingPointError):
    """Training produced a non-finite objective."""


class ShapeMismatch(MsdgpError, ValueError):
    pass


class NonPositiveF0(MsdgpError, ValueError):
    pass


class WrongModelKind(MsdgpError, TypeError):
    pass
