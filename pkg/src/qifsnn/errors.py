"""Exception hierarchy shared across the package."""


class QifSnnError(Exception):
    """Base class for all package errors."""


class InvalidParams(QifSnnError, ValueError):
    pass


class NegativeDiscriminant(InvalidParams):
    """The root quadratic has complex roots, so the factored recurrence is undefined."""


class ShapeMismatch(QifSnnError, ValueError):
    pass


class NonFiniteValue(QifSnnError, ArithmeticError):
    pass


class NumericalWarning(RuntimeWarning):
    """Issued when a numerical quantity had to be clamped (e.g. a negative variance)."""


class IncompleteRecord(QifSnnError, ValueError):
    pass


class MissingRunningStats(QifSnnError, ValueError):
    pass


class InvalidRate(QifSnnError, ValueError):
    pass


class UnsupportedLayer(QifSnnError, TypeError):
    pass


class IndexOutOfRange(QifSnnError, IndexError):
    pass


class MalformedHeader(QifSnnError, ValueError):
    pass


class TruncatedData(QifSnnError, ValueError):
    pass


class ConfigError(QifSnnError, ValueError):
    pass
