"""Exception hierarchy shared by all modules."""


class E1D3Error(Exception):
    """Base class for errors raised by this package."""


class ShapeMismatch(E1D3Error, ValueError):
    pass


class EmptyMask(E1D3Error, ValueError):
    pass


class DegenerateChannel(E1D3Error, ValueError):
    pass


class InvalidSpec(E1D3Error, ValueError):
    pass


class InvalidLabel(E1D3Error, ValueError):
    pass


class NonFiniteGradient(E1D3Error, FloatingPointError):
    """Raised when a gradient contains NaN/Inf; ``step`` is set by the trainer."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class WindowTooLarge(E1D3Error, ValueError):
    pass


class BadMagic(E1D3Error, ValueError):
    pass


class UnsupportedDatatype(E1D3Error, ValueError):
    pass


class TruncatedFile(E1D3Error, ValueError):
    pass


class IoFailure(E1D3Error, OSError):
    pass


class MissingModality(E1D3Error, FileNotFoundError):
    pass


class TooFewSubjects(E1D3Error, ValueError):
    pass


class CheckpointError(E1D3Error, ValueError):
    pass


class ConfigError(E1D3Error, ValueError):
    pass
