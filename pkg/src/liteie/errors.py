"""Exception hierarchy shared by all liteie modules."""


class LiteIEError(Exception):
    """Base class for every error raised by this package."""


class NotFound(LiteIEError, FileNotFoundError):
    pass


class DecodeError(LiteIEError, ValueError):
    pass


class IoError(LiteIEError, OSError):
    pass


class InvalidArgument(LiteIEError, ValueError):
    pass


class ShapeError(LiteIEError, ValueError):
    pass


class FormatError(LiteIEError, ValueError):
    """Weights file is malformed (bad magic, truncated, inconsistent header)."""


class DegenerateInput(LiteIEError, ValueError):
    pass


class DatasetError(LiteIEError):
    pass


class DivergenceError(LiteIEError, FloatingPointError):
    """Training produced a non-finite loss.

    The step index at which it happened is kept in ``step``.
    """

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step
