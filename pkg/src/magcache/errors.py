"""Exception hierarchy.

Data errors (bad trace, curve, or image input) map to CLI exit code 2;
configuration errors map to exit code 1.
"""


class MagCacheError(Exception):
    """Base class for every error raised by this package."""


class DataError(MagCacheError):
    """Input data is malformed or violates an invariant."""


class ConfigError(MagCacheError):
    """A configuration document or parameter is invalid."""


class TraceFormatError(DataError):
    pass


class BadMagic(TraceFormatError):
    pass


class UnsupportedVersion(TraceFormatError):
    pass


class UnsupportedDtype(TraceFormatError):
    pass


class Truncated(TraceFormatError):
    pass


class TrailingData(TraceFormatError):
    pass


class NonFinite(TraceFormatError):
    def __init__(self, message: str, index: tuple[int, ...] | None = None):
        super().__init__(message)
        self.index = index


class TraceWriteError(MagCacheError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at byte {position})")
        self.position = position


class DegenerateStep(DataError):
    def __init__(self, step: int, what: str = "predecessor"):
        super().__init__(f"step {step}: every token has a {what} norm below threshold")
        self.step = step


class MalformedCurve(DataError):
    pass


class MalformedDocument(DataError):
    """A schedule or report JSON document is malformed."""


class CurveMismatch(DataError):
    pass


class ProtocolViolation(MagCacheError):
    """The online controller was driven out of order."""


class IndexOutOfRange(MagCacheError, IndexError):
    pass


class InvariantError(MagCacheError):
    """An internal consistency check failed."""


class ImageTooSmall(DataError, ValueError):
    """Image is smaller than the SSIM window."""
