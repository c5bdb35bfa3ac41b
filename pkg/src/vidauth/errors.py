"""Exception types raised across the package."""


class VidAuthError(Exception):
    """Base class for all package errors."""


class RealHasNoProgress(VidAuthError, ValueError):
    pass


class UnknownStep(VidAuthError, ValueError):
    pass


class ParseFailure(VidAuthError, ValueError):
    pass


class TooShort(VidAuthError, ValueError):
    pass


class InvalidWindow(VidAuthError, ValueError):
    pass


class MissingManipulatedGroup(VidAuthError, ValueError):
    pass


class EmptyBatch(VidAuthError, ValueError):
    pass


class LengthMismatch(VidAuthError, ValueError):
    pass


class SupportMismatch(VidAuthError, ValueError):
    pass


class TooFewFrames(VidAuthError, ValueError):
    pass


class ShapeMismatch(VidAuthError, ValueError):
    pass


class UnpairedSample(VidAuthError, ValueError):
    pass


class EmptyVideo(VidAuthError, ValueError):
    pass


class EmptyPairs(VidAuthError, ValueError):
    pass


class EmptySplit(VidAuthError, ValueError):
    pass


class ConfigError(VidAuthError, ValueError):
    pass


class VersionMismatch(VidAuthError):
    pass


class DigestMismatch(VidAuthError):
    pass


class IOFailure(VidAuthError, OSError):
    pass


class MalformedRecord(VidAuthError, ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
