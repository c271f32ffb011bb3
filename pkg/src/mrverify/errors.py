"""Exception types raised across the package."""

from __future__ import annotations


class MRVerifyError(Exception):
    """Base class for every error raised by mrverify."""


# imaging
class InvalidRaster(MRVerifyError, ValueError):
    pass


class RegionOutOfBounds(MRVerifyError, ValueError):
    pass


class InvalidAlpha(MRVerifyError, ValueError):
    pass


class CorruptStream(MRVerifyError, ValueError):
    pass


# geometry
class DegenerateConfiguration(MRVerifyError, ValueError):
    pass


class SingularHomography(MRVerifyError, ValueError):
    pass


class PointAtInfinity(MRVerifyError, ValueError):
    pass


# motion
class InvalidDistance(MRVerifyError, ValueError):
    pass


class NotAwaiting(MRVerifyError, RuntimeError):
    pass


# segmentation
class EmptyReferenceMask(MRVerifyError, ValueError):
    pass


class UnknownFrame(MRVerifyError, KeyError):
    pass


class SegmenterFailure(MRVerifyError, RuntimeError):
    pass


# verification
class DimensionMismatch(MRVerifyError, ValueError):
    pass


class EmptyUnion(MRVerifyError, ValueError):
    pass


class FrameTooSmall(MRVerifyError, ValueError):
    pass


class ZeroVariance(MRVerifyError, ValueError):
    pass


class ZeroVector(MRVerifyError, ValueError):
    pass


# dataset
class InstanceNotInImage(MRVerifyError, ValueError):
    pass


class UnshiftableInstance(MRVerifyError, ValueError):
    pass


class InsufficientSources(MRVerifyError, ValueError):
    pass


class ManifestCorrupt(MRVerifyError, ValueError):
    pass


class MissingFile(MRVerifyError, FileNotFoundError):
    pass


class ChecksumMismatch(MRVerifyError, ValueError):
    pass


# metrics
class LengthMismatch(MRVerifyError, ValueError):
    pass


class EmptyInput(MRVerifyError, ValueError):
    pass


class UndefinedRate(MRVerifyError, ZeroDivisionError):
    def __init__(self, rate: str):
        super().__init__(f"{rate} is undefined: zero denominator")
        self.rate = rate


class TooFewPoints(MRVerifyError, ValueError):
    pass


# protocol
class ProtocolError(MRVerifyError):
    """Malformed bytes on the wire.

    ``length`` is the payload length from a header that parsed far enough to
    have one. ``fatal`` is set when the reader lost message boundaries and
    the stream cannot be resynchronized.
    """

    fatal = False

    def __init__(self, message: str, length: int | None = None, fatal: bool | None = None):
        super().__init__(message)
        self.length = length
        if fatal is not None:
            self.fatal = fatal


class BadMagic(ProtocolError):
    fatal = True


class UnsupportedVersion(ProtocolError):
    pass


class UnknownType(ProtocolError):
    pass


class TruncatedPayload(ProtocolError):
    pass


class MalformedPayload(ProtocolError):
    pass


class ConnectionLost(MRVerifyError, ConnectionError):
    def __init__(self, message: str, log=None):
        super().__init__(message)
        self.log = log


class Timeout(MRVerifyError, TimeoutError):
    def __init__(self, message: str, log=None):
        super().__init__(message)
        self.log = log


class ServerError(MRVerifyError):
    """The server answered with an Error message."""

    def __init__(self, code: int, message: str):
        super().__init__(f"server error {code}: {message}")
        self.code = code
        self.message = message


# cli / config
class ConfigError(MRVerifyError, ValueError):
    pass
