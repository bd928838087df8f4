class HetV2VError(Exception):
    """Base class for every error raised by hetv2v."""


class ConfigurationError(HetV2VError, ValueError):
    """Invalid profile, timer, scheme or manifest field."""


class UsageError(HetV2VError, ValueError):
    """An operation was called on inputs it cannot work with."""


class CalibrationError(HetV2VError):
    """A PDR calibration level could not be reached."""

    def __init__(self, message: str, level: float = None):
        super().__init__(message)
        self.level = level


class DecodeError(HetV2VError):
    """A CIS packet or a persisted curve file violates its format."""


class DomainError(HetV2VError):
    """A capacity bound has a zero denominator."""


class EventOutOfBounds(HetV2VError):
    """
    An event was scheduled before the current simulation time.  Events
    scheduled after the horizon are silently dropped instead.
    """
