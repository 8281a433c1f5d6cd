"""Exception hierarchy shared by all modules."""


class MocapError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(MocapError):
    pass


class DimensionMismatch(MocapError, ValueError):
    pass


class NonFinite(MocapError, FloatingPointError):
    pass


class BvhParseError(MocapError):
    """Raised for any malformed BVH document; carries the offending line."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class BvhSyntaxError(BvhParseError):
    pass


class ChannelMismatch(BvhParseError):
    pass


class EmptyMotion(BvhParseError):
    pass


class MissingHipMarker(MocapError, LookupError):
    pass


class DegenerateData(MocapError, ValueError):
    pass


class SequenceTooShort(MocapError, ValueError):
    pass


class UnknownSequenceId(MocapError, LookupError):
    pass


class UnreachableRate(MocapError, ValueError):
    pass


class BadWindow(MocapError, ValueError):
    pass


class BadProbability(MocapError, ValueError):
    pass


class NoMissingMarkers(ConfigError):
    pass


class CorruptFile(MocapError):
    pass


class VersionMismatch(MocapError):
    pass
