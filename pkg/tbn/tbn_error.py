class TbnError(Exception):
    """base class of all errors raised by tbn. exit_code is the CLI exit status."""

    exit_code = 2


# DATA / FORMAT ERRORS


class LengthMismatch(TbnError):
    """raised when a flat value array does not match the expected element count."""

    pass


class NonFiniteValue(TbnError):
    """raised when a tensor would hold NaN or Inf."""

    def __init__(self, index: int):
        super().__init__("non-finite value at flat index {}".format(index))
        self.index = index


class IndexOutOfBounds(TbnError):
    """raised when a multi-index lies outside the tensor shape."""

    pass


class EmptyFilter(TbnError):
    """raised when a filter with zero elements is quantized."""

    pass


class InvalidCode(TbnError):
    """raised when a code lies outside {-2, -1, 1, 2}."""

    pass


class TruncatedInput(TbnError):
    """raised when a byte source ends before the announced payload."""

    def __init__(self, msg: str, offset: int = 0):
        super().__init__("{} (at byte offset {})".format(msg, offset))
        self.offset = offset


class BadMagic(TbnError):
    pass


class UnsupportedVersion(TbnError):
    pass


class CorruptLength(TbnError):
    pass


class NonPositiveAlpha(TbnError):
    pass


class NonZeroPadBits(TbnError):
    pass


class SinkWriteError(TbnError):
    pass


class ShapeMismatch(TbnError):
    pass


class CacheMismatch(TbnError):
    """raised when a backward pass receives a cache from a different forward pass."""

    pass


class BadIdxMagic(TbnError):
    pass


# USAGE / CONFIG ERRORS


class UsageError(TbnError):
    exit_code = 1


class ConfigKeyError(UsageError):
    """raised when a key is missing or invalid in the configuration."""

    pass


class MissingConfigError(UsageError):
    """raise when a config document is missing in the configuration."""

    pass


class ExperimentNotFoundError(UsageError):
    """raise when experiment selection could not be found in the configuration"""

    pass


class VerificationFailure(TbnError):
    """raised when a command's own check on its result fails."""

    exit_code = 3


class ExperimentSurrender(Exception):
    def __init__(self, payload: dict = None):
        if payload is None:
            payload = {}
        self.payload = payload
