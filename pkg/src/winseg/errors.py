"""Exception types shared across the package."""


class WinsegError(Exception):
    """Base class for all package errors."""


class ContractError(WinsegError):
    """An input violated a documented precondition."""


class SlotError(WinsegError):
    """A prompt pattern is missing (or repeats) its substitution slot."""


class TruncationError(WinsegError):
    """A prompt does not fit the encoder's context length."""


class EncoderError(WinsegError):
    """Failure inside an encoder forward pass."""


class ConfigError(WinsegError):
    """Inconsistent or invalid configuration."""


class ManifestError(WinsegError):
    """A dataset tree does not match the expected layout."""


class CoverageError(WinsegError):
    """A spatial position is not covered by any window or tile."""


class DegenerateInputError(WinsegError):
    """A metric was asked to evaluate an input it is undefined on."""
