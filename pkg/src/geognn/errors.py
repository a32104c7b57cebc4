"""Exception hierarchy shared across the toolkit.

Two broad families matter for the CLI exit codes: anything that is the
caller's fault (bad inputs, bad files, bad config) maps to exit code 2,
anything numeric that went wrong mid-computation maps to exit code 3.
"""


class GeognnError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 2


class ValidationError(GeognnError):
    """Caller violated a documented precondition or invariant."""


class ConfigError(ValidationError):
    """Run configuration is malformed (unknown key, missing section, ...)."""


class FormatError(ValidationError):
    """A file does not look like the format it claims to be."""


class CorruptionError(ValidationError):
    """A file has a valid header but inconsistent or truncated payload."""


class DegenerateInputError(ValidationError):
    """An input vector/row has (near-)zero norm where a direction is required."""


class AntipodalError(ValidationError):
    """Log map requested for a (near-)antipodal pair in strict mode."""


class RankDeficientError(ValidationError):
    """Local neighborhood matrix has rank below the requested PCA rank."""

    def __init__(self, message, achieved_rank):
        super().__init__(message)
        self.achieved_rank = achieved_rank


class SamplingExhaustedError(ValidationError):
    """Rejection sampling of negative edges failed within the attempt budget."""


class UnsupportedOpError(ValidationError):
    """The differentiation tape was asked for a primitive it does not know."""


class NumericError(GeognnError):
    """A computation produced non-finite values or otherwise failed numerically."""

    exit_code = 3
