"""Shared exception types."""


class UsageError(ValueError):
    """Caller violated an operation's preconditions."""


class UndefinedRateError(UsageError):
    """A rate was requested over an empty or zero-valued denominator."""


class ValidationError(ValueError):
    """A record or event stream violates its structural invariants."""


class ConfigError(UsageError):
    """Pipeline configuration is invalid or inconsistent."""


class ManifestError(ValidationError):
    """A manifest line failed to parse or validate.

    Carries the 1-based line number of the offending line and the records
    successfully parsed before it, so callers can salvage a truncated file.
    """

    def __init__(self, message, line_number=None, records=None):
        super().__init__(message)
        self.line_number = line_number
        self.records = list(records) if records is not None else []


class GeneratorMissError(LookupError):
    """A replay-backed generator has no transcript for the requested segment."""


class BackendError(RuntimeError):
    """A remote hypothesis backend failed after exhausting its retries."""
