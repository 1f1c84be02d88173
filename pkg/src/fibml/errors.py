"""Exception hierarchy shared by all fibml modules.

Anything deriving from :class:`InputError` is a problem with user-supplied
data or configuration; the CLI maps those to exit code 2.
"""


class FibError(Exception):
    """Base class for all fibml errors."""


class InputError(FibError):
    """Bad input data or configuration."""


class SchemaError(InputError):
    """A required column or key is missing."""


class RowError(InputError):
    """One or more table rows failed to parse or validate.

    Attributes:
        errors: list of ``(line_number, message)`` pairs.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        lines = "; ".join(f"line {ln}: {msg}" for ln, msg in self.errors[:10])
        more = f" (+{len(self.errors) - 10} more)" if len(self.errors) > 10 else ""
        super().__init__(f"{len(self.errors)} invalid row(s): {lines}{more}")


class OutOfRangeError(InputError):
    """A query falls outside the coverage of a time series."""


class GapError(InputError):
    """A time series has a hole wider than its allowed spacing."""


class FeatureError(InputError):
    """Feature construction failed for a specific sample."""

    def __init__(self, sample, feature, reason):
        self.sample = sample
        self.feature = feature
        super().__init__(f"sample {sample}: feature {feature!r}: {reason}")


class DomainError(FibError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class ShapeError(FibError, ValueError):
    """Array shapes or column sets do not match."""


class PipelineError(FibError):
    """Pipeline steps were applied in an invalid order."""


class LeakageError(PipelineError):
    """A transformer was fit on rows that belong to the active test fold."""


class ModelFormatError(InputError):
    """A serialized model is malformed."""


class CorruptModelError(ModelFormatError):
    pass


class VersionError(ModelFormatError):
    pass


class ConvergenceError(FibError):
    """An iterative solver failed to converge or diverged."""

    def __init__(self, message, violation=None):
        self.violation = violation
        super().__init__(message)


class SizeError(FibError, ValueError):
    """Problem too large for an exhaustive method."""
