"""Exception types shared across the package."""


class MergeMixError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(MergeMixError):
    """Invalid argument, configuration, or schema."""


class FormatError(ValidationError):
    """Malformed container file."""


class EvaluatorError(MergeMixError):
    """An evaluation could not produce a score."""


class ExternalEvaluatorError(EvaluatorError):
    """An external evaluator subprocess failed or broke protocol."""
