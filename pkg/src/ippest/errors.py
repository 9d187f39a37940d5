"""Exception hierarchy.

Every error carries a ``kind`` (the class name) so that study reports and the
CLI can tally and print failures without string matching.
"""


class IppestError(Exception):
    """Base class for all package errors."""

    @property
    def kind(self) -> str:
        return type(self).__name__


class ConfigError(IppestError, ValueError):
    pass


class InputError(IppestError):
    """Problems reading or parsing event files."""


class ParseError(InputError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnsortedEvents(InputError, ValueError):
    pass


class EstimationError(IppestError, ArithmeticError):
    """Raised when an estimator cannot be evaluated at the given data."""


class NonPositiveIntensity(EstimationError):
    pass


class DomainError(EstimationError):
    pass


class EnvelopeError(EstimationError):
    pass


class NonConvergence(EstimationError):
    pass


class SingularFisher(EstimationError):
    pass


class SingularJacobian(EstimationError):
    pass


class DegenerateMoments(EstimationError):
    pass


class OutOfRange(EstimationError):
    pass


class NoSolution(EstimationError):
    pass


class DeltaOutOfRange(EstimationError):
    pass


class TooFewSamples(EstimationError):
    pass


class DimensionMismatch(IppestError, ValueError):
    pass


class EmptySample(EstimationError):
    """No paths to estimate from."""


class StudyAborted(EstimationError):
    """More than half of the replications of a study failed."""
