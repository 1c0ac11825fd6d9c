"""Exception hierarchy shared by the simulation and analysis modules."""


class BranchingError(Exception):
    """Base class for every error raised by branching_fractals."""


class DimensionMismatchError(BranchingError, ValueError):
    """Vectors indexed by different color alphabets were combined."""


class InvalidMeasureError(BranchingError, ValueError):
    """A vector violates the invariants required by an operation."""


class NumericGuardError(BranchingError, ArithmeticError):
    """A size or overflow guard refused the computation."""


class ConfigError(BranchingError):
    """An experiment configuration could not be parsed or validated.

    ``violations`` holds ``(field, message)`` pairs, one per problem found.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        text = "; ".join(f"{field}: {message}" for field, message in self.violations)
        super().__init__(text or "invalid configuration")


class DomainError(BranchingError, ValueError):
    """An argument lies outside the domain of the function it is passed to."""
