"""Exception types raised across the package."""


class CurvdsError(Exception):
    """Base class for all package errors."""


class DomainError(CurvdsError, ValueError):
    """Input lies outside the domain where a quantity is defined."""


class PreconditionError(CurvdsError, ValueError):
    """A documented precondition of an operation was violated."""


class DegenerateParameterError(DomainError):
    """A parametrization was queried at a degenerate point."""


class DivergenceError(CurvdsError, RuntimeError):
    """Integration produced a non-finite state."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite state at step {step}")


class TrainingError(CurvdsError, RuntimeError):
    """Optimization produced a non-finite loss."""

    def __init__(self, iteration, message=None):
        self.iteration = iteration
        super().__init__(message or f"non-finite loss at iteration {iteration}")


class SimulationError(CurvdsError, RuntimeError):
    """The arm simulator reached a non-finite state."""


class DatasetParseError(CurvdsError, ValueError):
    """A trajectory file does not conform to the CSV schema."""

    def __init__(self, path, line, message):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")
