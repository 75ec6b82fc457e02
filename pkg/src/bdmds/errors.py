"""Exception hierarchy shared by every stage of the pipeline."""


class BdmdsError(Exception):
    """Base class for all package errors."""


class DomainError(BdmdsError, ValueError):
    """A feature or physical quantity is outside its admissible range."""

    def __init__(self, field: str, value, message: str = ""):
        self.field = field
        self.value = value
        super().__init__(f"{field}={value!r}: {message}" if message else f"{field}={value!r} out of range")


class ParameterError(BdmdsError, ValueError):
    """A configuration or call argument is invalid."""


class DivergenceError(BdmdsError, RuntimeError):
    """An aging test failed to reach its end-of-test threshold."""


class TrainingError(BdmdsError, RuntimeError):
    def __init__(self, epoch: int, message: str):
        self.epoch = epoch
        super().__init__(f"epoch {epoch}: {message}")


class StateError(BdmdsError, RuntimeError):
    """An object was used before it reached the required state."""


class InfeasibleError(BdmdsError):
    """The scheduling problem has no feasible solution."""

    def __init__(self, message: str, report: dict | None = None):
        self.report = report or {}
        super().__init__(message)


class SolverTimeout(BdmdsError):
    """Time budget exhausted; ``incumbent`` holds the best solution found, if any."""

    def __init__(self, message: str, incumbent=None):
        self.incumbent = incumbent
        super().__init__(message)
