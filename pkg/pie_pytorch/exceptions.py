class PIError(Exception):
    """Base class for every error raised by pie_pytorch."""


class ShapeMismatchError(PIError, ValueError):
    pass


class IntervalMismatchError(PIError, ValueError):
    pass


class InvalidBoundError(PIError, ValueError):
    pass


class MissingVariableError(PIError, ValueError):
    pass


class IllPosedSystemError(PIError):
    pass


class DegreeBudgetError(PIError):
    def __init__(self, message: str, required_degree: int):
        super().__init__(f"{message} (required degree {required_degree})")
        self.required_degree = required_degree


class InfeasibleError(PIError):
    def __init__(self, message: str, status: str = "infeasible", solution=None):
        super().__init__(f"{message}: solver status {status}")
        self.status = status
        self.solution = solution


class SolverFailureError(PIError):
    def __init__(self, message: str, diagnostics: dict = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ControllerRecoveryError(PIError):
    pass


class SimulationError(PIError):
    pass


class ProblemFileError(PIError):
    def __init__(self, message: str, line: int = None):
        location = f"line {line}: " if line is not None else ""
        super().__init__(f"{location}{message}")
        self.line = line


class SdpaParseError(ProblemFileError):
    pass


class CollocationError(PIError, ValueError):
    pass
