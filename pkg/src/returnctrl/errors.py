"""Exception hierarchy. The CLI maps each family to an exit code."""


class ReturnCtrlError(Exception):
    exit_code = 1


class ParameterError(ReturnCtrlError, ValueError):
    """A configuration value is out of its admissible range."""

    exit_code = 2


class ConstructionError(ReturnCtrlError):
    """The reference trajectory or one of its profiles cannot be built."""

    exit_code = 3


class GeometryError(ConstructionError):
    pass


class ConsistencyError(ConstructionError):
    pass


class CouplingDegeneracyError(ConstructionError):
    """No space-time window where the frozen coupling stays away from zero."""


class WeightConfigurationError(ConstructionError):
    pass


class ConvergenceError(ReturnCtrlError):
    exit_code = 4

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = list(history or [])


class DivergenceError(ConvergenceError):
    pass
