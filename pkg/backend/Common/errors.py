# common/errors.py
# Shared exception hierarchy. exit_code is the CLI contract:
# 0 success, 1 input error, 2 numerical failure.


class SimulatorError(Exception):
    exit_code = 2


class InputError(SimulatorError, ValueError):
    """Bad case/scenario content, unknown ids, schema violations."""
    exit_code = 1


class StructuralError(InputError):
    pass


class SingularBranchError(InputError):
    pass


class IslandingError(InputError):
    pass


class DomainError(InputError):
    """Argument outside the domain of an operation (e.g. omega <= 0)."""


class UndefinedRatioError(DomainError):
    pass


class NumericalError(SimulatorError, RuntimeError):
    exit_code = 2


class DivergenceError(NumericalError):
    def __init__(self, message, mismatch=None):
        super().__init__(message)
        self.mismatch = mismatch


class SingularJacobianError(NumericalError):
    pass


class AlgebraicSolveError(NumericalError):
    def __init__(self, message, time=None, residual=None):
        super().__init__(message)
        self.time = time
        self.residual = residual


class NumericGuardError(NumericalError):
    pass


class InitializationError(NumericalError):
    def __init__(self, message, state_label=None, residual=None):
        super().__init__(message)
        self.state_label = state_label
        self.residual = residual


class NonEquilibriumError(NumericalError):
    def __init__(self, message, residual=None, state_label=None):
        super().__init__(message)
        self.residual = residual
        self.state_label = state_label


class EigenSolveError(NumericalError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class StaleMeasurementError(SimulatorError):
    """Every sensor in the COI set is stale."""
