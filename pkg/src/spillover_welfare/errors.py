"""Exception hierarchy. The CLI maps these onto process exit codes."""


class SpilloverError(Exception):
    exit_code = 3


class InputError(SpilloverError, ValueError):
    """Malformed data, configuration or arguments."""

    exit_code = 2


class WelfarePreconditionError(InputError):
    """Welfare operations refused: non-positive betas, negative alpha, bad split."""


class IdentificationError(InputError):
    """Data cannot separate the social coefficient from village effects."""


class SolverError(SpilloverError, RuntimeError):
    """An iterative solver or optimizer failed to converge."""

    def __init__(self, message, last_value=None):
        super().__init__(message)
        self.last_value = last_value


class NumericalError(SpilloverError, ArithmeticError):
    """Factorization or conditioning failure."""
