"""Exception hierarchy; each class maps to one CLI exit code."""


class MhdLabError(Exception):
    exit_code = 1


class ConfigError(MhdLabError, ValueError):
    """Invalid grid sizes, recipe parameters or run configuration."""

    exit_code = 2


class NumericsError(MhdLabError, ArithmeticError):
    exit_code = 3


class JacobianFloorError(NumericsError):
    """The flow map is (nearly) degenerate: min J fell below the floor."""


class CFLError(NumericsError):
    pass


class NonFiniteError(NumericsError):
    pass


class ConvergenceError(NumericsError):
    """An iterative construction did not reach its tolerance."""


class VerificationError(MhdLabError):
    exit_code = 4


class PersistenceError(MhdLabError, OSError):
    exit_code = 5
