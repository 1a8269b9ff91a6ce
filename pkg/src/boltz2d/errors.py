"""Exception hierarchy shared by the library and the CLI exit codes."""


class Boltz2dError(Exception):
    """Base class for all package errors."""


class ConfigError(Boltz2dError, ValueError):
    """A parameter set violates an admissibility constraint (CLI exit code 2)."""


class DomainError(Boltz2dError, ValueError):
    """A function was evaluated outside its domain."""


class NumericError(Boltz2dError, ArithmeticError):
    """Quadrature non-convergence or floating overflow (CLI exit code 3)."""
