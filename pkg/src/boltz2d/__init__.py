"""Monte Carlo toolkit for the 2D homogeneous Boltzmann equation with hard
potentials and a non-cutoff power-law angular kernel."""

from .errors import Boltz2dError, ConfigError, DomainError, NumericError
from .kernel import KernelParams
from .mollifier import MollifierParams

__version__ = "0.1.0"

__all__ = ["Boltz2dError", "ConfigError", "DomainError", "NumericError",
           "KernelParams", "MollifierParams", "__version__"]
