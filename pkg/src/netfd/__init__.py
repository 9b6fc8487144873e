"""Superoperator thermo field dynamics on truncated Fock and Liouville spaces."""

from .errors import BracketError, ConfigurationError, IntegrationError, SingularityError
from .liouville import BOSON, FERMION, ModeSpec, build_basis

__all__ = [
    "BOSON",
    "FERMION",
    "BracketError",
    "ConfigurationError",
    "IntegrationError",
    "ModeSpec",
    "SingularityError",
    "build_basis",
]
__version__ = "0.1.0"
