"""Differentiable shape primitives, sub-pixel rasterization and adjoint shape optimization."""
from .errors import ConfigError, ContractError, NumericError, ShapeGradError, ValidationError
from .grid import GridSpec, MaterialGrid
from .nonlin import Nonlinearity
from .tape import DesignVector

__all__ = ["ConfigError", "ContractError", "NumericError", "ShapeGradError", "ValidationError",
           "GridSpec", "MaterialGrid", "Nonlinearity", "DesignVector"]
__version__ = "0.1.0"
