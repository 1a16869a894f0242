"""Finitely ramified graph-directed fractals: models, resistance networks, harmonic
structures, spectra and overlap audits."""

__version__ = "0.1.0"

from .errors import (FrgdError, GeometryError, ModelError, ParseError, ResourceLimitError,
                     SchemaError, StructuralError, ValidationError)
from .geometry import IFSModel, Similitude, from_params
from .harmonic import (HarmonicStructure, check_homogeneous, check_regular, renorm_residual,
                       solve_harmonic)
from .modelfile import load_model, parse_model_file
from .structure import FractalModel, GraphConstruction, validate_construction

__all__ = [
    "FrgdError", "GeometryError", "ModelError", "ParseError", "ResourceLimitError",
    "SchemaError", "StructuralError", "ValidationError", "IFSModel", "Similitude",
    "from_params", "HarmonicStructure", "check_homogeneous", "check_regular",
    "renorm_residual", "solve_harmonic", "load_model", "parse_model_file", "FractalModel",
    "GraphConstruction", "validate_construction",
]
