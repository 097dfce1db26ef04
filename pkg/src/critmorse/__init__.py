"""Index constancy and critical groups of sampled potentials on regular grids."""

__version__ = "0.1.0"

from .symfield import GridDomain, ScalarField, SymMatrixField, VectorField, gradient, hessian, load_field, save_field
from .cubhom import CubicalComplex, CubicalPair, HomologyResult, homology, relative_homology
from .critgroups import critical_groups, find_critical_points
from .gallery import GALLERY, get_entry

__all__ = [
    "GridDomain", "ScalarField", "VectorField", "SymMatrixField", "gradient", "hessian",
    "load_field", "save_field", "CubicalComplex", "CubicalPair", "HomologyResult", "homology",
    "relative_homology", "critical_groups", "find_critical_points", "GALLERY", "get_entry",
]
