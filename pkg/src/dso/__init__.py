"""Principal eigenvalues of drift-diffusion operators and shape optimization on grids."""

from .eigen import EigenResult, optimal_drift_fixed_point, principal_eig_drift, principal_eig_selfadjoint
from .grid import Grid, Mask, full_mask, make_grid, mask_from_shape, measure
from .radial import radial_eigen
from .shape import ShapeOptConfig, joint_optimize, optimize_shape_fixed_drift

__version__ = "0.1.0"

__all__ = [
    "EigenResult",
    "Grid",
    "Mask",
    "ShapeOptConfig",
    "full_mask",
    "joint_optimize",
    "make_grid",
    "mask_from_shape",
    "measure",
    "optimal_drift_fixed_point",
    "optimize_shape_fixed_drift",
    "principal_eig_drift",
    "principal_eig_selfadjoint",
    "radial_eigen",
]
