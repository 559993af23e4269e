"""Finsler/Riemannian geodesic toolkit.

Geodesics, Jacobi frames, conjugate/focal points, Morse indices by two
independent routes, bifurcation scans of one-parameter metric families,
Zermelo navigation, and Fermat metrics of stationary spacetimes.
"""

from .errors import ToolkitError, ConfigError, NumericalError
from .metric import (
    MetricField,
    PhaseState,
    euclidean,
    sphere_stereo,
    riemannian_expr,
    randers_expr,
    quadratic_expr,
    from_callables,
)
from .geoflow import (
    GeodesicPath,
    BoundaryData,
    integrate_geodesic,
    exp_map,
    connect,
    orthogonal_initial,
)
from .jacobi import jacobi_frame, expmap_jacobian, conjugate_scan, focal_scan
from .morse import index_by_counting, index_spectral, cross_check
from .bifurc import (
    FamilySpec,
    InitialStateBranch,
    ConnectBranch,
    sweep_family,
    detect_bifurcation,
    find_branches,
    classify_alternative,
)
from .nav import (
    ZermeloData,
    StationaryData,
    zermelo_to_randers,
    travel_time,
    fermat_metric,
    lift_lightlike,
    grid_travel_time,
)

__version__ = "0.1.0"

__all__ = [
    "ToolkitError", "ConfigError", "NumericalError",
    "MetricField", "PhaseState",
    "euclidean", "sphere_stereo", "riemannian_expr", "randers_expr",
    "quadratic_expr", "from_callables",
    "GeodesicPath", "BoundaryData", "integrate_geodesic", "exp_map",
    "connect", "orthogonal_initial",
    "jacobi_frame", "expmap_jacobian", "conjugate_scan", "focal_scan",
    "index_by_counting", "index_spectral", "cross_check",
    "FamilySpec", "InitialStateBranch", "ConnectBranch",
    "sweep_family", "detect_bifurcation", "find_branches",
    "classify_alternative",
    "ZermeloData", "StationaryData", "zermelo_to_randers", "travel_time",
    "fermat_metric", "lift_lightlike", "grid_travel_time",
    "__version__",
]
