"""Simulation and equilibrium analysis for softmax buyer-preference market
dynamics: trajectory integration with event detection, exact equilibrium
enumeration in tractable regimes, friction-threshold location, and an
executable suite of structural checks."""

from .model import (
    DeltaState,
    MarketParams,
    SectorLabel,
    UnsupportedCaseError,
    as_preferences,
    delta_field,
    in_trapping_set,
    jacobian,
    potential,
    sector_of,
    simplex_residual,
    softmax,
    vector_field,
)
from .integrator import (
    Event,
    IntegrationOptions,
    StiffnessError,
    Trajectory,
    basin_sample,
    detect_ordering_events,
    integrate,
)
from .equilibria import (
    ClusterSpec,
    HomogeneousEquilibriumSet,
    MultistartResult,
    StationaryPoint,
    classify_stability,
    contraction_certificate,
    solve_general,
    solve_homogeneous,
    solve_two_cluster,
    solve_two_seller,
)
from .bifurcation import (
    BifurcationDiagram,
    NonMonotoneRegime,
    Threshold,
    UnimodalRegime,
    cluster_A,
    critical_gamma_two_seller,
    make_gamma_grid,
    sweep,
    two_cluster_thresholds,
)
from .verify import CheckReport, CLAIM_CHECKS, run_suite

__version__ = "0.1.0"

__all__ = [
    "MarketParams",
    "DeltaState",
    "SectorLabel",
    "UnsupportedCaseError",
    "as_preferences",
    "softmax",
    "vector_field",
    "jacobian",
    "delta_field",
    "simplex_residual",
    "potential",
    "in_trapping_set",
    "sector_of",
    "IntegrationOptions",
    "Trajectory",
    "Event",
    "StiffnessError",
    "integrate",
    "detect_ordering_events",
    "basin_sample",
    "StationaryPoint",
    "HomogeneousEquilibriumSet",
    "ClusterSpec",
    "MultistartResult",
    "solve_homogeneous",
    "solve_two_seller",
    "solve_two_cluster",
    "solve_general",
    "classify_stability",
    "contraction_certificate",
    "BifurcationDiagram",
    "Threshold",
    "UnimodalRegime",
    "NonMonotoneRegime",
    "critical_gamma_two_seller",
    "cluster_A",
    "two_cluster_thresholds",
    "make_gamma_grid",
    "sweep",
    "CheckReport",
    "CLAIM_CHECKS",
    "run_suite",
    "__version__",
]
