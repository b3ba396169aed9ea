"""Friction-threshold location and gamma-sweep diagrams.

Thresholds are defined operationally as root-count change points of the
reduced scalar field and refined by bisection; the scalar saddle-node
values themselves come from sign changes of the field evaluated at its own
critical points, which is exact up to the bisection/polish tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .equilibria import (
    ClusterSpec,
    StationaryPoint,
    UnsupportedCaseError,
    _group_crit,
    _group_field,
    _group_gamma_max,
    solve_homogeneous,
    solve_two_cluster,
    solve_two_seller,
)
from .model import MarketParams

__all__ = [
    "Threshold",
    "BranchPoint",
    "BifurcationDiagram",
    "UnimodalRegime",
    "NonMonotoneRegime",
    "critical_gamma_two_seller",
    "cluster_A",
    "two_cluster_thresholds",
    "make_gamma_grid",
    "sweep",
]

#: refinement width for root-count change points located by the sweep
THRESHOLD_TOL = 1e-10

#: scalar roots closer than this trigger extra sweep grid points
NEAR_TANGENCY_GAP = 1e-6

REGIMES = ("homogeneous", "two_seller", "two_cluster")


@dataclass(frozen=True)
class Threshold:
    value: float
    kind: str  # "saddle_node" | "symmetry_breaking"


@dataclass(frozen=True)
class BranchPoint:
    branch: str
    delta: float
    stability: str


@dataclass
class BifurcationDiagram:
    """Per-friction equilibrium branches plus the located critical values.
    ``regime_string`` lists the root counts of the intervals between
    consecutive thresholds, e.g. ``"3,1,3,1"``."""

    regime: str
    gammas: np.ndarray
    points: list[list[BranchPoint]]
    thresholds: list[Threshold]
    regime_string: str

    def counts(self) -> list[int]:
        return [len(row) for row in self.points]


@dataclass(frozen=True)
class UnimodalRegime:
    """Single saddle-node threshold: three roots below, one above."""

    gamma_star: float


@dataclass(frozen=True)
class NonMonotoneRegime:
    """Root count 3,1,3,1 across the three thresholds in increasing order."""

    gamma1: float
    gamma2: float
    gamma3: float

    @property
    def thresholds(self) -> tuple[float, float, float]:
        return (self.gamma1, self.gamma2, self.gamma3)


def _crit_value(gamma, a1, a2, k, nk, which):
    """Reduced field evaluated at its own critical point d- or d+."""
    crit = _group_crit(gamma, a1, a2, k, nk)
    d = crit[1] if which > 0 else crit[0]
    return _group_field(gamma, a1, a2, k, nk, d), d


def _refine_crit_zero(a1, a2, k, nk, which, lo, hi):
    """Locate the zero of gamma -> G(d_{which}(gamma)) in (lo, hi) by
    bisection, then polish with the envelope derivative dG/dgamma = -d."""
    flo = _crit_value(lo, a1, a2, k, nk, which)[0]
    fhi = _crit_value(hi, a1, a2, k, nk, which)[0]
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if (flo > 0) == (fhi > 0):
        raise RuntimeError(
            f"threshold bracket failed on ({lo:.3g}, {hi:.3g}): "
            f"endpoint values {flo:.3g}, {fhi:.3g}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = _crit_value(mid, a1, a2, k, nk, which)[0]
        if fm == 0.0:
            return mid
        if (fm > 0) == (flo > 0):
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13 * max(1.0, hi):
            break
    g = 0.5 * (lo + hi)
    for _ in range(3):
        v, d = _crit_value(g, a1, a2, k, nk, which)
        if abs(d) < 1e-6:
            break
        g_new = g + v / d
        if not (lo - (hi - lo) <= g_new <= hi + (hi - lo)):
            break
        g = g_new
    return g


def critical_gamma_two_seller(a1: float, a2: float) -> float:
    """The two-seller saddle-node friction: the unique zero of
    ``gamma -> G(d+(gamma))`` on ``(0, (a1+a2)/4)``.  The map is decreasing
    with a positive limit ``a1`` at zero friction and the negative value
    ``(a1-a2)/2`` at the right endpoint, so the bracket is guaranteed.
    Requires ``a1 < a2`` strictly (the equal case is the symmetric
    pitchfork at ``a/2``, handled by the homogeneous solver)."""
    if not (0 < a1 < a2 and math.isfinite(a2)):
        raise ValueError(f"requires 0 < a1 < a2 strictly, got ({a1!r}, {a2!r})")
    s = (a1 + a2) / 4.0
    return _refine_crit_zero(a1, a2, 1, 1, +1, s * 1e-12, s * (1 - 1e-12))


def cluster_A(c: ClusterSpec) -> float:
    """Sign criterion separating the monotone and non-monotone friction
    regimes of a two-cluster market."""
    k, nk = c.k, c.n - c.k
    half_log = 0.5 * math.log(nk / k)
    return nk * c.a_low * (1.0 - half_log) - k * c.a_high * (1.0 + half_log)


def two_cluster_thresholds(c: ClusterSpec) -> UnimodalRegime | NonMonotoneRegime:
    """Saddle-node friction values of the two-cluster reduction.

    With the low cluster in the majority (``k > n-k``) and a positive sign
    criterion the count is non-monotone in friction: the map
    ``gamma -> G(d+)`` falls below zero before ``gamma_split`` (where d+
    crosses zero) and recovers above it, while ``gamma -> G(d-)`` crosses
    zero once, giving three thresholds and root counts 3,1,3,1.  Otherwise
    there is a single saddle-node value as in the two-seller market.
    """
    if not c.a_low < c.a_high:
        raise UnsupportedCaseError(
            "two_cluster_thresholds requires a_low < a_high strictly; equal "
            "attractiveness pins a root at zero displacement and is covered "
            "by solve_homogeneous")
    a1, a2, k, nk = c.a_low, c.a_high, c.k, c.n - c.k
    gmax = _group_gamma_max(a1, a2, k, nk)
    gsplit = (nk * a1 + k * a2) / c.n ** 2
    lo = gmax * 1e-12
    hi = gmax * (1 - 1e-12)

    if k > nk and cluster_A(c) > 0:
        g1 = _refine_crit_zero(a1, a2, k, nk, +1, lo, gsplit)
        g2 = _refine_crit_zero(a1, a2, k, nk, +1, gsplit, hi)
        g3 = _refine_crit_zero(a1, a2, k, nk, -1, lo, hi)
        t1, t2, t3 = sorted((g1, g2, g3))
        return NonMonotoneRegime(t1, t2, t3)

    # single threshold: G(d+) crosses zero exactly once
    hi_u = min(gsplit, hi) if k >= nk else hi
    return UnimodalRegime(_refine_crit_zero(a1, a2, k, nk, +1, lo, hi_u))


def make_gamma_grid(lo: float, hi: float, count: int, spacing: str = "geometric"
                    ) -> np.ndarray:
    """Friction grid for sweeps.  Geometric by default: thresholds can sit
    close to zero relative to the interval's right endpoint."""
    if not (0 < lo < hi and math.isfinite(hi)):
        raise ValueError(f"need 0 < lo < hi, got ({lo!r}, {hi!r})")
    if count < 2:
        raise ValueError("grid needs at least 2 points")
    if spacing == "geometric":
        return np.geomspace(lo, hi, count)
    if spacing == "linear":
        return np.linspace(lo, hi, count)
    raise ValueError(f"spacing must be 'geometric' or 'linear', got {spacing!r}")


def _sweep_solver(regime, params: MarketParams | None, cluster: ClusterSpec | None):
    if regime == "homogeneous":
        if params is None or not params.homogeneous:
            raise ValueError("homogeneous sweep needs homogeneous MarketParams")
        a, n = params.attractiveness[0], params.n

        def solve(g) -> list[StationaryPoint]:
            return solve_homogeneous(MarketParams(g, (a,) * n)).points

    elif regime == "two_seller":
        if params is None or params.n != 2:
            raise ValueError("two_seller sweep needs two-seller MarketParams")
        a_pair = params.attractiveness

        def solve(g) -> list[StationaryPoint]:
            return solve_two_seller(MarketParams(g, a_pair))

    elif regime == "two_cluster":
        if cluster is None:
            raise ValueError("two_cluster sweep needs a ClusterSpec")

        def solve(g) -> list[StationaryPoint]:
            return solve_two_cluster(cluster, g)

    else:
        raise ValueError(f"regime must be one of {REGIMES}, got {regime!r}")
    return solve


def _threshold_kind(regime, params: MarketParams | None) -> str:
    if regime == "homogeneous":
        return "symmetry_breaking"
    if regime == "two_seller" and params is not None and params.homogeneous:
        return "symmetry_breaking"
    return "saddle_node"


def sweep(gammas, regime: str, params: MarketParams | None = None,
          cluster: ClusterSpec | None = None) -> BifurcationDiagram:
    """Solve the chosen regime on a friction grid, refine every root-count
    change point to ``THRESHOLD_TOL`` by bisection, and assemble the branch
    diagram.  Grid points whose scalar roots nearly collide get midpoint
    refinement neighbors, since saddle-nodes compress root gaps."""
    grid = np.asarray(gammas, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("gamma grid needs at least 2 points")
    if np.any(np.diff(grid) <= 0) or grid[0] <= 0:
        raise ValueError("gamma grid must be positive and strictly increasing")
    solve = _sweep_solver(regime, params, cluster)

    solved: dict[float, list[StationaryPoint]] = {float(g): solve(float(g)) for g in grid}

    # one refinement pass around near-tangent root configurations
    ordered = sorted(solved)
    extra = []
    for idx, g in enumerate(ordered):
        deltas = sorted(pt.delta for pt in solved[g] if pt.delta is not None)
        gaps = [b - a for a, b in zip(deltas, deltas[1:])]
        if gaps and min(gaps) < NEAR_TANGENCY_GAP:
            if idx > 0:
                extra.append(0.5 * (ordered[idx - 1] + g))
            if idx + 1 < len(ordered):
                extra.append(0.5 * (g + ordered[idx + 1]))
    for g in extra:
        solved.setdefault(float(g), solve(float(g)))

    ordered = sorted(solved)
    counts = {g: len(solved[g]) for g in ordered}

    thresholds = []
    kind = _threshold_kind(regime, params)
    for g0, g1 in zip(ordered, ordered[1:]):
        if counts[g0] == counts[g1]:
            continue
        lo, hi = g0, g1
        c_lo = counts[g0]
        while hi - lo > THRESHOLD_TOL:
            mid = 0.5 * (lo + hi)
            if len(solve(mid)) == c_lo:
                lo = mid
            else:
                hi = mid
        thresholds.append(Threshold(value=0.5 * (lo + hi), kind=kind))
    thresholds.sort(key=lambda t: t.value)

    # count per inter-threshold segment, from any grid point strictly inside
    bounds = [ordered[0] - 1.0] + [t.value for t in thresholds] + [ordered[-1] + 1.0]
    segment_counts = []
    for b0, b1 in zip(bounds, bounds[1:]):
        inside = [counts[g] for g in ordered if b0 < g < b1]
        if inside:
            segment_counts.append(inside[0])
    regime_string = ",".join(str(c) for c in segment_counts)

    rows = []
    for g in ordered:
        pts = solved[g]
        if regime == "homogeneous":
            row = [BranchPoint(pt.branch, float(pt.delta), pt.stability) for pt in pts]
        else:
            row = [BranchPoint(f"r{i}", float(pt.delta), pt.stability)
                   for i, pt in enumerate(sorted(pts, key=lambda q: q.delta))]
        rows.append(row)

    return BifurcationDiagram(regime=regime, gammas=np.array(ordered),
                              points=rows, thresholds=thresholds,
                              regime_string=regime_string)
