"""Stationary-point enumeration and stability classification.

Three regimes admit exact enumeration through a scalar reduction on the
invariant budget simplex: equal attractiveness (per-size fixed-point
equation), two sellers, and two synchronized clusters.  The general
heterogeneous case is handled heuristically by multistart damped Newton on
the simplex-reduced system.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .model import (
    MarketParams,
    UnsupportedCaseError,
    as_preferences,
    jacobian,
    simplex_residual,
    vector_field,
)

__all__ = [
    "StationaryPoint",
    "HomogeneousEquilibriumSet",
    "ClusterSpec",
    "MultistartResult",
    "classify_stability",
    "contraction_certificate",
    "solve_homogeneous",
    "solve_two_seller",
    "solve_two_cluster",
    "solve_general",
]

#: eigenvalue real parts within this band of zero are classified marginal
STABILITY_TOL = 1e-8

#: residual contract for every returned stationary point (sup-norm of field)
RESIDUAL_TOL = 1e-9

#: sup-norm distance below which two candidate points are the same point
DEDUP_TOL = 1e-7

#: enumeration guard: the homogeneous census has 2^n - 1 points
MAX_ENUM_SELLERS = 25

STABLE = "stable"
UNSTABLE = "unstable"
MARGINAL = "marginal"


@dataclass
class StationaryPoint:
    """A located zero of the vector field.

    ``stability`` is classified from the full Jacobian spectrum with a
    symmetric dead band: stable below ``-STABILITY_TOL``, unstable above
    ``+STABILITY_TOL``, marginal in between (never silently rounded).
    ``cluster_stability`` carries the one-dimensional classification along
    the reduced scalar coordinate where one exists; the two can differ.
    ``delta`` is the scalar branch coordinate that produced the point.
    """

    state: np.ndarray
    residual: float
    eigenvalues: np.ndarray
    stability: str
    provenance: str
    branch: str | None = None
    delta: float | None = None
    cluster_stability: str | None = None

    @property
    def max_real_eigenvalue(self) -> float:
        return float(self.eigenvalues.real.max())


@dataclass
class HomogeneousEquilibriumSet:
    """All stationary points in the equal-attractiveness case.

    ``roots`` maps each displaced-coordinate count ``k`` to its (negative,
    positive) scalar root pair; it is empty at or above the critical
    friction ``gamma_critical = a / n`` where only the symmetric point
    remains.
    """

    gamma_critical: float
    points: list[StationaryPoint]
    roots: dict[int, tuple[float, float]] = field(default_factory=dict)

    @property
    def stable_points(self) -> list[StationaryPoint]:
        return [pt for pt in self.points if pt.stability == STABLE]


@dataclass(frozen=True)
class ClusterSpec:
    """Two synchronized seller groups: ``k`` sellers at ``a_low`` followed by
    ``n - k`` at ``a_high``; preferences equal within each group."""

    n: int
    k: int
    a_low: float
    a_high: float

    def __post_init__(self):
        if self.n < 2 or not 1 <= self.k <= self.n - 1:
            raise ValueError(f"need n >= 2 and 1 <= k <= n-1, got n={self.n}, k={self.k}")
        if not (0 < self.a_low <= self.a_high and math.isfinite(self.a_high)):
            raise ValueError("need 0 < a_low <= a_high, finite")

    def params(self, gamma: float) -> MarketParams:
        return MarketParams(gamma, (self.a_low,) * self.k + (self.a_high,) * (self.n - self.k))


@dataclass
class MultistartResult:
    """Outcome of the heuristic multistart search: deduplicated points plus
    an account of how many starts converged."""

    points: list[StationaryPoint]
    n_starts: int
    n_converged: int
    n_failed: int


def classify_stability(p: MarketParams, s, residual_tol: float = 1e-8
                       ) -> tuple[np.ndarray, str]:
    """Dense Jacobian spectrum at an (approximately) stationary state and the
    resulting class.  Every equilibrium carries one eigenvalue near ``-gamma``
    transverse to the budget simplex; classification uses the full spectrum.
    """
    state = as_preferences(p, s)
    res = float(np.max(np.abs(vector_field(p, state))))
    if res >= residual_tol:
        raise ValueError(
            f"state is not stationary: residual {res:.3g} >= {residual_tol:.3g}")
    eig = np.linalg.eigvals(jacobian(p, state))
    order = np.lexsort((eig.imag, eig.real))[::-1]
    eig = eig[order]
    top = float(eig.real.max())
    if top < -STABILITY_TOL:
        return eig, STABLE
    if top > STABILITY_TOL:
        return eig, UNSTABLE
    return eig, MARGINAL


def contraction_certificate(p: MarketParams) -> bool:
    """Sufficient condition for a unique globally attracting equilibrium:
    friction strictly above half the largest attractiveness."""
    return p.gamma > p.attractiveness[-1] / 2.0


def _make_point(p, state, provenance, branch=None, delta=None,
                cluster_stability=None) -> StationaryPoint:
    state = np.asarray(state, dtype=float)
    residual = float(np.max(np.abs(vector_field(p, state))))
    membership = abs(simplex_residual(p, state))
    if residual > RESIDUAL_TOL or membership > RESIDUAL_TOL:
        raise RuntimeError(
            f"solver produced an out-of-contract point: residual={residual:.3g}, "
            f"simplex={membership:.3g}")
    eig, stability = classify_stability(p, state, residual_tol=10 * RESIDUAL_TOL)
    return StationaryPoint(state=state, residual=residual, eigenvalues=eig,
                           stability=stability, provenance=provenance,
                           branch=branch, delta=delta,
                           cluster_stability=cluster_stability)


# --------------------------------------------------------------------------
# homogeneous case
# --------------------------------------------------------------------------

def _gk(a, gamma, n, k, d):
    """Fixed-point map for the scalar displacement of k coordinates.
    ``expm1`` keeps full precision for roots collapsing toward zero near the
    critical friction."""
    if d >= 0:
        e = math.exp(-d)
        return (a / gamma) * (-math.expm1(-d)) / (k + (n - k) * e)
    e = math.exp(d)
    return (a / gamma) * math.expm1(d) / (k * e + (n - k))


def _gk_prime(a, gamma, n, k, d):
    if d >= 0:
        e = math.exp(-d)
        return (a / gamma) * n * e / (k + (n - k) * e) ** 2
    e = math.exp(d)
    return (a / gamma) * n * e / (k * e + (n - k)) ** 2


def _gk_root(a, gamma, n, k, sign) -> float:
    """Unique root of ``d = g_k(d)`` with the requested sign, for
    ``gamma < a/n``.  Bracketed by the map's horizontal asymptotes
    ``a/(gamma*k)`` and ``-a/(gamma*(n-k))``, bisected to 1e-13 and polished
    with one Newton step."""
    eps = 1e-12
    if sign > 0:
        lo, hi = eps, a / (gamma * k)
    else:
        lo, hi = -a / (gamma * (n - k)), -eps

    def phi(d):
        return _gk(a, gamma, n, k, d) - d

    flo = phi(lo)
    if flo <= 0 or phi(hi) >= 0:
        raise RuntimeError(f"root bracket failed for k={k}, sign={sign}")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if phi(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    d = 0.5 * (lo + hi)
    for _ in range(2):
        slope = _gk_prime(a, gamma, n, k, d) - 1.0
        if abs(slope) > 1e-12:
            d -= phi(d) / slope
    return d


def solve_homogeneous(p: MarketParams) -> HomogeneousEquilibriumSet:
    """Enumerate all stationary points when every seller has the same
    attractiveness ``a``.

    At or above the critical friction ``a/n`` only the symmetric point
    ``J_i = a/(n*gamma)`` exists.  Below it, every displaced-coordinate count
    ``k`` contributes a negative and a positive scalar root, and each root is
    materialized over all C(n-1, k) coordinate placements against the base
    coordinate, for ``2^n - 1`` points in total.  Exactly ``n`` of them are
    stable: those with ``n - 1`` equal coordinates and one larger.
    """
    if not p.homogeneous:
        raise UnsupportedCaseError("solve_homogeneous requires equal attractiveness")
    a, n, gamma = p.attractiveness[0], p.n, p.gamma
    critical = a / n

    symmetric = _make_point(p, np.full(n, a / (n * gamma)), "homogeneous",
                            branch="sym", delta=0.0)
    if gamma >= critical:
        return HomogeneousEquilibriumSet(gamma_critical=critical, points=[symmetric])

    if n > MAX_ENUM_SELLERS:
        raise UnsupportedCaseError(
            f"census would enumerate 2^{n}-1 points; n is capped at {MAX_ENUM_SELLERS}")

    roots = {k: (_gk_root(a, gamma, n, k, -1), _gk_root(a, gamma, n, k, +1))
             for k in range(1, n)}
    points = [symmetric]
    for k in range(1, n):
        for sign, root in zip(("-", "+"), roots[k]):
            for ci, comb in enumerate(itertools.combinations(range(n - 1), k)):
                deltas = np.zeros(n - 1)
                deltas[list(comb)] = root
                base = (a / gamma - deltas.sum()) / n
                state = np.concatenate([base + deltas, [base]])
                points.append(_make_point(p, state, "homogeneous",
                                          branch=f"k{k}{sign}/{ci}", delta=root))
    assert len(points) == 2 ** n - 1
    return HomogeneousEquilibriumSet(gamma_critical=critical, points=points,
                                     roots=roots)


# --------------------------------------------------------------------------
# scalar two-group reduction (two sellers and two clusters)
# --------------------------------------------------------------------------

def _group_field(gamma, a1, a2, k, nk, d):
    """Reduced field for k sellers at a1 displaced by d against n-k at a2.
    Written to stay exact both for large |d| (no overflow) and for d near
    zero with nearly equal attractiveness (no cancellation)."""
    if d >= 0:
        e = math.exp(-d)
        return -gamma * d + ((a1 - a2) - a2 * math.expm1(-d)) / (nk * e + k)
    e = math.exp(d)
    return -gamma * d + (a1 * math.expm1(d) + (a1 - a2)) / (nk + k * e)


def _group_field_prime(gamma, a1, a2, k, nk, d):
    c = nk * a1 + k * a2
    if d >= 0:
        e = math.exp(-d)
        return -gamma + c * e / (nk * e + k) ** 2
    e = math.exp(d)
    return -gamma + c * e / (nk + k * e) ** 2


def _group_gamma_max(a1, a2, k, nk):
    return (nk * a1 + k * a2) / (4.0 * k * nk)


def _group_crit(gamma, a1, a2, k, nk):
    """Critical points (d-, d+) of the reduced field, or None when the field
    is monotone (gamma at or above its maximum slope excess)."""
    c = nk * a1 + k * a2
    if gamma >= _group_gamma_max(a1, a2, k, nk):
        return None
    b = c / (k * nk * gamma)
    s = b / 2.0 - 1.0 + math.sqrt(b * (b / 4.0 - 1.0))
    base = math.log(nk / k)
    # the two bracket factors multiply to 1, so the small one is 1/s
    return (base - math.log(s), base + math.log(s))


def _bisect_scalar(f, lo, hi, flo):
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (fm > 0) == (flo > 0):
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    return 0.5 * (lo + hi)


def _group_roots(gamma, a1, a2, k, nk) -> list[tuple[float, str]]:
    """All zeros of the reduced field, ascending, tagged ``simple`` or
    ``tangent``.

    The field decreases, increases between its two critical points, then
    decreases again; each monotone piece is bisected where its endpoint
    values straddle zero.  A critical value within the tangency tolerance is
    reported as a single double root at the critical point itself, which is
    how the saddle-node threshold is represented exactly.
    """
    # every root satisfies gamma*d in (-a2/nk, a1/k)
    lo = -a2 / (gamma * nk) - 1.0
    hi = a1 / (gamma * k) + 1.0
    tangency_tol = 1e-11 * (a1 + a2)

    def f(d):
        return _group_field(gamma, a1, a2, k, nk, d)

    crit = _group_crit(gamma, a1, a2, k, nk)
    if crit is None:
        root = _polish_group_root(_bisect_scalar(f, lo, hi, f(lo)),
                                  gamma, a1, a2, k, nk)
        return [(root, "simple")]

    dm, dp = crit
    nodes = [(lo, f(lo)), (dm, f(dm)), (dp, f(dp)), (hi, f(hi))]
    roots = []
    for d, v in (nodes[1], nodes[2]):
        if abs(v) <= tangency_tol:
            roots.append((d, "tangent"))
    for (d0, v0), (d1, v1) in zip(nodes, nodes[1:]):
        if abs(v0) <= tangency_tol or abs(v1) <= tangency_tol:
            continue
        if v0 * v1 < 0:
            root = _polish_group_root(_bisect_scalar(f, d0, d1, v0),
                                      gamma, a1, a2, k, nk)
            roots.append((root, "simple"))
    roots.sort(key=lambda r: r[0])
    return roots


def _polish_group_root(d, gamma, a1, a2, k, nk):
    for _ in range(2):
        slope = _group_field_prime(gamma, a1, a2, k, nk, d)
        if abs(slope) > 1e-12:
            d -= _group_field(gamma, a1, a2, k, nk, d) / slope
    return d


def _scalar_class(slope) -> str:
    if slope < -STABILITY_TOL:
        return STABLE
    if slope > STABILITY_TOL:
        return UNSTABLE
    return MARGINAL


def _lift_two_group(p, c: ClusterSpec, d: float) -> np.ndarray:
    """Place a scalar root on the budget simplex as the full cluster state
    (low group displaced by ``d`` against the high group)."""
    k, nk = c.k, c.n - c.k
    j_high = (1.0 / p.gamma - k * d / c.a_low) / (k / c.a_low + nk / c.a_high)
    return np.concatenate([np.full(k, j_high + d), np.full(nk, j_high)])


def _solve_two_group(c: ClusterSpec, gamma: float, provenance: str
                     ) -> list[StationaryPoint]:
    p = c.params(gamma)
    k, nk = c.k, c.n - c.k
    out = []
    for idx, (root, kind) in enumerate(_group_roots(gamma, c.a_low, c.a_high, k, nk)):
        slope = 0.0 if kind == "tangent" else _group_field_prime(
            gamma, c.a_low, c.a_high, k, nk, root)
        state = _lift_two_group(p, c, root)
        out.append(_make_point(p, state, provenance, branch=f"r{idx}", delta=root,
                               cluster_stability=_scalar_class(slope)))
    return out


def solve_two_seller(p: MarketParams) -> list[StationaryPoint]:
    """All stationary points of a two-seller market, ascending in the
    preference difference.  One, two (with the tangent root marginal), or
    three roots depending on friction."""
    if p.n != 2:
        raise UnsupportedCaseError("solve_two_seller requires exactly two sellers")
    a1, a2 = p.attractiveness
    return _solve_two_group(ClusterSpec(2, 1, a1, a2), p.gamma, "two_seller")


def solve_two_cluster(c: ClusterSpec, gamma: float) -> list[StationaryPoint]:
    """Stationary cluster configurations (low group synchronized against high
    group) on the budget simplex.  ``cluster_stability`` classifies each root
    along the scalar cluster coordinate; ``stability`` uses the full
    Jacobian spectrum, and the two can disagree when symmetry breaks inside
    a group."""
    if not (math.isfinite(gamma) and gamma > 0):
        raise ValueError(f"gamma must be positive and finite, got {gamma!r}")
    return _solve_two_group(c, gamma, "two_cluster")


# --------------------------------------------------------------------------
# general case: multistart damped Newton on the simplex-reduced system
# --------------------------------------------------------------------------

def _full_state(p, x):
    """Recover the last coordinate from the budget identity."""
    j = np.empty(p.n)
    j[:-1] = x
    j[-1] = p.a[-1] * (1.0 / p.gamma - float((x / p.a[:-1]).sum()))
    return j


def _field_full(p, j):
    # softmax without the public validation; Newton iterates can wander
    w = np.exp(j - j.max())
    return -p.gamma * j + p.a * (w / w.sum())


def _newton_reduced(p, x0, max_iter=80, tol=1e-12):
    """Damped Newton on the first n-1 coordinates with the last eliminated
    through the budget identity; returns the full state or None."""
    x = np.array(x0, dtype=float)
    ratio = p.a[-1] / p.a[:-1]
    for _ in range(max_iter):
        j = _full_state(p, x)
        if not np.all(np.isfinite(j)) or np.max(np.abs(j)) > 1e8:
            return None
        fj = _field_full(p, j)
        if float(np.max(np.abs(fj))) < tol:
            return j
        m = jacobian(p, j)
        a_red = m[:-1, :-1] - np.outer(m[:-1, -1], ratio)
        try:
            step = np.linalg.solve(a_red, -fj[:-1])
        except np.linalg.LinAlgError:
            return None
        norm0 = float(np.linalg.norm(fj))
        lam = 1.0
        while lam >= 1.0 / 1024:
            x_try = x + lam * step
            j_try = _full_state(p, x_try)
            if np.all(np.isfinite(j_try)) and np.max(np.abs(j_try)) < 1e8:
                if float(np.linalg.norm(_field_full(p, j_try))) < (1 - 1e-4 * lam) * norm0:
                    break
            lam *= 0.5
        else:
            return None
        x = x + lam * step
    return None


def solve_general(p: MarketParams, starts: int, seed: int) -> MultistartResult:
    """Heuristic stationary-point search: damped Newton from ``starts``
    scrambled-Halton points in the box ``0 < J_i < a_i/gamma``, converged
    roots deduplicated at sup-distance ``DEDUP_TOL``.

    The returned list may be incomplete; it is exact on the regimes covered
    by the dedicated solvers when given enough starts.
    """
    if starts < 1:
        raise ValueError("starts must be at least 1")
    sampler = qmc.Halton(d=p.n - 1, scramble=True, seed=seed)
    upper = p.a[:-1] / p.gamma
    draws = sampler.random(starts) * upper

    solutions = []
    failed = 0
    for m in range(starts):
        j = _newton_reduced(p, draws[m])
        if j is None:
            failed += 1
        else:
            solutions.append(j)

    solutions.sort(key=lambda s: tuple(s))
    unique: list[np.ndarray] = []
    for j in solutions:
        if not any(float(np.max(np.abs(j - u))) < DEDUP_TOL for u in unique):
            unique.append(j)
    points = [_make_point(p, j, "newton") for j in unique]
    return MultistartResult(points=points, n_starts=starts,
                            n_converged=starts - failed, n_failed=failed)
