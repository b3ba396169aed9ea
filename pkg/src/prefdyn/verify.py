"""Executable structural checks: every desk-scale-checkable property of the
dynamics is a named, seeded, reproducible check with a pass/fail verdict and
a machine-readable report.

All randomness flows through explicit seed sequences, so two runs with the
same inputs produce byte-identical reports.  A failed check always carries
enough detail (seed, trial index, initial condition) to reproduce it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .bifurcation import (
    NonMonotoneRegime,
    UnimodalRegime,
    cluster_A,
    critical_gamma_two_seller,
    two_cluster_thresholds,
)
from .equilibria import (
    ClusterSpec,
    MARGINAL,
    STABLE,
    contraction_certificate,
    solve_homogeneous,
    solve_two_cluster,
    solve_two_seller,
)
from .integrator import IntegrationOptions, basin_sample, integrate
from .model import (
    DeltaState,
    MarketParams,
    delta_field,
    in_trapping_set,
    jacobian,
    potential,
    simplex_residual,
    vector_field,
)

__all__ = [
    "CheckReport",
    "CLAIM_CHECKS",
    "CHECKS",
    "run_suite",
    "check_simplex_decay",
    "check_gronwall_bound",
    "check_monotone_ordering",
    "check_eventual_ordering",
    "check_trapping",
    "check_cooperative_region",
    "check_convergence_census",
    "check_homogeneous_census",
    "check_contraction",
    "check_gradient_structure",
    "check_two_seller_regimes",
    "check_two_cluster_regimes",
]

SIMPLEX_DECAY_TOL = 1e-8
TRAPPING_TOL = 1e-6
SHARED_LIMIT_TOL = 1e-6


@dataclass
class CheckReport:
    """Verdict of one named check, with the parameters that produced it and
    quantitative margins (worst cases, counterexamples on failure)."""

    name: str
    passed: bool
    params: dict = dc_field(default_factory=dict)
    details: dict = dc_field(default_factory=dict)

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"

    def to_dict(self) -> dict:
        return {
            "check": self.name,
            "verdict": self.verdict,
            "params": _plain(self.params),
            "details": _plain(self.details),
        }


def _plain(obj):
    """Recursively convert numpy scalars/arrays for JSON serialization."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _params_dict(p: MarketParams, **extra) -> dict:
    d = {"gamma": p.gamma, "attractiveness": list(p.attractiveness)}
    d.update(extra)
    return d


def _corrupted_field(p: MarketParams):
    """Fault-injection hook: a constant drift on the first coordinate, which
    breaks the budget-simplex decay law."""
    drift = np.zeros(p.n)
    drift[0] = 1e-3 * p.attractiveness[-1]

    def bad_field(params, j):
        return vector_field(params, j) + drift

    return bad_field


def _draw_box(p: MarketParams, rng, lo_scale=0.0, hi_scale=1.0):
    span = p.a / p.gamma
    lo, hi = lo_scale * span, hi_scale * span
    return lo + rng.random(p.n) * (hi - lo)


# --------------------------------------------------------------------------
# individual checks
# --------------------------------------------------------------------------

def check_simplex_decay(p: MarketParams, s0, opts: IntegrationOptions | None = None,
                        field_fn=None) -> CheckReport:
    """Budget residual follows r(0)*exp(-gamma*t) exactly along trajectories."""
    traj = integrate(p, s0, opts, field_fn=field_fn)
    r0 = simplex_residual(p, traj.states[0])
    devs = np.array([
        abs(simplex_residual(p, s) - r0 * math.exp(-p.gamma * t))
        for t, s in zip(traj.times, traj.states)])
    worst = int(devs.argmax())
    passed = bool(devs[worst] < SIMPLEX_DECAY_TOL)
    details = {"max_deviation": float(devs[worst]), "tolerance": SIMPLEX_DECAY_TOL,
               "at_time": float(traj.times[worst])}
    if not passed:
        details["counterexample"] = {"s0": list(np.asarray(s0, float))}
    return CheckReport("simplex_decay", passed,
                       _params_dict(p, s0=list(np.asarray(s0, float))), details)


def check_gronwall_bound(p: MarketParams, s0, opts: IntegrationOptions | None = None,
                         field_fn=None) -> CheckReport:
    """Coordinatewise a-priori envelope
    ``J_i(t) <= J_i(0) e^{-gamma t} + (a_i/gamma)(1 - e^{-gamma t})``."""
    opts = opts or IntegrationOptions()
    traj = integrate(p, s0, opts, field_fn=field_fn)
    j0 = traj.states[0]
    slack = 10.0 * opts.abs_tol
    worst = -np.inf
    worst_at = 0.0
    for t, s in zip(traj.times, traj.states):
        decay = math.exp(-p.gamma * t)
        envelope = j0 * decay + (p.a / p.gamma) * (1.0 - decay)
        excess = float((s - envelope).max())
        if excess > worst:
            worst, worst_at = excess, float(t)
    passed = bool(worst <= slack)
    details = {"max_excess": worst, "slack": slack, "at_time": worst_at}
    if not passed:
        details["counterexample"] = {"s0": list(j0)}
    return CheckReport("gronwall_bound", passed,
                       _params_dict(p, s0=list(np.asarray(s0, float))), details)


def check_monotone_ordering(p: MarketParams, seed: int, trials: int,
                            opts: IntegrationOptions | None = None) -> CheckReport:
    """Initial conditions sorted concordantly with the attractiveness stay
    sorted: no ordering flips, every sample non-decreasing."""
    failures = []
    for m in range(trials):
        rng = np.random.default_rng((seed, m))
        s0 = np.sort(_draw_box(p, rng))
        traj = integrate(p, s0, opts)
        flips = traj.ordering_flips()
        sorted_ok = all(np.all(np.diff(s) >= -1e-9) for s in traj.states)
        if flips or not sorted_ok:
            failures.append({"trial": m, "s0": list(s0), "flips": len(flips)})
    return CheckReport("monotone_ordering", not failures,
                       _params_dict(p, seed=seed, trials=trials),
                       {"failures": failures})


def check_eventual_ordering(p: MarketParams, seed: int, trials: int,
                            opts: IntegrationOptions | None = None) -> CheckReport:
    """Every trajectory settles into a fixed coordinate ordering: no flips in
    the final half of the integrated horizon."""
    failures = []
    span = float(p.a.max() / p.gamma)
    for m in range(trials):
        rng = np.random.default_rng((seed, m))
        s0 = -span + rng.random(p.n) * 2 * span
        traj = integrate(p, s0, opts)
        late = [e for e in traj.ordering_flips() if e.time > 0.5 * traj.t_end]
        if late:
            failures.append({"trial": m, "s0": list(s0),
                             "late_flips": [(e.time, e.i, e.j) for e in late]})
    return CheckReport("eventual_ordering", not failures,
                       _params_dict(p, seed=seed, trials=trials),
                       {"failures": failures})


def check_trapping(p: MarketParams, seed: int, trials: int,
                   opts: IntegrationOptions | None = None) -> CheckReport:
    """After burn-in (second half of the horizon) the state lies in the
    trapping set of its final leader, within tolerance."""
    failures = []
    worst_margin = -np.inf
    for m in range(trials):
        rng = np.random.default_rng((seed, m))
        s0 = _draw_box(p, rng)
        traj = integrate(p, s0, opts)
        leader = int(np.argmax(traj.final_state))
        bound = np.log(p.a[leader] / p.a)
        ok = True
        for t, s in zip(traj.times, traj.states):
            if t < 0.5 * traj.t_end:
                continue
            margin = float((s - s[leader] - bound).max())
            worst_margin = max(worst_margin, margin)
            if not in_trapping_set(p, s, leader, tol=TRAPPING_TOL):
                ok = False
        if not ok:
            failures.append({"trial": m, "s0": list(s0), "leader": leader})
    return CheckReport("trapping", not failures,
                       _params_dict(p, seed=seed, trials=trials),
                       {"failures": failures, "worst_margin": float(worst_margin),
                        "tolerance": TRAPPING_TOL})


def check_cooperative_region(p: MarketParams, seed: int, samples: int) -> CheckReport:
    """Off-diagonal partials of the difference dynamics are nonnegative
    inside the trapping region (finite differences)."""
    rng = np.random.default_rng((seed, 17))
    h = 1e-6
    worst = np.inf
    failures = []
    for m in range(samples):
        base = int(rng.integers(p.n))
        others = [i for i in range(p.n) if i != base]
        margin = np.log(p.a[base] / p.a[others])
        deltas = margin - (2 * h + rng.random(p.n - 1) * 3.0)
        for ell in range(p.n - 1):
            bump = np.zeros(p.n - 1)
            bump[ell] = h
            g_plus = delta_field(p, DeltaState(base, deltas + bump))
            g_minus = delta_field(p, DeltaState(base, deltas - bump))
            partials = (g_plus - g_minus) / (2 * h)
            for i in range(p.n - 1):
                if i == ell:
                    continue
                worst = min(worst, float(partials[i]))
                if partials[i] < -1e-9:
                    failures.append({"sample": m, "base": base, "i": i, "ell": ell,
                                     "value": float(partials[i])})
    return CheckReport("cooperative_region", not failures,
                       _params_dict(p, seed=seed, samples=samples),
                       {"min_offdiag_partial": worst, "failures": failures})


def check_convergence_census(p: MarketParams, seed: int, trials: int,
                             opts: IntegrationOptions | None = None) -> CheckReport:
    """Fraction of random trajectories that reach a stationary point within
    the horizon.  Non-convergent runs are reported, not failed: the
    convergence statement is almost-sure and near-saddle slowdowns can
    exceed any finite horizon."""
    box = (np.zeros(p.n), p.a / p.gamma)
    results = basin_sample(p, box, trials, seed, opts)
    non_converged = [{"trial": m, "s0": list(s0)}
                     for m, (s0, limit) in enumerate(results) if limit is None]
    fraction = 1.0 - len(non_converged) / trials
    return CheckReport("convergence_census", True,
                       _params_dict(p, seed=seed, trials=trials),
                       {"fraction_converged": fraction,
                        "non_converged": non_converged})


def check_homogeneous_census(p: MarketParams) -> CheckReport:
    """Count law and stable structure for equal attractiveness: one point at
    or above the critical friction, else 2^n - 1 points of which exactly n
    are stable, each with n-1 equal coordinates and one larger."""
    res = solve_homogeneous(p)
    n = p.n
    below = p.gamma < res.gamma_critical
    expected = 2 ** n - 1 if below else 1
    problems = []
    if len(res.points) != expected:
        problems.append(f"expected {expected} points, got {len(res.points)}")
    stable = res.stable_points
    if below:
        if len(stable) != n:
            problems.append(f"expected {n} stable points, got {len(stable)}")
        for pt in stable:
            coords = np.sort(pt.state)
            if coords[-1] - coords[-2] <= 0:
                problems.append("stable point lacks a strict leader")
            if coords[-2] - coords[0] > 1e-9:
                problems.append("stable point followers not equal")
    elif p.gamma > res.gamma_critical:
        if len(stable) != 1:
            problems.append("unique point above threshold should be stable")
    return CheckReport("homogeneous_census", not problems,
                       _params_dict(p),
                       {"count": len(res.points), "stable": len(stable),
                        "expected_count": expected, "problems": problems})


def check_contraction(p: MarketParams, seed: int, trials: int,
                      opts: IntegrationOptions | None = None) -> CheckReport:
    """With the contraction certificate in force, all random trajectories
    share one limit, whose coordinates are ordered like the attractiveness."""
    if not contraction_certificate(p):
        raise ValueError("contraction check requires gamma > max(a)/2")
    span = float(p.a.max() / p.gamma)
    box = (np.full(p.n, -span), np.full(p.n, span))
    results = basin_sample(p, box, trials, seed, opts)
    problems = []
    limits = [limit for _, limit in results if limit is not None]
    if len(limits) != trials:
        problems.append(f"{trials - len(limits)} trajectories did not converge")
    spread = 0.0
    if limits:
        ref = limits[0]
        spread = max(float(np.max(np.abs(lim - ref))) for lim in limits)
        if spread >= SHARED_LIMIT_TOL:
            problems.append(f"limit spread {spread:.3g} exceeds {SHARED_LIMIT_TOL}")
        if not np.all(np.diff(ref) >= -1e-9):
            problems.append("limit coordinates not ordered like attractiveness")
    return CheckReport("contraction", not problems,
                       _params_dict(p, seed=seed, trials=trials),
                       {"limit_spread": spread, "problems": problems})


def check_gradient_structure(p: MarketParams, seed: int, samples: int) -> CheckReport:
    """Equal attractiveness: the field is the negative gradient of the
    potential (finite differences) and the Jacobian is symmetric.
    Heterogeneous: a concrete asymmetry witness exists."""
    rng = np.random.default_rng((seed, 29))
    problems = []
    details: dict = {}
    if p.homogeneous:
        h = 1e-6
        worst_rel = 0.0
        worst_asym = 0.0
        for _ in range(samples):
            j = _draw_box(p, rng, lo_scale=-0.5, hi_scale=1.0)
            grad = np.empty(p.n)
            for i in range(p.n):
                bump = np.zeros(p.n)
                bump[i] = h
                grad[i] = (potential(p, j + bump) - potential(p, j - bump)) / (2 * h)
            f = vector_field(p, j)
            rel = float(np.max(np.abs(-grad - f)) / max(1.0, np.max(np.abs(f))))
            worst_rel = max(worst_rel, rel)
            m = jacobian(p, j)
            worst_asym = max(worst_asym, float(np.max(np.abs(m - m.T))))
        if worst_rel >= 1e-6:
            problems.append(f"gradient mismatch {worst_rel:.3g}")
        if worst_asym >= 1e-10:
            problems.append(f"Jacobian asymmetry {worst_asym:.3g}")
        details = {"max_gradient_rel_error": worst_rel,
                   "max_jacobian_asymmetry": worst_asym}
    else:
        witness = 0.0
        for _ in range(samples):
            j = _draw_box(p, rng, lo_scale=-0.5, hi_scale=1.0)
            m = jacobian(p, j)
            witness = max(witness, float(np.max(np.abs(m - m.T))))
        if witness <= 1e-8:
            problems.append("no asymmetry witness found for heterogeneous field")
        details = {"max_jacobian_asymmetry": witness}
    details["problems"] = problems
    return CheckReport("gradient_structure", not problems,
                       _params_dict(p, seed=seed, samples=samples), details)


def check_two_seller_regimes(a1: float, a2: float) -> CheckReport:
    """Root counts across the two-seller threshold: three below, one above,
    two at the threshold with the tangent root marginal."""
    g_star = critical_gamma_two_seller(a1, a2)
    problems = []

    def points_at(g):
        return solve_two_seller(MarketParams(g, (a1, a2)))

    counts = {"0.9*g*": len(points_at(0.9 * g_star)),
              "1.1*g*": len(points_at(1.1 * g_star)),
              "g*": len(points_at(g_star)),
              "g*-1e-9": len(points_at(g_star - 1e-9)),
              "g*+1e-9": len(points_at(g_star + 1e-9))}
    if counts["0.9*g*"] != 3:
        problems.append(f"expected 3 roots at 0.9*g*, got {counts['0.9*g*']}")
    if counts["1.1*g*"] != 1:
        problems.append(f"expected 1 root at 1.1*g*, got {counts['1.1*g*']}")
    if counts["g*-1e-9"] != 3 or counts["g*+1e-9"] != 1:
        problems.append("tangency not certified by +-1e-9 perturbations")
    at = points_at(g_star)
    if counts["g*"] != 2:
        problems.append(f"expected 2 roots at g*, got {counts['g*']}")
    elif sum(pt.stability == MARGINAL for pt in at) != 1:
        problems.append("expected exactly one marginal root at g*")
    if not (0 < g_star < (a1 + a2) / 4):
        problems.append("threshold outside its bracket")
    return CheckReport("two_seller_regimes", not problems,
                       {"a1": a1, "a2": a2},
                       {"gamma_star": g_star, "counts": counts,
                        "problems": problems})


def check_two_cluster_regimes(c: ClusterSpec) -> CheckReport:
    """Regime dichotomy and interval root counts for a two-cluster market."""
    a_criterion = cluster_A(c)
    regime = two_cluster_thresholds(c)
    problems = []
    non_monotone_expected = c.k > c.n - c.k and a_criterion > 0
    details: dict = {"A": a_criterion}

    def count_at(g):
        return len(solve_two_cluster(c, g))

    if isinstance(regime, NonMonotoneRegime):
        if not non_monotone_expected:
            problems.append("non-monotone regime returned but predicate is false")
        g1, g2, g3 = regime.thresholds
        gmax = c.a_low / (4 * c.k) + c.a_high / (4 * (c.n - c.k))
        if not (0 < g1 < g2 < g3 < gmax):
            problems.append("thresholds not ordered inside the admissible interval")
        mids = [0.5 * g1, 0.5 * (g1 + g2), 0.5 * (g2 + g3), 0.5 * (g3 + gmax)]
        pattern = [count_at(g) for g in mids]
        details.update({"thresholds": list(regime.thresholds), "counts": pattern})
        if pattern != [3, 1, 3, 1]:
            problems.append(f"expected counts 3,1,3,1 got {pattern}")
    else:
        if non_monotone_expected:
            problems.append("unimodal regime returned but predicate is true")
        g_star = regime.gamma_star
        pattern = [count_at(0.9 * g_star), count_at(1.1 * g_star)]
        details.update({"gamma_star": g_star, "counts": pattern})
        if pattern != [3, 1]:
            problems.append(f"expected counts 3,1 around g*, got {pattern}")
    details["problems"] = problems
    return CheckReport("two_cluster_regimes", not problems,
                       {"n": c.n, "k": c.k, "a_low": c.a_low, "a_high": c.a_high},
                       details)


# --------------------------------------------------------------------------
# suite
# --------------------------------------------------------------------------

#: claim coverage manifest: structural claim -> check name
CLAIM_CHECKS = {
    "budget-simplex-invariant-decay": "simplex_decay",
    "bounded-trajectories-envelope": "gronwall_bound",
    "monotone-ordering": "monotone_ordering",
    "eventual-ordering-permanence": "eventual_ordering",
    "leader-trapping-sets": "trapping",
    "cooperative-difference-dynamics": "cooperative_region",
    "almost-sure-convergence": "convergence_census",
    "homogeneous-census": "homogeneous_census",
    "contraction-unique-limit": "contraction",
    "gradient-structure-dichotomy": "gradient_structure",
    "two-seller-friction-regimes": "two_seller_regimes",
    "two-cluster-friction-regimes": "two_cluster_regimes",
}

CHECKS = tuple(CLAIM_CHECKS.values())


def _derive_cluster(p: MarketParams) -> ClusterSpec | None:
    values = sorted(set(p.attractiveness))
    if len(values) != 2:
        return None
    k = sum(1 for a in p.attractiveness if a == values[0])
    return ClusterSpec(p.n, k, values[0], values[1])


def run_suite(p: MarketParams, seed: int = 0, trials: int = 20,
              opts: IntegrationOptions | None = None,
              cluster: ClusterSpec | None = None,
              checks: list[str] | None = None,
              corrupt: bool = False, threads: int = 1) -> list[CheckReport]:
    """Run all checks applicable to ``p`` (or the named subset).

    Regime-specific checks self-select: the homogeneous census needs equal
    attractiveness, the contraction check needs its certificate, the
    two-seller and two-cluster checks need matching structure (a cluster
    spec is derived from ``p`` when it has exactly two levels).  ``corrupt``
    injects a drift into the integrated field as a negative control.
    Exceptions inside a check become failed reports instead of aborting the
    suite.
    """
    if checks is not None:
        unknown = sorted(set(checks) - set(CHECKS))
        if unknown:
            raise KeyError(f"unknown check name(s): {', '.join(unknown)}")
    if cluster is None:
        cluster = _derive_cluster(p)
    field_fn = _corrupted_field(p) if corrupt else None
    rng = np.random.default_rng((seed, 0))
    s0 = _draw_box(p, rng)

    def _two_seller_thunk():
        if p.n != 2 or not p.attractiveness[0] < p.attractiveness[1]:
            raise ValueError("two_seller_regimes needs n=2 with a1 < a2")
        return check_two_seller_regimes(*p.attractiveness)

    def _two_cluster_thunk():
        if cluster is None or not cluster.a_low < cluster.a_high:
            raise ValueError("two_cluster_regimes needs a two-level "
                             "attractiveness structure with a_low < a_high")
        return check_two_cluster_regimes(cluster)

    thunks = {
        "simplex_decay": lambda: check_simplex_decay(p, s0, opts, field_fn=field_fn),
        "gronwall_bound": lambda: check_gronwall_bound(p, s0, opts, field_fn=field_fn),
        "monotone_ordering": lambda: check_monotone_ordering(p, seed, trials, opts),
        "eventual_ordering": lambda: check_eventual_ordering(p, seed, trials, opts),
        "trapping": lambda: check_trapping(p, seed, trials, opts),
        "cooperative_region": lambda: check_cooperative_region(p, seed, 5 * trials),
        "convergence_census": lambda: check_convergence_census(p, seed, trials, opts),
        "gradient_structure": lambda: check_gradient_structure(p, seed, trials),
        "homogeneous_census": lambda: check_homogeneous_census(p),
        "contraction": lambda: check_contraction(p, seed, trials, opts),
        "two_seller_regimes": _two_seller_thunk,
        "two_cluster_regimes": _two_cluster_thunk,
    }

    if checks is not None:
        # explicit requests run even off-regime; failures become reports
        names = [name for name in CHECKS if name in set(checks)]
    else:
        names = ["simplex_decay", "gronwall_bound", "monotone_ordering",
                 "eventual_ordering", "trapping", "cooperative_region",
                 "convergence_census", "gradient_structure"]
        if p.homogeneous:
            names.append("homogeneous_census")
        if contraction_certificate(p):
            names.append("contraction")
        if p.n == 2 and p.attractiveness[0] < p.attractiveness[1]:
            names.append("two_seller_regimes")
        if cluster is not None and cluster.a_low < cluster.a_high:
            names.append("two_cluster_regimes")
    plan = [(name, thunks[name]) for name in names]

    def run_one(item):
        name, fn = item
        try:
            return fn()
        except Exception as exc:  # noqa: BLE001 - failures become reports
            return CheckReport(name, False, _params_dict(p, seed=seed),
                               {"error": f"{type(exc).__name__}: {exc}"})

    if threads > 1 and len(plan) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run_one, plan))
    return [run_one(item) for item in plan]
