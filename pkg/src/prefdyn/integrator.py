"""Time integration of the preference dynamics with dense event detection:
convergence to a stationary point, pairwise-ordering sign changes, and entry
into trapping sets.

The default scheme is an adaptive Dormand-Prince 5(4) pair; the field is
smooth with a globally bounded derivative, so an explicit method suffices.
A fixed-step classical RK4 is available for cross-checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import MarketParams, as_preferences, vector_field

__all__ = [
    "IntegrationOptions",
    "Event",
    "Trajectory",
    "StiffnessError",
    "integrate",
    "detect_ordering_events",
    "basin_sample",
]

#: |J_i - J_j| below this is treated as a tie when scanning for ordering flips
FLIP_DEADBAND = 1e-9

#: trapping-set membership tolerance used for event detection
TRAPPING_EVENT_TOL = 1e-6

#: consecutive accepted steps with small field norm required to declare convergence
CONVERGENCE_STREAK = 5

_MIN_STEP = 1e-14
_MAX_STEPS = 2_000_000


class StiffnessError(RuntimeError):
    """Adaptive step size collapsed; the supplied field is not integrable
    by an explicit scheme (not expected for the market dynamics)."""


@dataclass(frozen=True)
class IntegrationOptions:
    """Integration controls.  ``None`` fields are resolved against the
    friction coefficient: ``t_max=200/gamma``, ``record_every=0.5/gamma``,
    ``max_step=0.5/gamma``, ``dt_init=0.01/gamma``."""

    scheme: str = "rk45"
    dt_init: float | None = None
    rel_tol: float = 1e-9
    abs_tol: float = 1e-11
    t_max: float | None = None
    convergence_tol: float = 1e-10
    record_every: float | None = None
    max_step: float | None = None

    def __post_init__(self):
        if self.scheme not in ("rk45", "rk4"):
            raise ValueError(f"scheme must be 'rk45' or 'rk4', got {self.scheme!r}")
        if self.rel_tol < 1e-13 or self.abs_tol < 1e-13:
            raise ValueError("rel_tol and abs_tol must be at least 1e-13")
        for name in ("dt_init", "rel_tol", "abs_tol", "t_max", "convergence_tol",
                     "record_every", "max_step"):
            v = getattr(self, name)
            if v is not None and not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v!r}")


@dataclass(frozen=True)
class Event:
    """A detected event.  ``kind`` is one of ``ordering_flip`` (coordinates
    ``i`` and ``j`` swapped order), ``entered_trapping_set`` (leader ``top``),
    or ``converged``."""

    time: float
    kind: str
    i: int | None = None
    j: int | None = None
    top: int | None = None


@dataclass
class Trajectory:
    """Sampled solution of the preference dynamics plus recorded events."""

    params: MarketParams
    times: np.ndarray
    states: np.ndarray
    events: list[Event] = field(default_factory=list)
    converged_to: np.ndarray | None = None

    @property
    def converged(self) -> bool:
        return self.converged_to is not None

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def ordering_flips(self) -> list[Event]:
        return [e for e in self.events if e.kind == "ordering_flip"]


# Dormand-Prince 5(4) tableau (FSAL: the 7th stage is the next step's first).
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_DP_ERR = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920,
                    -17253 / 339200, 22 / 525, -1 / 40])


def _raw_field(p: MarketParams, j: np.ndarray) -> np.ndarray:
    # hot path: same as model.vector_field without input validation
    w = np.exp(j - j.max())
    return -p.gamma * j + p.a * (w / w.sum())


def _hermite(t0, y0, f0, t1, y1, f1, t):
    """Cubic Hermite interpolant between two accepted states."""
    h = t1 - t0
    s = (t - t0) / h
    s2, s3 = s * s, s * s * s
    return ((2 * s3 - 3 * s2 + 1) * y0 + (s3 - 2 * s2 + s) * h * f0
            + (-2 * s3 + 3 * s2) * y1 + (s3 - s2) * h * f1)


class _OrderingTracker:
    """Scans consecutive (t, y, f) nodes for pairwise ordering sign changes,
    refining each crossing by bisection on the cubic Hermite interpolant.

    Differences inside the deadband carry the last significant sign so that
    converged ties do not register spurious flips.
    """

    def __init__(self, n: int, deadband: float = FLIP_DEADBAND, refine: int = 7):
        self.ii, self.jj = np.triu_indices(n, k=1)
        self.deadband = deadband
        self.refine = refine  # bisection steps: 2**7 > 100 subdivisions
        self.sign = np.zeros(len(self.ii))  # 0 = no significant sign seen yet

    def start(self, y0):
        d = y0[self.ii] - y0[self.jj]
        self.sign = np.where(np.abs(d) > self.deadband, np.sign(d), 0.0)

    def observe(self, t0, y0, f0, t1, y1, f1) -> list[Event]:
        d1 = y1[self.ii] - y1[self.jj]
        s1 = np.where(np.abs(d1) > self.deadband, np.sign(d1), 0.0)
        fresh = (self.sign == 0.0) & (s1 != 0.0)
        flipped = (self.sign != 0.0) & (s1 != 0.0) & (s1 != self.sign)
        if fresh.any():
            self.sign[fresh] = s1[fresh]
        if not flipped.any():
            return []
        events = []
        for m in np.nonzero(flipped)[0]:
            i, j = int(self.ii[m]), int(self.jj[m])
            d0 = y0[i] - y0[j]
            if d0 * d1[m] < 0 and abs(d0) > self.deadband:
                t_ev = self._bisect(t0, y0, f0, t1, y1, f1, i, j, s1[m])
            else:
                # crossing happened inside the deadband; linear estimate
                t_ev = t0 if d1[m] == d0 else t0 + (t1 - t0) * (-d0) / (d1[m] - d0)
                t_ev = min(max(t_ev, t0), t1)
            events.append(Event(time=float(t_ev), kind="ordering_flip", i=i, j=j))
            self.sign[m] = s1[m]
        return events

    def _bisect(self, t0, y0, f0, t1, y1, f1, i, j, s1):
        lo, hi = t0, t1
        for _ in range(self.refine):
            mid = 0.5 * (lo + hi)
            ym = _hermite(t0, y0, f0, t1, y1, f1, mid)
            dm = ym[i] - ym[j]
            if dm == 0.0 or (1.0 if dm > 0 else -1.0) == s1:
                hi = mid
            else:
                lo = mid
        return 0.5 * (lo + hi)


class _TrappingTracker:
    """Fires an event whenever the state starts satisfying "the current
    leader's trapping set contains the state": both when membership begins
    while that seller leads, and when leadership passes to a seller whose
    set already contains the state.  Re-arms after any exit."""

    def __init__(self, p: MarketParams, tol: float = TRAPPING_EVENT_TOL):
        # bounds[t, i] = log(a_t / a_i)
        log_a = np.log(p.a)
        self.bounds = log_a[:, None] - log_a[None, :]
        self.tol = tol
        self.ok = np.zeros(p.n, dtype=bool)

    def observe(self, t, y) -> list[Event]:
        member = (y[None, :] - y[:, None] - self.bounds).max(axis=1) <= self.tol
        leader = int(np.argmax(y))
        ok = np.zeros_like(self.ok)
        ok[leader] = member[leader]
        events = []
        if ok[leader] and not self.ok[leader]:
            events.append(Event(time=float(t), kind="entered_trapping_set",
                                top=leader))
        self.ok = ok
        return events


class _Recorder:
    """Accumulates samples on the regular ``record_every`` grid, always
    keeping t=0 and the final accepted state.

    The steppers clamp steps to land on the grid, so samples are accepted
    states of the scheme (integrator accuracy, no dense-output error); the
    Hermite path only covers grid times strictly inside a step."""

    def __init__(self, every: float, y0):
        self.every = every
        self.times = [0.0]
        self.states = [np.array(y0, dtype=float)]
        self.next_t = every

    def observe(self, t0, y0, f0, t1, y1, f1):
        snap = 1e-9 * max(1.0, abs(t1))
        while self.next_t <= t1 + snap:
            t = self.next_t
            y = y1 if abs(t - t1) <= snap else _hermite(t0, y0, f0, t1, y1, f1, t)
            self.times.append(float(t))
            self.states.append(np.array(y, dtype=float))
            self.next_t += self.every

    def finish(self, t, y):
        if t > self.times[-1] + 1e-12 * max(1.0, t):
            self.times.append(float(t))
            self.states.append(np.array(y, dtype=float))


def _next_stop(t: float, every: float) -> float:
    """Smallest record-grid time strictly after t (snap-tolerant)."""
    m = math.floor(t / every + 1e-9) + 1
    return m * every


def _resolve(p: MarketParams, opts: IntegrationOptions):
    g = p.gamma
    t_max = opts.t_max if opts.t_max is not None else 200.0 / g
    record = opts.record_every if opts.record_every is not None else 0.5 / g
    max_step = opts.max_step if opts.max_step is not None else 0.5 / g
    dt0 = opts.dt_init if opts.dt_init is not None else 0.01 / g
    return t_max, record, min(max_step, t_max), min(dt0, t_max)


def integrate(p: MarketParams, s0, opts: IntegrationOptions | None = None,
              field_fn=None) -> Trajectory:
    """Integrate from ``s0`` until convergence (field sup-norm below
    ``convergence_tol`` for five consecutive accepted steps) or ``t_max``,
    whichever comes first.

    ``field_fn(p, y) -> dy/dt`` overrides the market vector field; this is a
    hook for integrating alternative right-hand sides (e.g. difference
    coordinates) and for fault injection in the check suite.  Trapping-set
    events are only meaningful for the default field and are skipped for
    overrides.
    """
    if opts is None:
        opts = IntegrationOptions()
    y = as_preferences(p, s0)
    rhs = field_fn if field_fn is not None else _raw_field
    t_max, record_every, max_step, dt0 = _resolve(p, opts)

    f = rhs(p, y)
    events: list[Event] = []
    recorder = _Recorder(record_every, y)
    ordering = _OrderingTracker(p.n)
    ordering.start(y)
    trapping = _TrappingTracker(p) if field_fn is None else None
    if trapping is not None:
        events.extend(trapping.observe(0.0, y))

    if float(np.max(np.abs(f))) < opts.convergence_tol:
        events.append(Event(time=0.0, kind="converged"))
        return Trajectory(params=p, times=np.array([0.0]),
                          states=np.array([y]), events=events,
                          converged_to=y.copy())

    if opts.scheme == "rk4":
        stepper = _fixed_steps(p, y, f, rhs, dt0, t_max, record_every)
    else:
        stepper = _adaptive_steps(p, y, f, rhs, dt0, t_max, max_step,
                                  opts.rel_tol, opts.abs_tol, record_every)

    streak = 0
    converged_to = None
    t0 = 0.0
    for (t1, y1, f1) in stepper:
        recorder.observe(t0, y, f, t1, y1, f1)
        events.extend(ordering.observe(t0, y, f, t1, y1, f1))
        if trapping is not None:
            events.extend(trapping.observe(t1, y1))
        fnorm = float(np.max(np.abs(f1)))
        streak = streak + 1 if fnorm < opts.convergence_tol else 0
        t0, y, f = t1, y1, f1
        if streak >= CONVERGENCE_STREAK:
            events.append(Event(time=float(t1), kind="converged"))
            converged_to = y1.copy()
            break

    recorder.finish(t0, y)
    events.sort(key=lambda e: e.time)
    return Trajectory(params=p, times=np.array(recorder.times),
                      states=np.array(recorder.states), events=events,
                      converged_to=converged_to)


def _adaptive_steps(p, y, f, rhs, h, t_max, max_step, rel_tol, abs_tol, record_every):
    """Dormand-Prince 5(4) with FSAL and standard step-size control.
    Steps are clamped to land exactly on record-grid times so recorded
    samples carry integrator accuracy rather than interpolation accuracy."""
    t = 0.0
    h = min(h, max_step)
    k = np.empty((7, y.size))
    k[0] = f
    steps = 0
    while t < t_max:
        h_try = min(h, t_max - t, _next_stop(t, record_every) - t)
        if h_try < _MIN_STEP:
            raise StiffnessError(f"step size underflow at t={t:.6g}")
        for s in range(1, 7):
            k[s] = rhs(p, y + h_try * (_DP_A[s] @ k[:s]))
        y1 = y + h_try * (_DP_B5 @ k[:6])
        err = h_try * (_DP_ERR @ k)
        scale = abs_tol + rel_tol * np.maximum(np.abs(y), np.abs(y1))
        err_norm = float(np.sqrt(np.mean((err / scale) ** 2)))
        if err_norm <= 1.0:
            # k[6] is f(t+h_try, y1) by the FSAL property
            f1 = k[6].copy()
            yield (t + h_try, y1, f1)
            t += h_try
            y = y1
            k[0] = f1
            factor = 5.0 if err_norm == 0.0 else min(5.0, max(0.2, 0.9 * err_norm ** -0.2))
            h = min(h_try * factor, max_step)
        else:
            h = h_try * max(0.2, 0.9 * err_norm ** -0.2)
            if h < _MIN_STEP:
                raise StiffnessError(f"step size underflow at t={t:.6g}")
        steps += 1
        if steps > _MAX_STEPS:
            raise RuntimeError("step budget exhausted; integration did not finish")


def _fixed_steps(p, y, f, rhs, h, t_max, record_every):
    """Classical RK4 at fixed step ``h``; steps shorten to land on record
    times and t_max."""
    t = 0.0
    steps = 0
    while t < t_max:
        hs = min(h, t_max - t, _next_stop(t, record_every) - t)
        k1 = f
        k2 = rhs(p, y + 0.5 * hs * k1)
        k3 = rhs(p, y + 0.5 * hs * k2)
        k4 = rhs(p, y + hs * k3)
        y1 = y + (hs / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        f1 = rhs(p, y1)
        yield (t + hs, y1, f1)
        t += hs
        y, f = y1, f1
        steps += 1
        if steps > _MAX_STEPS:
            raise RuntimeError("step budget exhausted; integration did not finish")


def detect_ordering_events(traj: Trajectory, deadband: float = FLIP_DEADBAND
                           ) -> list[tuple[float, int, int]]:
    """Locate all pairwise ordering sign changes among the recorded samples,
    refined by bisection on cubic Hermite interpolation between samples to
    one hundredth of the local sample spacing.

    After the last returned event the coordinate ordering is constant for
    the remainder of the trajectory (at sample resolution).
    """
    times, states = traj.times, traj.states
    if len(times) < 2:
        return []
    p = traj.params
    derivs = np.array([vector_field(p, s) for s in states])
    tracker = _OrderingTracker(p.n, deadband=deadband)
    tracker.start(states[0])
    out = []
    for m in range(len(times) - 1):
        evs = tracker.observe(times[m], states[m], derivs[m],
                              times[m + 1], states[m + 1], derivs[m + 1])
        out.extend((e.time, e.i, e.j) for e in evs)
    return out


def basin_sample(p: MarketParams, ic_box, count: int, seed: int,
                 opts: IntegrationOptions | None = None
                 ) -> list[tuple[np.ndarray, np.ndarray | None]]:
    """Integrate ``count`` random initial conditions drawn uniformly from the
    box ``ic_box = (lo, hi)``; returns ``(s0, limit)`` pairs where ``limit``
    is the converged state or ``None`` when ``t_max`` was reached first.

    Deterministic given ``seed``: trajectory ``m`` uses the seed sequence
    ``(seed, m)``, so samples are reproducible independently of each other.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    lo = as_preferences(p, ic_box[0])
    hi = as_preferences(p, ic_box[1])
    if np.any(hi < lo):
        raise ValueError("ic_box upper bounds must dominate lower bounds")
    out = []
    for m in range(count):
        rng = np.random.default_rng((seed, m))
        s0 = lo + rng.random(p.n) * (hi - lo)
        traj = integrate(p, s0, opts)
        out.append((s0, traj.converged_to))
    return out
