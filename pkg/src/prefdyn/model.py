"""Core market model: the preference vector field, its Jacobian, the reduced
difference dynamics, the homogeneous-case potential, and the invariant
geometry (budget simplex, trapping sets, difference-space sectors).

Conventions
-----------
Seller indices are 0-based. ``MarketParams`` sorts the attractiveness vector
non-decreasingly at construction and remembers the permutation, so every
function in this package works in the sorted order; use
``MarketParams.to_sorted`` / ``to_original`` to translate caller-side vectors.
Preference states are plain float arrays of length ``n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "UnsupportedCaseError",
    "MarketParams",
    "DeltaState",
    "SectorLabel",
    "as_preferences",
    "softmax",
    "log_sum_exp",
    "vector_field",
    "jacobian",
    "delta_field",
    "simplex_residual",
    "potential",
    "in_trapping_set",
    "sector_of",
]

#: default tolerance for set-membership checks (trapping sets)
MEMBERSHIP_TOL = 1e-9


class UnsupportedCaseError(ValueError):
    """An operation was asked for outside the regime it supports."""


@dataclass(frozen=True)
class MarketParams:
    """Friction coefficient ``gamma`` and per-seller attractiveness.

    The attractiveness sequence is sorted non-decreasingly at construction
    (ties keep their relative order).  ``order`` records the applied
    permutation: ``attractiveness[k]`` came from position ``order[k]`` of the
    caller's input, so results computed in sorted order can be mapped back to
    the original seller labels.
    """

    gamma: float
    attractiveness: tuple[float, ...]
    order: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        gamma = float(self.gamma)
        if not (math.isfinite(gamma) and gamma > 0):
            raise ValueError(f"gamma must be positive and finite, got {self.gamma!r}")
        raw = np.asarray(self.attractiveness, dtype=float)
        if raw.ndim != 1 or raw.size < 2:
            raise ValueError("attractiveness needs at least two sellers")
        if not np.all(np.isfinite(raw)) or np.any(raw <= 0.0):
            raise ValueError("attractiveness entries must be positive and finite")
        order = tuple(int(i) for i in np.argsort(raw, kind="stable"))
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "attractiveness", tuple(float(raw[i]) for i in order))
        object.__setattr__(self, "order", order)

    @property
    def n(self) -> int:
        return len(self.attractiveness)

    @cached_property
    def a(self) -> np.ndarray:
        """Sorted attractiveness as a read-only array."""
        arr = np.array(self.attractiveness, dtype=float)
        arr.flags.writeable = False
        return arr

    @property
    def homogeneous(self) -> bool:
        return self.attractiveness[0] == self.attractiveness[-1]

    def to_sorted(self, values) -> np.ndarray:
        """Reorder a caller-side per-seller vector into the sorted convention."""
        v = np.asarray(values, dtype=float)
        if v.shape != (self.n,):
            raise ValueError(f"expected {self.n} per-seller values, got shape {v.shape}")
        return v[list(self.order)]

    def to_original(self, values) -> np.ndarray:
        """Map a sorted-convention per-seller vector back to the caller's order."""
        v = np.asarray(values, dtype=float)
        if v.shape != (self.n,):
            raise ValueError(f"expected {self.n} per-seller values, got shape {v.shape}")
        out = np.empty_like(v)
        out[list(self.order)] = v
        return out


def as_preferences(p: MarketParams, j) -> np.ndarray:
    """Validate and return a preference state as a float array of length n."""
    arr = np.asarray(j, dtype=float)
    if arr.shape != (p.n,):
        raise ValueError(f"preference state must have length {p.n}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("preference state must be finite")
    return arr


@dataclass
class DeltaState:
    """Pairwise preference differences against a base seller.

    ``deltas[m]`` is ``J_i - J_base`` for the m-th seller index ``i != base``
    in increasing order, so the vector has length ``n - 1``.
    """

    base: int
    deltas: np.ndarray

    def __post_init__(self):
        self.base = int(self.base)
        self.deltas = np.asarray(self.deltas, dtype=float)

    @classmethod
    def from_preferences(cls, j, base: int) -> "DeltaState":
        arr = np.asarray(j, dtype=float)
        others = [i for i in range(arr.size) if i != base]
        return cls(base=base, deltas=arr[others] - arr[base])

    def others(self, n: int) -> list[int]:
        """Seller indices covered by ``deltas``, in storage order."""
        return [i for i in range(n) if i != self.base]


@dataclass(frozen=True)
class SectorLabel:
    """Open sector of difference space: either all coordinates negative
    (``index is None``) or the maximum is positive and attained at ``index``."""

    index: int | None

    @property
    def all_negative(self) -> bool:
        return self.index is None


def softmax(j) -> np.ndarray:
    """Overflow-safe softmax; entries are positive and sum to one."""
    arr = np.asarray(j, dtype=float)
    w = np.exp(arr - arr.max())
    return w / w.sum()


def log_sum_exp(j) -> float:
    arr = np.asarray(j, dtype=float)
    m = arr.max()
    return float(m + math.log(np.exp(arr - m).sum()))


def vector_field(p: MarketParams, j) -> np.ndarray:
    """Right-hand side of the preference dynamics:
    ``F_i = -gamma*J_i + a_i * softmax(J)_i``."""
    state = as_preferences(p, j)
    return -p.gamma * state + p.a * softmax(state)


def jacobian(p: MarketParams, j) -> np.ndarray:
    """Jacobian of the vector field: ``-gamma`` plus the choice-probability
    coupling ``a_i * q_i * (delta_il - q_l)`` with ``q = softmax(J)``."""
    state = as_preferences(p, j)
    q = softmax(state)
    a = p.a
    m = a[:, None] * (np.diag(q) - np.outer(q, q))
    m[np.diag_indices_from(m)] -= p.gamma
    return m


def delta_field(p: MarketParams, d: DeltaState) -> np.ndarray:
    """Reduced dynamics of the differences ``J_i - J_base``:
    ``G_i = -gamma*D_i + (a_i*exp(D_i) - a_base) / (1 + sum_k exp(D_k))``.

    Evaluated with a common rescaling by ``exp(-max(0, D))`` so large
    differences do not overflow.
    """
    if not 0 <= d.base < p.n:
        raise ValueError(f"base index {d.base} out of range for n={p.n}")
    deltas = np.asarray(d.deltas, dtype=float)
    if deltas.shape != (p.n - 1,):
        raise ValueError(f"deltas must have length {p.n - 1}, got shape {deltas.shape}")
    if not np.all(np.isfinite(deltas)):
        raise ValueError("deltas must be finite")
    a = p.a
    others = d.others(p.n)
    m = max(0.0, float(deltas.max()))
    w = np.exp(deltas - m)
    scale = math.exp(-m)
    denom = scale + w.sum()
    return -p.gamma * deltas + (a[others] * w - a[d.base] * scale) / denom


def simplex_residual(p: MarketParams, j) -> float:
    """Signed distance from the invariant budget simplex:
    ``sum_i J_i/a_i - 1/gamma`` (zero exactly on the simplex)."""
    state = as_preferences(p, j)
    return float((state / p.a).sum() - 1.0 / p.gamma)


def potential(p: MarketParams, j) -> float:
    """Potential whose negative gradient is the vector field; only defined
    when all sellers share one attractiveness value."""
    if not p.homogeneous:
        raise UnsupportedCaseError(
            "potential exists only for equal attractiveness; the heterogeneous "
            "field is not a gradient"
        )
    state = as_preferences(p, j)
    a = p.attractiveness[0]
    return float(0.5 * p.gamma * (state * state).sum() - a * log_sum_exp(state))


def in_trapping_set(p: MarketParams, j, top: int, tol: float = MEMBERSHIP_TOL) -> bool:
    """Whether ``J_i - J_top <= log(a_top / a_i) + tol`` holds for every i.

    States in this set keep seller ``top`` as the (weak) preference leader.
    """
    state = as_preferences(p, j)
    if not 0 <= top < p.n:
        raise ValueError(f"top index {top} out of range for n={p.n}")
    bound = np.log(p.a[top] / p.a)
    return bool(np.all(state - state[top] <= bound + tol))


def sector_of(deltas) -> SectorLabel:
    """Classify a difference vector into its open sector: all-negative, or
    maximum-positive-at-index.  Raises on the (measure-zero) boundary."""
    arr = np.asarray(deltas, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("deltas must be a non-empty vector")
    m = arr.max()
    if m < 0.0:
        return SectorLabel(index=None)
    if m > 0.0:
        return SectorLabel(index=int(arr.argmax()))
    raise ValueError("point lies on a sector boundary (max coordinate is zero)")
