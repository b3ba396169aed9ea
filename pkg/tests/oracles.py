"""Independent oracles and frozen expected values.

Everything here is computed from the defining formulas directly (plain
bisection / Newton / finite differences), deliberately not reusing the
package's own solvers, so tests check the implementation against an
independent path.  The frozen constants were produced by these same oracles
ahead of the implementation.
"""

import math

import numpy as np

# ---------------------------------------------------------------- frozen values
GAMMA_STAR_1_2 = 0.32123622744296559

# unique equilibrium of gamma=1, a=(1,2) (full-space Newton)
EQ_GAMMA1_A12 = (0.19584604687614096, 1.6083079062477181)

# unique equilibrium of gamma=0.8, a=(1,2): scalar root and lifted state
DELTA_GAMMA08_A12 = -2.0856139166614946
EQ_GAMMA08_A12 = (0.1381286944461686, 2.2237426111076632)

# scalar displacement roots for n=3, a=1, gamma=2/7, k=1
DPOS_N3_G27_K1 = 3.0427309889201903
DNEG_N3_G27_K1 = -0.73342480176668778

# one of the three stable points for n=3, a=1, gamma=2/7 (leader first)
STABLE_N3_G27 = (3.1951539926134602, 0.15242300369326989, 0.15242300369326989)

# regime criterion values
A_8_7_1_15 = 1.6889833570680524
A_4_3_1_2 = -1.1548569896616159

# two-cluster saddle-node thresholds for ClusterSpec(8, 7, 1, 1.5)
CLUSTER_THRESHOLDS_8_7_1_15 = (0.062610238091892034,
                               0.31589338055839233,
                               0.36090603820336786)


# ---------------------------------------------------------------- generic tools

def bisect(f, lo, hi, iters=200, width=0.0):
    """Plain sign bisection; assumes f(lo) and f(hi) straddle zero."""
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0:
            return mid
        if (fm > 0) == (flo > 0):
            lo = mid
        else:
            hi = mid
        if hi - lo <= width:
            break
    return 0.5 * (lo + hi)


def fd_jacobian(f, x, h=1e-5):
    """Central-difference Jacobian of a vector map."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        bump = np.zeros_like(x)
        bump[i] = h
        cols.append((np.asarray(f(x + bump)) - np.asarray(f(x - bump))) / (2 * h))
    return np.column_stack(cols)


def fd_gradient(f, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        bump = np.zeros_like(x)
        bump[i] = h
        grad[i] = (f(x + bump) - f(x - bump)) / (2 * h)
    return grad


def field_reference(gamma, a, j):
    """Direct scalar-by-scalar evaluation of the vector field."""
    a = np.asarray(a, dtype=float)
    j = np.asarray(j, dtype=float)
    z = sum(math.exp(v - j.max()) for v in j)
    return np.array([-gamma * j[i] + a[i] * math.exp(j[i] - j.max()) / z
                     for i in range(j.size)])


def newton_equilibrium(gamma, a, j0, iters=100):
    """Full-space Newton on the field (independent of the package solvers)."""
    a = np.asarray(a, dtype=float)
    j = np.asarray(j0, dtype=float).copy()
    n = j.size
    for _ in range(iters):
        w = np.exp(j - j.max())
        q = w / w.sum()
        f = -gamma * j + a * q
        m = -gamma * np.eye(n) + a[:, None] * (np.diag(q) - np.outer(q, q))
        j -= np.linalg.solve(m, f)
    return j


# ---------------------------------------------------------------- scalar reductions

def two_group_field(gamma, a1, a2, k, nk, d):
    """Reduced field for two synchronized groups, naive form."""
    if d >= 0:
        e = math.exp(-d)
        return -gamma * d + (a1 - a2 * e) / (nk * e + k)
    e = math.exp(d)
    return -gamma * d + (a1 * e - a2) / (nk + k * e)


def two_group_crit(gamma, a1, a2, k, nk):
    """Critical points (d-, d+) from the closed-form log expression."""
    c = nk * a1 + k * a2
    b = c / (k * nk * gamma)
    s = b / 2 - 1 + math.sqrt(b * (b / 4 - 1))
    base = math.log(nk / k)
    return base - math.log(s), base + math.log(s)


def gk_map(a, gamma, n, k, d):
    return (a / gamma) * (math.exp(d) - 1.0) / (k * math.exp(d) + n - k) if d < 500 \
        else (a / gamma) / k


def gk_root_oracle(a, gamma, n, k, sign):
    """Bisection for the signed root of d = g_k(d), gamma < a/n."""
    if sign > 0:
        lo, hi = 1e-12, a / (gamma * k)
    else:
        lo, hi = -a / (gamma * (n - k)), -1e-12
    return bisect(lambda d: gk_map(a, gamma, n, k, d) - d, lo, hi)


def gamma_star_oracle(a1, a2):
    """Bisection for the two-seller threshold on (0, (a1+a2)/4)."""
    s = (a1 + a2) / 4

    def h(g):
        return two_group_field(g, a1, a2, 1, 1, two_group_crit(g, a1, a2, 1, 1)[1])

    return bisect(h, s * 1e-12, s * (1 - 1e-12))


def count_two_group_roots(gamma, a1, a2, k, nk, grid_points=20001):
    """Dense-grid sign-change count of the reduced field (oracle)."""
    lo = -a2 / (gamma * nk) - 2.0
    hi = a1 / (gamma * k) + 2.0
    grid = np.linspace(lo, hi, grid_points)
    vals = np.array([two_group_field(gamma, a1, a2, k, nk, d) for d in grid])
    return int(np.sum(vals[:-1] * vals[1:] < 0) + np.sum(vals == 0.0))


def dense_scan_cluster_thresholds(a1, a2, k, n, coarse=4000):
    """Independent threshold oracle: scan gamma for sign changes of the
    reduced field at its own critical points, then bisect each bracket."""
    nk = n - k
    c = nk * a1 + k * a2
    gmax = c / (4 * k * nk)
    gammas = np.linspace(gmax * 1e-6, gmax * (1 - 1e-9), coarse)

    out = []
    for which in (0, 1):
        vals = np.array([
            two_group_field(g, a1, a2, k, nk, two_group_crit(g, a1, a2, k, nk)[which])
            for g in gammas])
        for idx in np.nonzero(vals[:-1] * vals[1:] < 0)[0]:
            root = bisect(
                lambda g: two_group_field(g, a1, a2, k, nk,
                                          two_group_crit(g, a1, a2, k, nk)[which]),
                float(gammas[idx]), float(gammas[idx + 1]))
            out.append(root)
    return sorted(out)
