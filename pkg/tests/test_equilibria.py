import math

import numpy as np
import pytest

import prefdyn as pd
from prefdyn.equilibria import (
    ClusterSpec,
    MARGINAL,
    STABLE,
    UNSTABLE,
    RESIDUAL_TOL,
)
from prefdyn.model import MarketParams, UnsupportedCaseError

import oracles


def assert_point_contract(p, pt):
    assert pt.residual < RESIDUAL_TOL
    assert abs(pd.simplex_residual(p, pt.state)) < RESIDUAL_TOL


class TestClassifyStability:
    def test_symmetric_point_above_threshold_is_stable(self):
        p = MarketParams(2 / 5, (1.0, 1.0, 1.0))
        eig, stability = pd.classify_stability(p, np.full(3, 5 / 6))
        assert stability == STABLE
        # one eigenvalue transverse to the budget simplex sits at -gamma
        assert min(abs(ev.real + p.gamma) for ev in eig) < 1e-12

    def test_symmetric_point_below_threshold_is_unstable(self):
        p = MarketParams(2 / 7, (1.0, 1.0, 1.0))
        point = np.full(3, 1.0 / (3 * p.gamma))
        eig, stability = pd.classify_stability(p, point)
        assert stability == UNSTABLE
        # symmetry-breaking directions carry eigenvalue a/n - gamma
        expected = 1.0 / 3 - p.gamma
        assert sum(abs(ev.real - expected) < 1e-12 for ev in eig) == 2

    def test_rejects_non_stationary_state(self):
        p = MarketParams(1.0, (1.0, 2.0))
        with pytest.raises(ValueError):
            pd.classify_stability(p, [1.0, 1.0])


class TestSolveHomogeneous:
    def test_unique_point_above_threshold(self):
        res = pd.solve_homogeneous(MarketParams(2 / 5, (1.0, 1.0, 1.0)))
        assert len(res.points) == 1
        assert res.roots == {}
        np.testing.assert_allclose(res.points[0].state, 5 / 6, atol=1e-12)
        assert res.points[0].stability == STABLE

    def test_boundary_friction_single_point(self):
        res = pd.solve_homogeneous(MarketParams(1 / 3, (1.0, 1.0, 1.0)))
        assert len(res.points) == 1

    def test_seven_points_three_stable(self):
        p = MarketParams(2 / 7, (1.0, 1.0, 1.0))
        res = pd.solve_homogeneous(p)
        assert len(res.points) == 7
        assert len(res.stable_points) == 3
        for pt in res.points:
            assert_point_contract(p, pt)

    def test_roots_match_independent_bisection(self):
        res = pd.solve_homogeneous(MarketParams(2 / 7, (1.0, 1.0, 1.0)))
        neg, pos = res.roots[1]
        assert pos == pytest.approx(oracles.DPOS_N3_G27_K1, abs=1e-11)
        assert neg == pytest.approx(oracles.DNEG_N3_G27_K1, abs=1e-11)
        for k, (d_neg, d_pos) in res.roots.items():
            assert d_neg < 0 < d_pos
            assert d_pos == pytest.approx(
                oracles.gk_root_oracle(1.0, 2 / 7, 3, k, +1), abs=1e-10)
            assert d_neg == pytest.approx(
                oracles.gk_root_oracle(1.0, 2 / 7, 3, k, -1), abs=1e-10)

    def test_stable_points_have_one_strict_leader(self):
        res = pd.solve_homogeneous(MarketParams(2 / 7, (1.0, 1.0, 1.0)))
        for pt in res.stable_points:
            coords = np.sort(pt.state)
            assert coords[-1] > coords[-2]
            assert coords[-2] - coords[0] < 1e-9

    @pytest.mark.parametrize("n", range(2, 9))
    def test_count_law(self, n):
        res = pd.solve_homogeneous(MarketParams(0.8 / n, (1.0,) * n))
        assert len(res.points) == 2 ** n - 1
        assert len(res.stable_points) == n

    def test_heterogeneous_rejected(self):
        with pytest.raises(UnsupportedCaseError):
            pd.solve_homogeneous(MarketParams(0.5, (1.0, 2.0)))

    def test_enumeration_cap(self):
        with pytest.raises(UnsupportedCaseError):
            pd.solve_homogeneous(MarketParams(0.8 / 30, (1.0,) * 30))


class TestSolveTwoSeller:
    def test_symmetric_above_threshold(self):
        pts = pd.solve_two_seller(MarketParams(0.6, (1.0, 1.0)))
        assert len(pts) == 1
        assert pts[0].delta == pytest.approx(0.0, abs=1e-12)

    def test_symmetric_below_threshold(self):
        pts = pd.solve_two_seller(MarketParams(0.4, (1.0, 1.0)))
        deltas = sorted(pt.delta for pt in pts)
        assert len(deltas) == 3
        assert deltas[1] == pytest.approx(0.0, abs=1e-12)
        assert deltas[0] == pytest.approx(-deltas[2], abs=1e-10)

    def test_single_negative_stable_root(self):
        p = MarketParams(0.8, (1.0, 2.0))
        pts = pd.solve_two_seller(p)
        assert len(pts) == 1
        pt = pts[0]
        assert pt.delta == pytest.approx(oracles.DELTA_GAMMA08_A12, abs=1e-11)
        np.testing.assert_allclose(pt.state, oracles.EQ_GAMMA08_A12, atol=1e-11)
        assert pt.stability == STABLE
        assert_point_contract(p, pt)

    def test_three_roots_below_threshold(self):
        g = 0.9 * oracles.GAMMA_STAR_1_2
        pts = pd.solve_two_seller(MarketParams(g, (1.0, 2.0)))
        assert [pt.stability for pt in pts] == [STABLE, UNSTABLE, STABLE]
        assert pts[0].delta < 0 < pts[1].delta < pts[2].delta
        for pt in pts:
            # one-dimensional and full-spectrum classifications agree here
            assert pt.cluster_stability == pt.stability

    def test_tangency_at_threshold(self):
        pts = pd.solve_two_seller(MarketParams(oracles.GAMMA_STAR_1_2, (1.0, 2.0)))
        assert len(pts) == 2
        assert [pt.stability for pt in pts] == [STABLE, MARGINAL]

    def test_wrong_seller_count_rejected(self):
        with pytest.raises(UnsupportedCaseError):
            pd.solve_two_seller(MarketParams(0.5, (1.0, 2.0, 3.0)))


class TestSolveTwoCluster:
    def test_symmetric_spec_keeps_zero_root(self):
        spec = ClusterSpec(4, 2, 1.0, 1.0)
        for gamma in (0.4, 0.2, 0.1):
            pts = pd.solve_two_cluster(spec, gamma)
            assert any(abs(pt.delta) < 1e-12 for pt in pts)

    def test_single_root_above_max_slope(self):
        spec = ClusterSpec(8, 7, 1.0, 1.5)
        pts = pd.solve_two_cluster(spec, 0.45)
        assert len(pts) == 1
        assert pts[0].delta < 0

    def test_three_roots_in_reentrant_window(self):
        spec = ClusterSpec(8, 7, 1.0, 1.5)
        p = spec.params(0.34)
        pts = pd.solve_two_cluster(spec, 0.34)
        assert len(pts) == 3
        for pt in pts:
            assert_point_contract(p, pt)
            low, high = pt.state[:7], pt.state[7:]
            assert np.ptp(low) < 1e-12 and np.ptp(high) < 1e-12
            assert pt.delta == pytest.approx(float(low[0] - high[0]), abs=1e-9)
            assert pt.cluster_stability in (STABLE, UNSTABLE, MARGINAL)

    def test_root_count_matches_dense_scan(self):
        spec = ClusterSpec(8, 7, 1.0, 1.5)
        for gamma in (0.03, 0.12, 0.34, 0.39):
            pts = pd.solve_two_cluster(spec, gamma)
            expected = oracles.count_two_group_roots(gamma, 1.0, 1.5, 7, 1)
            assert len(pts) == expected

    def test_invalid_spec_rejected(self):
        with pytest.raises(ValueError):
            ClusterSpec(4, 0, 1.0, 2.0)
        with pytest.raises(ValueError):
            ClusterSpec(4, 4, 1.0, 2.0)
        with pytest.raises(ValueError):
            ClusterSpec(4, 2, 2.0, 1.0)


class TestSolveGeneral:
    def test_contractive_regime_unique(self):
        p = MarketParams(1.6, (1.0, 2.0, 3.0))
        for seed, starts in ((0, 40), (123, 80)):
            res = pd.solve_general(p, starts=starts, seed=seed)
            assert len(res.points) == 1
            assert res.n_converged + res.n_failed == starts
            state = res.points[0].state
            assert np.all(np.diff(state) > 0)

    @pytest.mark.parametrize("n", [2, 3, 4])
    def test_matches_homogeneous_enumeration(self, n):
        p = MarketParams(0.8 / n, (1.0,) * n)
        exact = pd.solve_homogeneous(p).points
        found = pd.solve_general(p, starts=300, seed=5).points
        assert len(found) == len(exact)
        for pt in found:
            dists = [np.max(np.abs(pt.state - e.state)) for e in exact]
            assert min(dists) < 1e-7

    def test_matches_two_seller_enumeration(self):
        p = MarketParams(0.9 * oracles.GAMMA_STAR_1_2, (1.0, 2.0))
        exact = pd.solve_two_seller(p)
        found = pd.solve_general(p, starts=200, seed=2).points
        assert len(found) == len(exact)
        for pt, ex in zip(found, sorted(exact, key=lambda q: tuple(q.state))):
            assert np.max(np.abs(pt.state - ex.state)) < 1e-7

    def test_deterministic(self):
        p = MarketParams(0.5, (1.3, 2.1, 2.7))
        res1 = pd.solve_general(p, starts=60, seed=11)
        res2 = pd.solve_general(p, starts=60, seed=11)
        assert len(res1.points) == len(res2.points)
        for a, b in zip(res1.points, res2.points):
            np.testing.assert_array_equal(a.state, b.state)

    def test_validation(self):
        p = MarketParams(1.0, (1.0, 2.0))
        with pytest.raises(ValueError):
            pd.solve_general(p, starts=0, seed=1)


class TestContractionCertificate:
    def test_strict_boundary(self):
        assert pd.contraction_certificate(MarketParams(1.6, (1.0, 2.0, 3.0)))
        assert not pd.contraction_certificate(MarketParams(1.5, (1.0, 2.0, 3.0)))

    def test_certificate_implies_single_basin(self):
        p = MarketParams(1.6, (1.0, 2.0, 3.0))
        box = (np.zeros(3), p.a / p.gamma)
        limits = [lim for _, lim in pd.basin_sample(p, box, 10, seed=50)]
        ref = limits[0]
        assert all(np.max(np.abs(lim - ref)) < 1e-6 for lim in limits)
