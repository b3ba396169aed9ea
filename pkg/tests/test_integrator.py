import math

import numpy as np
import pytest

import prefdyn as pd
from prefdyn.integrator import IntegrationOptions, StiffnessError
from prefdyn.model import MarketParams

import oracles


def random_problem(rng, n_max=6):
    n = int(rng.integers(2, n_max + 1))
    gamma = float(0.25 + 1.25 * rng.random())
    a = tuple(np.sort(0.4 + 2.6 * rng.random(n)))
    return MarketParams(gamma, a)


class TestOptions:
    def test_defaults_valid(self):
        IntegrationOptions()

    @pytest.mark.parametrize("kwargs", [
        {"scheme": "euler"},
        {"rel_tol": 1e-14},
        {"abs_tol": 0.0},
        {"t_max": -1.0},
        {"record_every": 0.0},
        {"dt_init": math.inf},
    ])
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ValueError):
            IntegrationOptions(**kwargs)


class TestIntegrate:
    def test_fixed_point_converges_at_zero(self):
        p = MarketParams(2 / 5, (1.0, 1.0, 1.0))
        traj = pd.integrate(p, [5 / 6, 5 / 6, 5 / 6])
        assert traj.converged
        conv = [e for e in traj.events if e.kind == "converged"]
        assert conv and conv[0].time == 0.0
        assert len(traj.times) == 1
        np.testing.assert_allclose(traj.converged_to, 5 / 6)

    def test_two_seller_reaches_unique_equilibrium(self):
        p = MarketParams(1.0, (1.0, 2.0))
        traj = pd.integrate(p, [0.0, 0.0])
        assert traj.converged
        np.testing.assert_allclose(traj.converged_to, oracles.EQ_GAMMA1_A12,
                                   atol=1e-8)
        assert traj.converged_to[0] < traj.converged_to[1]

    def test_homogeneous_leader_keeps_lead(self):
        p = MarketParams(2 / 7, (1.0, 1.0, 1.0))
        traj = pd.integrate(p, [0.3, 0.1, 0.1])
        assert traj.converged
        np.testing.assert_allclose(traj.converged_to, oracles.STABLE_N3_G27,
                                   atol=1e-8)

    def test_field_norm_small_at_convergence(self):
        p = MarketParams(0.9, (1.0, 1.7))
        opts = IntegrationOptions(convergence_tol=1e-10)
        traj = pd.integrate(p, [1.5, -0.3], opts)
        assert traj.converged
        assert np.max(np.abs(pd.vector_field(p, traj.converged_to))) < 1e-10

    def test_halts_at_t_max_without_convergence(self):
        p = MarketParams(0.5, (1.0, 2.0))
        opts = IntegrationOptions(t_max=0.5)
        traj = pd.integrate(p, [3.0, -1.0], opts)
        assert not traj.converged
        assert traj.t_end == pytest.approx(0.5, rel=1e-12)

    def test_record_grid(self):
        p = MarketParams(1.0, (1.0, 2.0))
        opts = IntegrationOptions(t_max=2.0, record_every=0.25,
                                  convergence_tol=1e-300)
        traj = pd.integrate(p, [0.5, 0.5], opts)
        np.testing.assert_allclose(traj.times, np.arange(0, 2.01, 0.25), atol=1e-9)

    def test_simplex_residual_decays_exactly(self):
        rng = np.random.default_rng(61)
        for _ in range(5):
            p = random_problem(rng)
            s0 = rng.uniform(-0.5, 1.5, p.n) * p.a / p.gamma
            traj = pd.integrate(p, s0)
            r0 = pd.simplex_residual(p, traj.states[0])
            devs = [abs(pd.simplex_residual(p, s) - r0 * math.exp(-p.gamma * t))
                    for t, s in zip(traj.times, traj.states)]
            assert max(devs) < 1e-8

    def test_gronwall_envelope(self):
        rng = np.random.default_rng(62)
        opts = IntegrationOptions()
        for _ in range(5):
            p = random_problem(rng)
            s0 = rng.uniform(-1.0, 1.0, p.n) * p.a / p.gamma
            traj = pd.integrate(p, s0, opts)
            for t, s in zip(traj.times, traj.states):
                decay = math.exp(-p.gamma * t)
                envelope = s0 * decay + (p.a / p.gamma) * (1 - decay)
                assert np.all(s <= envelope + 10 * opts.abs_tol)

    def test_monotone_no_flips_for_sorted_start(self):
        rng = np.random.default_rng(63)
        for _ in range(10):
            p = random_problem(rng)
            s0 = np.sort(rng.uniform(0, 1, p.n) * p.a / p.gamma)
            traj = pd.integrate(p, s0)
            assert traj.ordering_flips() == []
            for s in traj.states:
                assert np.all(np.diff(s) >= -1e-9)

    def test_reverse_sorted_start_settles(self):
        p = MarketParams(0.8, (1.0, 1.6, 2.4))
        s0 = np.array([2.4, 1.6, 1.0]) / p.gamma
        traj = pd.integrate(p, s0)
        flips = traj.ordering_flips()
        assert 0 < len(flips) < 20
        assert all(e.time <= 0.5 * traj.t_end for e in flips)

    def test_trapping_event_then_membership_holds(self):
        p = MarketParams(0.8, (1.0, 1.6, 2.4))
        traj = pd.integrate(p, [2.0, 0.3, 0.1])
        entered = [e for e in traj.events if e.kind == "entered_trapping_set"]
        assert entered
        leader = int(np.argmax(traj.final_state))
        last = max(e.time for e in entered if e.top == leader)
        for t, s in zip(traj.times, traj.states):
            if t >= last:
                assert pd.in_trapping_set(p, s, leader, tol=1e-6)

    def test_stiff_override_raises(self):
        # decay rate beyond any step the controller can hold above the floor
        p = MarketParams(1.0, (1.0, 2.0))

        def stiff_field(params, j):
            return -1e16 * j

        with pytest.raises(StiffnessError):
            pd.integrate(p, [1.0, 1.0], IntegrationOptions(t_max=1.0),
                         field_fn=stiff_field)


class TestSchemeAgreement:
    def test_adaptive_and_fixed_agree_on_limits(self):
        rng = np.random.default_rng(64)
        opts_ad = IntegrationOptions(scheme="rk45")
        for _ in range(20):
            p = random_problem(rng, n_max=4)
            s0 = rng.uniform(0, 1, p.n) * p.a / p.gamma
            opts_rk4 = IntegrationOptions(scheme="rk4", dt_init=0.05 / p.gamma)
            t_ad = pd.integrate(p, s0, opts_ad)
            t_rk4 = pd.integrate(p, s0, opts_rk4)
            assert t_ad.converged and t_rk4.converged
            diff = np.max(np.abs(t_ad.converged_to - t_rk4.converged_to))
            assert diff < 10 * (opts_ad.rel_tol + opts_ad.abs_tol)


class TestDetectOrderingEvents:
    def test_equilibrium_start_has_no_events(self):
        p = MarketParams(1.0, (1.0, 2.0))
        eq = oracles.newton_equilibrium(1.0, [1.0, 2.0], [0.2, 1.6])
        traj = pd.integrate(p, eq)
        assert pd.detect_ordering_events(traj) == []

    def test_ordering_constant_after_last_event(self):
        p = MarketParams(0.8, (1.0, 1.6, 2.4))
        opts = IntegrationOptions(record_every=0.05 / p.gamma)
        traj = pd.integrate(p, np.array([2.4, 1.6, 1.0]) / p.gamma, opts)
        events = pd.detect_ordering_events(traj)
        assert events == sorted(events, key=lambda e: e[0])
        t_last = events[-1][0] if events else 0.0
        orders = {tuple(np.argsort(s, kind="stable"))
                  for t, s in zip(traj.times, traj.states) if t > t_last}
        assert len(orders) == 1

    def test_event_times_refined_between_samples(self):
        # coarse sampling: refined flip times must sit strictly inside sample gaps
        p = MarketParams(0.8, (1.0, 1.6, 2.4))
        opts = IntegrationOptions(record_every=1.0 / p.gamma)
        traj = pd.integrate(p, np.array([2.4, 1.6, 1.0]) / p.gamma, opts)
        for t_ev, i, j in pd.detect_ordering_events(traj):
            assert 0.0 <= t_ev <= traj.t_end
            k = np.searchsorted(traj.times, t_ev)
            # difference changes sign across the enclosing sample pair
            lo = max(k - 1, 0)
            hi = min(k + 1, len(traj.times) - 1)
            d_lo = traj.states[lo][i] - traj.states[lo][j]
            d_hi = traj.states[hi][i] - traj.states[hi][j]
            assert d_lo * d_hi <= 0


class TestBasinSample:
    def test_deterministic_given_seed(self):
        p = MarketParams(0.9, (1.0, 1.5))
        box = (np.zeros(2), p.a / p.gamma)
        first = pd.basin_sample(p, box, 5, seed=42)
        second = pd.basin_sample(p, box, 5, seed=42)
        for (s0a, la), (s0b, lb) in zip(first, second):
            np.testing.assert_array_equal(s0a, s0b)
            np.testing.assert_array_equal(la, lb)

    def test_stationary_start_converges_to_itself(self):
        p = MarketParams(2 / 5, (1.0, 1.0, 1.0))
        point = np.full(3, 5 / 6)
        [(s0, limit)] = pd.basin_sample(p, (point, point), 1, seed=0)
        np.testing.assert_allclose(limit, point, atol=1e-12)

    def test_contractive_regime_single_limit(self):
        p = MarketParams(1.6, (1.0, 2.0, 3.0))
        box = (np.zeros(3), p.a / p.gamma)
        results = pd.basin_sample(p, box, 12, seed=7)
        limits = [lim for _, lim in results]
        assert all(lim is not None for lim in limits)
        ref = limits[0]
        assert max(np.max(np.abs(lim - ref)) for lim in limits) < 1e-6

    def test_homogeneous_three_basins(self):
        p = MarketParams(2 / 7, (1.0, 1.0, 1.0))
        box = (np.zeros(3), p.a / p.gamma)
        results = pd.basin_sample(p, box, 200, seed=3)
        assert all(lim is not None for lim in results)
        stable = sorted(oracles.STABLE_N3_G27, reverse=True)
        reps = []
        for _, lim in results:
            expected = np.empty(3)
            leader = int(np.argmax(lim))
            expected[:] = stable[1]
            expected[leader] = stable[0]
            np.testing.assert_allclose(lim, expected, atol=1e-7)
            if not any(np.max(np.abs(lim - r)) < 1e-6 for r in reps):
                reps.append(lim)
        assert len(reps) <= 3

    def test_validation(self):
        p = MarketParams(1.0, (1.0, 2.0))
        with pytest.raises(ValueError):
            pd.basin_sample(p, (np.zeros(2), np.ones(2)), 0, seed=1)
        with pytest.raises(ValueError):
            pd.basin_sample(p, (np.ones(2), np.zeros(2)), 3, seed=1)
