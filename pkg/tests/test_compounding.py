import numpy as np
import pytest
from hypothesis import given, strategies as st

from failsafe_imitation.compounding import (
    LEFT,
    RIGHT,
    S_D,
    STATES,
    build_counterexample,
    check_bounds,
    gap_closed_form,
    gap_shifted_index,
    kappa_term,
    make_policies,
    occupancy,
    point_mass,
    propagate,
    random_safe_policy,
    reachable,
    stationary_init,
    sweep,
    tv_distance,
    value,
)

SIDE = STATES.index((1, 0, RIGHT))
deltas = st.floats(0.0, 1.0, allow_nan=False)


class TestStructure:
    def test_costs(self):
        np.testing.assert_array_equal(build_counterexample(5).cost, [0, 1, 1, 1, 1])

    def test_u_cycle_reachable_states(self):
        mdp = build_counterexample(10)
        reach = reachable(mdp, make_policies(mdp, 0.1)["U"])
        assert len(reach - {S_D}) == 3
        assert SIDE not in reach

    def test_side_strip_absorbing(self):
        mdp = build_counterexample(10)
        safe = mdp.safe_actions()
        assert safe[SIDE].any()
        assert all(mdp.succ[SIDE, a] == SIDE for a in np.flatnonzero(safe[SIDE]))

    def test_o_never_enters_unsafe(self):
        mdp = build_counterexample(10)
        O = make_policies(mdp, 0.3)["O"]
        assert not mdp.unsafe[list(reachable(mdp, O))].any()

    def test_short_horizon_rejected(self):
        with pytest.raises(ValueError):
            build_counterexample(1)


class TestPolicies:
    @given(deltas)
    def test_rows_are_distributions(self, delta):
        mdp = build_counterexample(4)
        for pi in make_policies(mdp, delta).values():
            np.testing.assert_allclose(pi.sum(axis=1), 1.0, atol=1e-12)
            assert not (pi[~mdp.allowed] != 0).any()

    def test_delta_zero_all_equal_on_demonstrator_path(self):
        mdp = build_counterexample(6)
        pols = make_policies(mdp, 0.0)
        runs = [propagate(mdp, p, point_mass(mdp)) for p in pols.values()]
        for r in runs:
            np.testing.assert_array_equal(r, runs[0])

    def test_delta_one_absorbed_by_stage_three(self):
        mdp = build_counterexample(6)
        dist = propagate(mdp, make_policies(mdp, 1.0)["O"], point_mass(mdp))
        assert dist[2, SIDE] == 1.0 and dist[5, SIDE] == 1.0

    def test_u_recovers_from_close_state(self):
        mdp = build_counterexample(6)
        U = make_policies(mdp, 0.2)["U"]
        start = STATES.index((1, 0, LEFT))
        dist = propagate(mdp, U, point_mass(mdp, start))
        # (1,0,l) -> (1,-1,l) -> (0,0,l)
        assert dist[2, S_D] == 1.0

    def test_bad_delta(self):
        with pytest.raises(ValueError):
            make_policies(build_counterexample(3), 1.5)


class TestPropagation:
    def test_demonstrator_point_mass(self):
        mdp = build_counterexample(8)
        dist = propagate(mdp, make_policies(mdp, 0.1)["D"], point_mass(mdp))
        assert (dist[:, S_D] == 1.0).all()

    @given(deltas)
    def test_u_stationary_fixed_point(self, delta):
        mdp = build_counterexample(12)
        init = stationary_init(mdp, delta)
        dist = propagate(mdp, make_policies(mdp, delta)["U"], init)
        np.testing.assert_allclose(dist, np.broadcast_to(init, dist.shape), atol=1e-12)

    def test_o_leave_probability(self):
        mdp = build_counterexample(3)
        dist = propagate(mdp, make_policies(mdp, 0.1)["O"], point_mass(mdp))
        assert 1.0 - dist[2, S_D] == pytest.approx(0.19, abs=1e-12)

    @given(deltas, st.integers(2, 40))
    def test_mass_conserved(self, delta, T):
        mdp = build_counterexample(T)
        for pi in make_policies(mdp, delta).values():
            np.testing.assert_allclose(propagate(mdp, pi, point_mass(mdp)).sum(axis=1), 1.0, atol=1e-12)
            assert occupancy(mdp, pi, point_mass(mdp)).sum() == pytest.approx(1.0, abs=1e-12)


class TestTVAndValue:
    def test_tv_identical_and_disjoint(self):
        a = np.array([[0.5, 0.5], [0, 0]])
        assert tv_distance(a, a) == 0.0
        assert tv_distance(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 1.0

    def test_tv_demonstrator_vs_u_stationary(self):
        mdp = build_counterexample(20)
        pols = make_policies(mdp, 0.1)
        rho_d = occupancy(mdp, pols["D"], point_mass(mdp))
        rho_u = occupancy(mdp, pols["U"], stationary_init(mdp, 0.1))
        assert tv_distance(rho_u, rho_d) == pytest.approx(0.4 / 1.3, abs=1e-12)

    @given(st.integers(2, 50))
    def test_demonstrator_value_zero(self, T):
        mdp = build_counterexample(T)
        assert value(mdp, make_policies(mdp, 0.3)["D"], point_mass(mdp)) == 0.0

    def test_o_gap_example(self):
        mdp = build_counterexample(3)
        assert value(mdp, make_policies(mdp, 0.1)["O"], point_mass(mdp)) == pytest.approx(0.29, abs=1e-12)

    @given(st.floats(0.1, 10.0))
    def test_value_linear_in_cost(self, lam):
        mdp = build_counterexample(7)
        O = make_policies(mdp, 0.2)["O"]
        v = value(mdp, O, point_mass(mdp))
        assert value(mdp.with_cost(lam * mdp.cost), O, point_mass(mdp)) == pytest.approx(lam * v, rel=1e-12)


class TestBounds:
    def test_demonstrator_linear_equality(self):
        mdp = build_counterexample(10)
        r = check_bounds(10, "linear", policy=make_policies(mdp, 0.0)["D"])
        assert r.holds and r.eps == 0.0 and r.gap == 0.0 and r.bound == 0.0

    def test_worked_example(self):
        exact = 10 - (1 - 0.95 ** 10) / 0.05
        assert gap_closed_form(0.05, 10) == pytest.approx(exact, rel=1e-14)
        lo = check_bounds(10, "lower", delta=0.05)
        up = check_bounds(10, "upper", delta=0.05)
        assert lo.holds and up.holds
        assert lo.bound == pytest.approx(0.625) and up.bound == pytest.approx(80.0)
        assert lo.gap == pytest.approx(1.9747, abs=1e-4)

    def test_shifted_index_convention(self):
        mdp = build_counterexample(3)
        dist = propagate(mdp, make_policies(mdp, 0.1)["O"], point_mass(mdp))
        # one stage later than the shifted convention
        assert 1.0 - dist[2, S_D] == pytest.approx(1 - 0.9 ** 2, abs=1e-12)
        assert gap_shifted_index(0.1, 3) == pytest.approx(0.1 + 0.19 + 0.271, abs=1e-12)
        assert gap_shifted_index(0.1, 3) - gap_closed_form(0.1, 3) == pytest.approx(1 - 0.9 ** 3)

    def test_lower_form_requires_small_delta_t(self):
        with pytest.raises(ValueError):
            check_bounds(100, "lower", delta=0.05)

    @pytest.mark.parametrize("delta", [0.001, 0.005, 0.01])
    def test_doubling_near_quadratic(self, delta):
        for T in (5, 10, 20):
            if delta * 2 * T <= 0.2:
                assert gap_closed_form(delta, 2 * T) / gap_closed_form(delta, T) >= 3.5

    def test_random_safe_policies_linear(self, rng):
        for T in (2, 10, 50):
            mdp = build_counterexample(T)
            for _ in range(30):
                assert check_bounds(T, "linear", policy=random_safe_policy(mdp, rng)).holds

    def test_random_safe_policy_is_safe(self, rng):
        mdp = build_counterexample(5)
        pi = random_safe_policy(mdp, rng)
        safe = mdp.safe_actions()
        rows = safe.any(axis=1)
        assert not (pi[rows] * ~safe[rows]).any()

    def test_kappa(self):
        for T in range(2, 200):
            assert 0.25 <= kappa_term(T) <= np.exp(-1)

    def test_sweep_rows(self):
        rows = sweep([2, 5, 10], [0.01, 0.1])
        assert len(rows) == 6
        for r in rows:
            assert r["closed_form_pass"] and r["upper_pass"]
            assert r["lower_pass"] or not r["lower_applicable"]

    def test_unknown_bound(self):
        with pytest.raises(ValueError):
            check_bounds(5, "nope", delta=0.1)
