"""Linear assignment: exact values against scipy, duality, forbidden pairs."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment

from sigma.errors import NoFeasibleCompletion
from sigma.lap import (certified_lap_bound, max_matching_size, solve_lap,
                       solve_lap_max)


def scipy_value(cost):
    r, c = linear_sum_assignment(cost)
    return cost[r, c].sum()


class TestSolveLap:
    def test_identity_cost(self):
        cost = np.array([[0.0, 1, 1], [1, 0, 1], [1, 1, 0]])
        col, u, v, value = solve_lap(cost)
        np.testing.assert_array_equal(col, [0, 1, 2])
        assert value == 0.0

    def test_matches_scipy_random(self, rng):
        for n in (1, 2, 3, 5, 8, 13):
            for _ in range(20):
                cost = rng.normal(size=(n, n))
                _, _, _, value = solve_lap(cost)
                assert value == pytest.approx(scipy_value(cost), abs=1e-10)

    def test_assignment_injective_and_consistent(self, rng):
        cost = rng.normal(size=(7, 7))
        col, u, v, value = solve_lap(cost)
        assert len(np.unique(col)) == 7
        assert cost[np.arange(7), col].sum() == pytest.approx(value)

    def test_dual_feasible_and_tight(self, rng):
        # potentials satisfy u_i + v_j <= c_ij with equality on the matching
        cost = rng.normal(size=(9, 9))
        col, u, v, value = solve_lap(cost)
        slack = cost - u[:, None] - v[None, :]
        assert slack.min() > -1e-9
        np.testing.assert_allclose(slack[np.arange(9), col], 0, atol=1e-9)
        assert u.sum() + v.sum() == pytest.approx(value)

    def test_forbidden_entries_avoided(self):
        cost = np.array([[np.inf, 1.0], [2.0, np.inf]])
        col, _, _, value = solve_lap(cost)
        np.testing.assert_array_equal(col, [1, 0])
        assert value == 3.0

    def test_infeasible_raises(self):
        cost = np.array([[np.inf, np.inf], [1.0, 2.0]])
        with pytest.raises(NoFeasibleCompletion):
            solve_lap(cost)

    def test_deterministic_tie_break(self):
        # all-equal costs: first minimum wins, giving the identity
        col, _, _, _ = solve_lap(np.zeros((4, 4)))
        np.testing.assert_array_equal(col, [0, 1, 2, 3])

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            solve_lap(np.array([[np.nan, 1.0], [1.0, 0.0]]))


class TestSolveLapMax:
    def test_maximizes(self, rng):
        w = rng.normal(size=(6, 6))
        col, value = solve_lap_max(w)
        assert value == pytest.approx(-scipy_value(-w), abs=1e-10)
        assert w[np.arange(6), col].sum() == pytest.approx(value)

    def test_forbidden_stays_forbidden(self):
        w = np.array([[np.inf, 2.0], [3.0, np.inf]])
        # inf means forbidden in both orientations, not "great weight"
        w2 = np.array([[-np.inf, 2.0], [3.0, -np.inf]])
        col, value = solve_lap_max(w2)
        np.testing.assert_array_equal(col, [1, 0])
        assert value == 5.0
        col, value = solve_lap_max(np.where(np.isinf(w), -np.inf, w))
        assert value == 5.0


class TestCertifiedLapBound:
    def test_exact_on_clean_input(self, rng):
        cost = rng.normal(size=(8, 8))
        assert certified_lap_bound(cost) == pytest.approx(scipy_value(cost), abs=1e-10)

    def test_never_above_optimum(self, rng):
        for _ in range(50):
            cost = rng.normal(size=(5, 5)) * rng.uniform(0.1, 100)
            assert certified_lap_bound(cost) <= scipy_value(cost) + 1e-9

    def test_infeasible_propagates(self):
        cost = np.full((2, 2), np.inf)
        with pytest.raises(NoFeasibleCompletion):
            certified_lap_bound(cost)


class TestMaxMatchingSize:
    def test_full_matching(self):
        assert max_matching_size(np.eye(3, dtype=bool)) == 3

    def test_deficient(self):
        allowed = np.array([[True, False], [True, False]])
        assert max_matching_size(allowed) == 1

    def test_rectangular(self):
        allowed = np.ones((2, 5), dtype=bool)
        assert max_matching_size(allowed) == 2


@given(st.integers(min_value=1, max_value=7), st.integers(min_value=0, max_value=1000))
def test_lap_duality_property(n, seed):
    rng = np.random.default_rng(seed)
    cost = np.round(rng.normal(size=(n, n)) * 10, 3)
    col, u, v, value = solve_lap(cost)
    # weak duality: any feasible dual is a lower bound; ours is optimal
    assert u.sum() + v.sum() == pytest.approx(value, abs=1e-9)
    assert value == pytest.approx(scipy_value(cost), abs=1e-9)
    slack = cost - u[:, None] - v[None, :]
    assert slack.min() > -1e-9
