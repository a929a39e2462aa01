import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smoothot.assignment import build_cost_matrix, pair_samples, solve_assignment
from smoothot.core import Dataset
from smoothot.errors import DimensionMismatchError, ValidationError


def brute_force(c):
    """Minimum cost and lexicographically first optimal permutation, by enumeration."""
    n = c.shape[0]
    best, best_perm = math.inf, None
    for perm in itertools.permutations(range(n)):
        cost = math.fsum(c[i, perm[i]] for i in range(n))
        if cost < best:
            best, best_perm = cost, perm
    return best, list(best_perm)


class TestCostMatrix:
    def test_single_pair(self):
        np.testing.assert_array_equal(build_cost_matrix([[0.0]], [[3.0]]).entries, [[9.0]])

    def test_identity_data(self):
        np.testing.assert_array_equal(build_cost_matrix([[0.0], [1.0]], [[0.0], [1.0]]).entries, [[0, 1], [1, 0]])

    def test_pythagorean(self):
        np.testing.assert_array_equal(build_cost_matrix([[0.0, 0.0]], [[3.0, 4.0]]).entries, [[25.0]])

    def test_size_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            build_cost_matrix([[0.0], [1.0]], [[0.0]])

    def test_non_square_solver_input(self):
        with pytest.raises(ValidationError):
            solve_assignment(np.zeros((2, 3)))


class TestSolveAssignment:
    def test_identity(self):
        sol = solve_assignment(build_cost_matrix([[0.0], [1.0]], [[0.0], [1.0]]))
        assert list(sol.permutation) == [0, 1] and sol.total_cost == 0.0

    def test_sorted_matching_1d(self):
        sol = solve_assignment(build_cost_matrix([[0.0], [1.0], [2.0]], [[5.0], [3.0], [4.0]]))
        assert list(sol.permutation) == [1, 2, 0]
        assert sol.total_cost == 27.0

    def test_translation_keeps_order(self):
        sol = solve_assignment(build_cost_matrix([[0.0], [1.0]], [[10.0], [11.0]]))
        assert list(sol.permutation) == [0, 1] and sol.total_cost == 200.0

    def test_lexicographic_tie_break(self):
        # every bijection is optimal on a constant matrix
        assert list(solve_assignment(np.ones((5, 5))).permutation) == [0, 1, 2, 3, 4]

    def test_tie_break_on_symmetric_data(self):
        # square corners matched to a rotated square: several optimal bijections
        sq = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
        c = build_cost_matrix(sq, sq[::-1]).entries
        sol = solve_assignment(c)
        best, lex = brute_force(c)
        assert sol.total_cost == best
        assert list(sol.permutation) == lex

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_enumeration_with_ties(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 7))
        c = rng.integers(0, 3, size=(n, n)).astype(float)
        sol = solve_assignment(c)
        best, lex = brute_force(c)
        assert sol.total_cost == best
        assert list(sol.permutation) == lex


class TestPairSamples:
    def test_reorders_targets(self):
        p = pair_samples([[0.0], [1.0], [2.0]], [[5.0], [3.0], [4.0]])
        np.testing.assert_array_equal(p.target.points[:, 0], [3.0, 4.0, 5.0])
        assert p.cost == 27.0

    def test_shift(self):
        p = pair_samples([[0.0], [1.0]], [[2.0], [3.0]])
        np.testing.assert_array_equal(p.target.points[:, 0], [2.0, 3.0])

    def test_identity_data(self):
        p = pair_samples([[0.0, 1.0], [2.0, 3.0]], [[0.0, 1.0], [2.0, 3.0]])
        np.testing.assert_array_equal(p.source.points, p.target.points)
        assert p.cost == 0.0

    def test_sorted_matching_random_1d(self):
        rng = np.random.default_rng(0)
        x, y = rng.normal(size=(40, 1)), rng.normal(size=(40, 1))
        p = pair_samples(x, y)
        order = np.argsort(x[:, 0])
        np.testing.assert_array_equal(p.target.points[order, 0], np.sort(y[:, 0]))

    def test_cyclically_monotone(self):
        rng = np.random.default_rng(1)
        p = pair_samples(rng.normal(size=(30, 3)), rng.normal(size=(30, 3)))
        for _ in range(200):
            k = int(rng.integers(2, 8))
            cyc = rng.choice(30, size=k, replace=False)
            assert p.cycle_sum(cyc) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_row_permutation_gives_same_pairs(n, d, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(n, d)), rng.normal(size=(n, d))
    p = pair_samples(x, y)
    px, py = rng.permutation(n), rng.permutation(n)
    q = pair_samples(x[px], y[py])
    pairs = lambda s: sorted(map(tuple, np.hstack([s.source.points, s.target.points])))
    assert pairs(p) == pairs(q)
