import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_fit
from oracles import _prox_objective, grid_prox
from smoothot.errors import DegenerateSampleError, DimensionMismatchError, ProxError, ValidationError
from smoothot.smooth_map import (
    FittedMap,
    eval_map,
    fit,
    moreau_envelope,
    prox,
    smoothing_parameter,
    tilde_phi,
    transform,
)


def tiny_smoothing_map(lam=1e-9, **kw):
    """Two-point 1D map whose ramp is too narrow for a float certificate."""
    return FittedMap([[0.0], [1.0]], [[0.0], [1.0]], [0.0, 0.5], 0.25, lam, **kw)


class TestTildePhi:
    def test_left_piece(self, two_point_map):
        assert tilde_phi(two_point_map, [0.0]) == (0.0, frozenset({0}))

    def test_tie(self, two_point_map):
        assert tilde_phi(two_point_map, [0.5]) == (0.0, frozenset({0, 1}))

    def test_source_points_attain_own_piece(self):
        m = random_fit(2, 20, 0)
        for i in range(m.n):
            assert i in tilde_phi(m, m.sources[i])[1]

    def test_dimension_check(self, two_point_map):
        with pytest.raises(DimensionMismatchError):
            tilde_phi(two_point_map, [0.0, 1.0])


class TestProx:
    @pytest.mark.parametrize("x, z", [(1.0, 0.75), (0.0, 0.0), (0.5, 0.5)])
    def test_hand_values(self, two_point_map, x, z):
        r = prox(two_point_map, [x], tol_g=1e-14)
        assert r.z[0] == pytest.approx(z, abs=1e-12)

    def test_certificate_invariants(self, small_maps):
        rng = np.random.default_rng(0)
        for m in small_maps:
            for _ in range(50):
                x = rng.normal(size=m.d) * 2
                r = prox(m, x)
                assert r.weights.min() >= 0 and abs(r.weights.sum() - 1) <= 1e-12
                np.testing.assert_allclose((x - r.z) / m.smoothing, r.weights @ m.targets, atol=1e-9)
                assert r.gap_bound <= m.default_tol_g()

    def test_matches_grid_search(self, small_maps):
        rng = np.random.default_rng(1)
        for m in small_maps[:2]:
            lam = m.smoothing
            for _ in range(6):
                x = m.sources[rng.integers(m.n)] + rng.normal(size=m.d) * lam * 2
                r = prox(m, x)
                g = grid_prox(m.targets, m.psi, lam, x)
                f = lambda z: _prox_objective(m.targets, m.psi, lam, x, np.atleast_2d(z))[0]
                # the certified point is never worse than the grid point
                assert f(r.z) <= f(g) + 1e-12
                assert np.abs(r.z - g).max() <= 5e-5

    def test_exact_fallback_on_narrow_ramp(self):
        m = tiny_smoothing_map()
        x = 0.5 + 0.4 * m.smoothing
        r = prox(m, [x])
        assert r.exact
        assert r.gap_bound <= m.default_tol_g()
        assert r.value[0] == pytest.approx(0.4, abs=1e-6)

    def test_iteration_cap(self):
        with pytest.raises(ProxError) as info:
            prox(tiny_smoothing_map(lam=0.25), [0.6], max_iter=0)
        assert info.value.best_gap > 0

    def test_bad_tolerance(self, two_point_map):
        with pytest.raises(ValidationError):
            prox(two_point_map, [0.1], tol_g=0.0)

    def test_deterministic(self, small_maps):
        m = small_maps[1]
        x = m.sources[0] * 0.5 + m.sources[1] * 0.5
        a, b = prox(m, x), prox(m, x)
        np.testing.assert_array_equal(a.z, b.z)
        np.testing.assert_array_equal(a.weights, b.weights)


class TestEvalMap:
    @pytest.mark.parametrize("x, y", [(0.0, 0.0), (1.0, 1.0), (0.6, 0.4), (-5.0, 0.0), (10.0, 1.0)])
    def test_ramp(self, two_point_map, x, y):
        assert eval_map(two_point_map, [x])[0] == pytest.approx(y, abs=1e-6)

    @pytest.mark.parametrize("d, n, seed", [(1, 10, 0), (2, 30, 1), (5, 20, 2), (3, 50, 3)])
    def test_interpolation(self, d, n, seed):
        m = random_fit(d, n, seed)
        out = transform(m, m.sources).points
        assert np.linalg.norm(out - m.targets, axis=1).max() <= m.map_tol

    def test_non_decreasing_in_one_dimension(self):
        m = random_fit(1, 25, 4)
        grid = np.linspace(m.sources.min() - 1, m.sources.max() + 1, 2001)[:, None]
        vals = transform(m, grid).points[:, 0]
        assert np.all(np.diff(vals) >= -2 * m.map_tol)

    def test_gradient_of_envelope(self, small_maps):
        rng = np.random.default_rng(2)
        for m in small_maps:
            h = m.smoothing * 1e-3
            for _ in range(20):
                x = rng.normal(size=m.d) * 2
                # skip points whose FD stencil straddles a change of active set
                supports = {prox(m, x + s * h * e).support for e in np.eye(m.d) for s in (-1, 1)}
                if len(supports) > 1:
                    continue
                fd = np.array([
                    (moreau_envelope(m, x + h * e) - moreau_envelope(m, x - h * e)) / (2 * h) for e in np.eye(m.d)
                ])
                np.testing.assert_allclose(fd, eval_map(m, x), atol=1e-6)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from([(1, 10, 0), (2, 12, 1), (3, 15, 2)]), st.integers(0, 2**31 - 1))
def test_monotone_lipschitz_and_hull(cfg, seed):
    m = random_fit(*cfg)
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, m.d)) * 2
    tx, ty = eval_map(m, x), eval_map(m, y)
    dist = np.linalg.norm(x - y)
    assert (tx - ty) @ (x - y) >= -2 * m.map_tol * dist
    assert np.linalg.norm(tx - ty) <= dist / m.smoothing + 2 * m.map_tol
    lo, hi = m.targets.min(axis=0), m.targets.max(axis=0)
    assert np.all(tx >= lo - 1e-12) and np.all(tx <= hi + 1e-12)


class TestTransform:
    def test_fit_points(self, two_point_map):
        np.testing.assert_allclose(transform(two_point_map, [[0.0], [1.0]]).points[:, 0], [0.0, 1.0], atol=1e-6)

    def test_ramp_points(self, two_point_map):
        out = transform(two_point_map, [[0.5], [0.6], [0.75]]).points[:, 0]
        np.testing.assert_allclose(out, [0.0, 0.4, 1.0], atol=1e-6)

    def test_dimension_mismatch(self, two_point_map):
        with pytest.raises(DimensionMismatchError):
            transform(two_point_map, [[0.0, 1.0]])

    def test_failures_reported_by_row(self):
        m = tiny_smoothing_map(lam=0.25, max_iter=0)
        with pytest.raises(ProxError) as info:
            transform(m, [[0.6], [0.0], [0.7]])
        assert info.value.rows == [0, 2]


class TestFit:
    def test_identity_example(self, two_point_map):
        assert two_point_map.eps0 == 0.25 and two_point_map.smoothing == 0.25
        np.testing.assert_array_equal(two_point_map.psi, [0.0, 0.5])

    def test_shifted_example(self):
        m = fit([[0.0], [1.0]], [[2.0], [3.0]])
        assert m.eps0 == 0.25
        np.testing.assert_array_equal(m.psi, [0.0, 0.5])
        np.testing.assert_array_equal(m.targets[:, 0], [2.0, 3.0])
        np.testing.assert_allclose(transform(m, [[0.0], [1.0]]).points[:, 0], [2.0, 3.0], atol=1e-6)

    def test_duplicates_are_degenerate(self):
        with pytest.raises(DegenerateSampleError):
            fit([[0.0], [0.0], [1.0]], [[0.0], [0.0], [2.0]])

    def test_unequal_sizes_are_aligned(self):
        rng = np.random.default_rng(0)
        m = fit(rng.normal(size=(12, 2)), rng.normal(size=(9, 2)), seed=4)
        assert m.n == 9 and m.meta["n0"] == 12 and m.meta["seed"] == 4


def test_smoothing_keeps_sources_in_their_cells():
    # with the LP margin as smoothing the second source would be sent to the first target
    src, tgt = np.array([[0.0], [1.0]]), np.array([[2.0], [3.0]])
    lam = smoothing_parameter(src, tgt, [0.0, 0.5], 0.25)
    assert lam < 0.25
    m = FittedMap(src, tgt, [0.0, 0.5], 0.25, lam)
    np.testing.assert_allclose(transform(m, src).points, tgt, atol=1e-9)
