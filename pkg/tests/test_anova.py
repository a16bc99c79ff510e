import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brinkman_rb.anova import (AnovaGrid, AnovaState, MissingTermError, _embed, direction,
                               gauss_legendre, gram_norm, next_level_directions)


def _state(f, lower, upper, p, level, anchor=None):
    grid = AnovaGrid(lower, upper, p, anchor)
    s = AnovaState(grid)
    s.activate_up_to(level)
    vals = np.array([np.atleast_1d(f(x)) for x in s.points.coordinates()])
    s.compute_terms(vals)
    return s


def _tensor_moments(f, grid):
    """Mean and variance by the full tensor Gauss rule (brute force)."""
    M = grid.M
    mean = 0.0
    second = 0.0
    for multi in itertools.product(range(grid.p), repeat=M):
        x = grid.nodes[np.arange(M), multi]
        w = np.prod(grid.weights[np.arange(M), multi])
        v = np.atleast_1d(f(x))
        mean = mean + w * v
        second = second + w * v * v
    return mean, second - mean**2


# -- quadrature ---------------------------------------------------------------


@pytest.mark.parametrize("p", [1, 2, 3, 5, 8])
def test_gauss_legendre_exact_to_degree(p):
    a, b = 0.3, 1.7
    x, w = gauss_legendre(p, (a, b))
    for k in range(2 * p):
        exact = (b ** (k + 1) - a ** (k + 1)) / (k + 1)
        assert w @ x**k == pytest.approx(exact, rel=1e-12)


def test_grid_weights_are_probabilities():
    g = AnovaGrid([0.0, 1.0, 2.0], [1.0, 3.0, 2.0], 5)
    np.testing.assert_allclose(g.weights.sum(axis=1), 1.0, rtol=1e-14)
    np.testing.assert_array_equal(g.nodes[:, 2], g.anchor)
    np.testing.assert_array_equal(g.nodes[2], 2.0)  # zero-width coordinate


def test_direction_rejects_repeats():
    assert direction((3, 1)) == (1, 3)
    with pytest.raises(ValueError):
        direction((1, 1))


# -- terms ------------------------------------------------------------------


def test_first_order_terms_are_anchor_differences():
    f = lambda x: np.array([np.exp(x[0]) + x[1] ** 3 + x[0] * x[1], x[2]])
    s = _state(f, [0, 0, 0], [1, 2, 1], 4, 1)
    c = s.grid.anchor
    np.testing.assert_allclose(s.terms[()], f(c))
    for m in range(3):
        for j in range(4):
            x = c.copy()
            x[m] = s.grid.nodes[m, j]
            np.testing.assert_allclose(s.terms[(m,)][j], f(x) - f(c), atol=1e-14)


def test_second_order_term_of_bilinear():
    s = _state(lambda x: np.array([x[0] * x[1]]), [0, 0], [1, 1], 3, 2)
    g = s.grid
    expect = np.multiply.outer(g.nodes[0] - g.anchor[0], g.nodes[1] - g.anchor[1])
    np.testing.assert_allclose(s.terms[(0, 1)][..., 0], expect, atol=1e-15)


def test_additive_function_has_no_interactions():
    f = lambda x: np.array([np.sin(x[0]) + x[1] ** 2 + np.cos(3 * x[2])])
    s = _state(f, [0, 0, 0], [1, 1, 1], 5, 2)
    for T in itertools.combinations(range(3), 2):
        assert np.max(np.abs(s.terms[T])) < 1e-14


def test_reconstruction_at_grid_points():
    f = lambda x: np.array([np.exp(x[0] * x[1] - x[2]), x[0] * x[1] * x[2]])
    s = _state(f, [0, 0, 0], [1, 1, 1], 3, 3)
    for j, key in enumerate(s.points.keys):
        x = s.grid.point(key)
        total = s.terms[()].copy()
        for T in s.active[1:]:
            idx = tuple(dict(key).get(m, s.grid.mid) for m in T)
            total = total + s.terms[T][idx]
        np.testing.assert_allclose(total, f(x), atol=1e-13)


def test_missing_lower_term_detected():
    grid = AnovaGrid([0, 0], [1, 1], 3)
    s = AnovaState(grid)
    s.activate(2, [(0, 1)])
    with pytest.raises(MissingTermError):
        s.compute_terms(np.ones((len(s.points), 1)))


def test_activate_checks_order():
    s = AnovaState(AnovaGrid([0, 0], [1, 1], 3))
    with pytest.raises(ValueError):
        s.activate(2, [(0,)])


# -- point sets -------------------------------------------------------------


def test_level_one_point_count_for_81_parameters():
    grid = AnovaGrid(np.zeros(81), np.ones(81), 5)
    s = AnovaState(grid)
    s.activate_up_to(1)
    assert len(s.points) == 1 + 81 * 4 == 325


@pytest.mark.parametrize("p", [2, 3, 4, 5])
def test_point_counts_and_deduplication(p):
    M = 4
    s = AnovaState(AnovaGrid(np.zeros(M), np.ones(M), p))
    s.activate_up_to(2)
    q = p - 1 if p % 2 else p
    assert len(s.points) == 1 + M * q + M * (M - 1) // 2 * q * q
    coords = s.points.coordinates()
    assert len(np.unique(coords, axis=0)) == len(coords)


# -- moments -------------------------------------------------------------


def _box_mean(c, a, b):
    q = np.polyint(np.poly1d(c))
    return (q(b) - q(a)) / (b - a)


@pytest.mark.parametrize("p", [2, 3, 4])
def test_mean_exact_for_degree_2p_minus_1(p):
    rng = np.random.default_rng(p)
    lo, hi = np.array([0.5, 1.0, -1.0]), np.array([1.5, 4.0, 0.0])
    coef = [rng.standard_normal(2 * p) for _ in range(3)]  # degree 2p - 1 each
    f = lambda x: np.array([np.prod([np.polyval(c, xi) for c, xi in zip(coef, x)])])
    s = _state(f, lo, hi, p, 3)
    exact = np.prod([_box_mean(c, lo[i], hi[i]) for i, c in enumerate(coef)])
    assert s.mean()[0] == pytest.approx(exact, rel=1e-11)


@pytest.mark.parametrize("p", [3, 4])
def test_variance_exact_for_degree_p_minus_1(p):
    rng = np.random.default_rng(10 + p)
    lo, hi = np.zeros(3), np.array([1.0, 2.0, 0.5])
    coef = [rng.standard_normal(p) for _ in range(3)]  # degree p - 1 each
    f = lambda x: np.array([np.prod([np.polyval(c, xi) for c, xi in zip(coef, x)])])
    s = _state(f, lo, hi, p, 3)
    m1 = np.prod([np.polyint(np.poly1d(c))(hi[i]) - np.polyint(np.poly1d(c))(lo[i])
                  for i, c in enumerate(coef)] / (hi - lo))
    m2 = np.prod([np.polyint(np.poly1d(c) ** 2)(hi[i]) - np.polyint(np.poly1d(c) ** 2)(lo[i])
                  for i, c in enumerate(coef)] / (hi - lo))
    assert s.variance()[0] == pytest.approx(m2 - m1**2, rel=1e-10)


def test_full_expansion_matches_tensor_rule():
    f = lambda x: np.array([np.exp(x[0] - 2 * x[1] * x[2]), np.sin(x[0] * x[2]) + x[1]])
    s = _state(f, [0, 0, 0], [1, 1, 1], 4, 3)
    mean, var = _tensor_moments(f, s.grid)
    np.testing.assert_allclose(s.mean(), mean, rtol=1e-12)
    np.testing.assert_allclose(s.variance(), var, rtol=1e-10)


def _covariance_oracle(s, S, T):
    U = tuple(sorted(set(S) | set(T)))
    w = s.grid.direction_weights(U)
    a = _embed(s.terms[S] - s.means[S], S, U)
    b = _embed(s.terms[T] - s.means[T], T, U)
    prod = np.broadcast_to(a * b, w.shape + (a.shape[-1],))
    return np.tensordot(w, prod, axes=len(U))


def test_covariance_matches_union_grid_oracle():
    f = lambda x: np.array([np.exp(x[0] * x[1]) + x[2] ** 3 * x[1], np.cos(x.sum())])
    s = _state(f, [0, 0, 0], [1, 1, 1], 3, 2)
    for S, T in [((0,), (0, 1)), ((0, 1), (1, 2)), ((1,), (1,)), ((0, 1), (0, 1)),
                 ((0,), (1, 2)), ((0, 2), (1,))]:
        np.testing.assert_allclose(s.covariance(S, T), _covariance_oracle(s, S, T),
                                   atol=1e-14)
        outer = s.covariance(S, T, outer=True)
        np.testing.assert_allclose(np.diag(outer), s.covariance(S, T), atol=1e-14)


def test_disjoint_covariance_vanishes():
    f = lambda x: np.array([np.exp(x[0]) * x[1] + x[2]])
    s = _state(f, [0, 0, 0], [1, 1, 1], 4, 2)
    assert abs(s.covariance((0,), (1, 2))[0]) < 1e-15
    assert abs(s.covariance((0, 1), (2,))[0]) < 1e-15


def test_self_covariance_is_term_variance():
    f = lambda x: np.array([np.exp(x[0])])
    s = _state(f, [0], [2], 5, 1)
    w = s.grid.weights[0]
    phi = s.terms[(0,)][:, 0]
    assert s.covariance((0,), (0,))[0] == pytest.approx(w @ phi**2 - (w @ phi) ** 2)


def test_outer_variance_diagonal():
    f = lambda x: np.array([x[0] * x[1], x[0] + x[1] ** 2, np.exp(x[1])])
    s = _state(f, [0, 0], [1, 1], 3, 2)
    np.testing.assert_allclose(np.diag(s.variance(outer=True)), s.variance(), atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 5))
def test_moments_linear_and_variance_nonnegative(seed, p):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((3, 3))
    f = lambda x: np.array([np.exp(A[0] @ x), np.sin(A[1] @ x), (A[2] @ x) ** 2])
    g = lambda x: np.array([x[0] * x[1], x[2], 1.0])
    a, b = rng.standard_normal(2)
    h = lambda x: a * f(x) + b * g(x)
    sf, sg, sh = (_state(q, [0, 0, 0], [1, 1, 1], p, 2) for q in (f, g, h))
    np.testing.assert_allclose(sh.mean(), a * sf.mean() + b * sg.mean(), atol=1e-12)
    assert np.all(sf.variance() >= -1e-12)


def test_zero_width_box_gives_point_values():
    c = np.array([0.3, 0.7])
    f = lambda x: np.array([np.exp(x[0] * x[1])])
    s = _state(f, c, c, 3, 2)
    assert s.mean()[0] == pytest.approx(f(c)[0])
    assert abs(s.variance()[0]) < 1e-15


# -- adaptivity -------------------------------------------------------------


def test_indicator_definition():
    f = lambda x: np.array([1.0 + x[0], 2 * x[1] ** 2])
    s = _state(f, [0, 0], [1, 1], 3, 1)
    norm = lambda v: float(np.linalg.norm(v))
    ind = s.indicator((1,), norm)
    assert ind == pytest.approx(norm(s.means[(1,)]) / norm(s.means[()]))


def test_degenerate_indicator_keeps_direction():
    s = _state(lambda x: np.array([x[0] - 0.5]), [0, 0], [1, 1], 3, 1)
    norm = lambda v: float(np.linalg.norm(v))
    assert s.indicator((0,), norm) == np.inf
    assert (0,) in s.degenerate


def test_next_level_rules():
    assert next_level_directions([()], 0, 3) == [(0,), (1,), (2,)]
    assert next_level_directions([], 0, 3) == []
    assert next_level_directions([(0,), (2,)], 1, 3) == [(0, 2)]
    assert next_level_directions([(0,), (1,), (2,)], 1, 3) == [(0, 1), (0, 2), (1, 2)]
    assert next_level_directions([(0, 1), (1, 2)], 2, 3) == []
    assert next_level_directions([(0, 1), (0, 2), (1, 2)], 2, 3) == [(0, 1, 2)]


@settings(max_examples=50, deadline=None)
@given(st.integers(3, 6), st.integers(1, 3), st.data())
def test_next_level_subsets_all_effective(M, level, data):
    cands = list(itertools.combinations(range(M), level))
    eff = data.draw(st.lists(st.sampled_from(cands), unique=True))
    for U in next_level_directions(eff, level, M):
        assert len(U) == level + 1
        assert all(S in set(eff) for S in itertools.combinations(U, level))


def test_select_next_level_thresholds():
    f = lambda x: np.array([1.0 + 1e-3 * x[0] ** 2 + x[1] ** 2 + x[2] ** 2])
    s = _state(f, [0, 0, 0], [1, 1, 1], 3, 1)
    nxt = s.select_next_level(1, 1e-2, lambda v: float(np.abs(v).sum()))
    assert s.effective[1] == [(1,), (2,)]
    assert nxt == [(1, 2)]


def test_gram_norm_weights():
    M_V = np.diag([4.0, 1.0])
    M_Q = np.diag([9.0])
    norm = gram_norm(2, M_V, M_Q)
    assert norm(np.array([1.0, 0.0, 1.0])) == pytest.approx(2.0 + 3.0)
    assert gram_norm(2)(np.array([3.0, 4.0, -2.0])) == pytest.approx(7.0)
