import importlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brinkman_rb import _kernels
from brinkman_rb._kernels import _pykernels
from brinkman_rb.linalg import LinearProgram, enumerate_vertices_min


def _backends():
    out = [pytest.param(_pykernels, id="python")]
    try:
        out.append(pytest.param(importlib.import_module("brinkman_rb._kernels._ckernels"),
                                id="cython"))
    except ImportError:
        out.append(pytest.param(None, id="cython", marks=pytest.mark.skip("not built")))
    return out


BACKENDS = _backends()


def test_backend_flag():
    assert _kernels.BACKEND in ("cython", "python")


def test_pure_python_env_selects_fallback(monkeypatch):
    monkeypatch.setenv("BRINKMAN_RB_PURE_PYTHON", "1")
    mod = importlib.reload(_kernels)
    try:
        assert mod.BACKEND == "python"
        assert mod.bounded_simplex is _pykernels.bounded_simplex
    finally:
        monkeypatch.delenv("BRINKMAN_RB_PURE_PYTHON")
        importlib.reload(_kernels)


@pytest.mark.parametrize("k", BACKENDS)
def test_radical_inverse_base2(k):
    got = k.radical_inverse(np.arange(1, 8, dtype=np.int64), 2)
    np.testing.assert_array_equal(got, [0.5, 0.25, 0.75, 0.125, 0.625, 0.375, 0.875])


@pytest.mark.parametrize("k", BACKENDS)
def test_radical_inverse_base3(k):
    got = k.radical_inverse(np.arange(1, 5, dtype=np.int64), 3)
    np.testing.assert_allclose(got, [1 / 3, 2 / 3, 1 / 9, 4 / 9], rtol=0, atol=1e-16)


@pytest.mark.parametrize("k", BACKENDS)
def test_simplex_active_constraint(k):
    status, y, duals, _ = k.bounded_simplex(np.array([1.0, 1.0]), np.array([[1.0, 1.0]]),
                                            np.array([1.0]), np.zeros(2), np.ones(2), 1e-10,
                                            1000)
    assert status == _pykernels.STATUS_OPTIMAL
    assert y.sum() == pytest.approx(1.0)
    assert duals[0] == pytest.approx(1.0)


@pytest.mark.parametrize("k", BACKENDS)
def test_simplex_infeasible(k):
    status, *_ = k.bounded_simplex(np.array([1.0]), np.array([[1.0]]), np.array([2.0]),
                                   np.zeros(1), np.ones(1), 1e-10, 1000)
    assert status == _pykernels.STATUS_INFEASIBLE


def test_backends_agree_on_random_lps():
    ck = BACKENDS[1].values[0]
    if ck is None:
        pytest.skip("compiled kernels not built")
    rng = np.random.default_rng(7)
    for _ in range(30):
        n, m = rng.integers(1, 6), rng.integers(0, 8)
        c = rng.standard_normal(n)
        G = rng.standard_normal((m, n))
        h = G @ rng.random(n) - rng.random(m)  # feasible by construction
        a = _pykernels.bounded_simplex(c, G, h, np.zeros(n), np.ones(n), 1e-10, 5000)
        b = ck.bounded_simplex(c, G, h, np.zeros(n), np.ones(n), 1e-10, 5000)
        assert a[0] == b[0] == _pykernels.STATUS_OPTIMAL
        assert c @ a[1] == pytest.approx(c @ b[1], abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 4), st.integers(0, 6))
def test_simplex_matches_vertex_enumeration(seed, n, m):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(n)
    G = rng.standard_normal((m, n))
    h = G @ rng.random(n) - 0.1 * rng.random(m)
    for k in (b.values[0] for b in BACKENDS if b.values[0] is not None):
        status, y, _, _ = k.bounded_simplex(c, G, h, np.zeros(n), np.ones(n), 1e-10, 5000)
        assert status == _pykernels.STATUS_OPTIMAL
        best, _ = enumerate_vertices_min(LinearProgram(c, G, h, 0.0, 1.0))
        assert c @ y == pytest.approx(best, abs=1e-9)
