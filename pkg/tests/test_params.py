import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brinkman_rb.params import (ANISO1, ANISO2, OutOfBoxError, ParameterBox, PermeabilityModel,
                                anchor_point, first_primes, generate_intervals, halton,
                                halton_in_box, interval_from, load_box, make_decomposition,
                                save_box)


def test_interval_formula():
    lo, hi = interval_from(-3.0, 0.1)
    assert lo == pytest.approx(0.9e-3) and hi == pytest.approx(1.1e-3)
    lo, hi = interval_from(-4.0, 0.05)
    assert (hi - lo) / (0.5 * (lo + hi)) == pytest.approx(0.1, rel=1e-14)


def test_iso_intervals_in_range():
    box = generate_intervals(PermeabilityModel("iso", 9, seed=42))
    assert box.M == 81
    assert box.lower.min() >= 0.85e-6 and box.upper.max() <= 1.15e-3


@pytest.mark.parametrize("kind, small_axis", [(ANISO1, "x"), (ANISO2, "y")])
def test_aniso_axis_ranges(kind, small_axis):
    model = PermeabilityModel(kind, 6, seed=3)
    box = generate_intervals(model)
    assert box.M == 72
    c = np.log10(box.anchor())
    for (_, ax), cm in zip(model.index_map(), c):
        if ax == small_axis:
            assert -6 - 0.1 <= cm <= -4.75 + 0.1
        else:
            assert -4.25 - 0.1 <= cm <= -3 + 0.1


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["iso", ANISO1, ANISO2]))
def test_relative_width_and_reproducibility(seed, kind):
    model = PermeabilityModel(kind, 2, seed=seed)
    a, b = generate_intervals(model), generate_intervals(model)
    np.testing.assert_array_equal(a.lower, b.lower)
    np.testing.assert_array_equal(a.upper, b.upper)
    r = (a.upper - a.lower) / (a.upper + a.lower)
    assert np.all(r >= 0.05 - 1e-12) and np.all(r <= 0.15 + 1e-12)


def test_anchor():
    assert anchor_point(ParameterBox([1e-9], [2.0]))[0] == pytest.approx(1.0)
    assert anchor_point(ParameterBox([0.9e-3], [1.1e-3]))[0] == pytest.approx(1e-3)


def test_box_validation():
    with pytest.raises(ValueError):
        ParameterBox([0.0], [1.0])
    with pytest.raises(ValueError):
        ParameterBox([2.0], [1.0])
    with pytest.raises(OutOfBoxError):
        ParameterBox([1.0], [2.0]).check([3.0])


def test_box_sidecar_round_trip(tmp_path):
    model = PermeabilityModel("iso", 3, seed=5)
    box = generate_intervals(model)
    save_box(box, tmp_path / "b.json", model)
    back = load_box(tmp_path / "b.json")
    np.testing.assert_array_equal(back.lower, box.lower)
    np.testing.assert_array_equal(back.upper, box.upper)


def test_halton_first_points():
    assert first_primes(5) == [2, 3, 5, 7, 11]
    h = halton(3, 2)
    np.testing.assert_allclose(h, [[0.5, 1 / 3], [0.25, 2 / 3], [0.75, 1 / 9]])
    box = ParameterBox([1.0, 2.0], [3.0, 6.0])
    pts = halton_in_box(50, box)
    assert np.all(pts >= box.lower) and np.all(pts <= box.upper)


def test_theta_values(small):
    dec = small.dec
    xi = np.full(dec.M, 1e-4)
    th = dec.theta_A(xi, check=False)
    assert th[0] == 1.0
    np.testing.assert_allclose(th[1:], 1e4)
    c = small.box.anchor()
    np.testing.assert_allclose(dec.theta_A(c)[1:], 2.0 / (small.box.lower + small.box.upper))
    assert len(dec.theta_f(c)) == small.ops.n_f
    with pytest.raises(OutOfBoxError):
        dec.theta_A(small.box.upper * 2)


def test_aniso_theta_lengths():
    from brinkman_rb.fem import MeshConfig, build_operators
    model = PermeabilityModel(ANISO1, 6)
    ops = build_operators(MeshConfig(6, 1), model_kind=model.fem_kind)
    dec = make_decomposition(ops, generate_intervals(model), model)
    c = dec.box.anchor()
    assert len(dec.theta_A(c)) == 73 and len(dec.theta_f(c)) == 7


def test_single_subdomain_assembly():
    from brinkman_rb.fem import MeshConfig, build_operators
    model = PermeabilityModel("iso", 1, seed=2)
    box = generate_intervals(model)
    ops = build_operators(MeshConfig(1, 3))
    dec = make_decomposition(ops, box, model)
    k = box.anchor()
    A, f = dec.assemble_at(ops, k)
    ref = ops.A_S + (1.0 / k[0]) * ops.darcy_blocks[0]
    assert abs(A - ref).max() <= 1e-15 * abs(ref).max()
    np.testing.assert_allclose(f, ops.f_components[0] + ops.f_components[1] / k[0])


def test_affine_structure(small, rng):
    ops, dec, box = small.ops, small.dec, small.box
    x1 = box.from_unit(rng.random(box.M))
    x2 = box.from_unit(rng.random(box.M))
    A1, _ = dec.assemble_at(ops, x1)
    A2, _ = dec.assemble_at(ops, x2)
    # same pattern, difference supported on the Darcy blocks only
    np.testing.assert_array_equal(A1.indices, A2.indices)
    diff = A1 - A2
    darcy = sum(abs(b) for b in ops.darcy_blocks)
    darcy.data[:] = 1.0
    assert abs(diff).multiply(darcy).sum() == pytest.approx(abs(diff).sum(), rel=1e-14)
    # doubling the Darcy coefficients
    A2x, _ = dec.assemble_at(ops, x1 / 2, check=False)
    ref = ops.A_S + 2 * (A1 - ops.A_S)
    assert abs(A2x - ref).max() <= 1e-12 * abs(ref).max()


def test_theta_lower_bound(small, rng):
    box = small.box
    for _ in range(20):
        th = small.dec.theta_A(box.from_unit(rng.random(box.M)))
        assert th[1:].min() >= 1.0 / box.upper.max()


def test_condition_estimate_magnitude(desk):
    import scipy.sparse.linalg as spla
    from brinkman_rb.fem import saddle_matrix
    A, _ = desk.dec.assemble_at(desk.ops, desk.box.anchor())
    K = saddle_matrix(desk.ops, A)
    lu = spla.splu(K.tocsc())
    inv = spla.LinearOperator(K.shape, matvec=lu.solve, rmatvec=lambda b: lu.solve(b, "T"))
    cond = spla.norm(K, 1) * spla.onenormest(inv)
    # the full-scale value is of order 1e4; at desk scale with nu in the drag it is ~1e6
    assert 1e3 < cond < 1e8
