import filecmp

import numpy as np
import pytest

from brinkman_rb import driver
from brinkman_rb.driver import (ConfigError, ExperimentConfig, Moments, PhaseError, phase,
                                report_errors)
from brinkman_rb.params import halton_in_box


def tiny_config(tmp_path, **kw):
    d = dict(problem="iso", n_sub=2, n_elem=2, seed=3, quad_points=3, eps_RB=0.1,
             scm={"n_candidates": 100}, output_dir=str(tmp_path / "out"))
    d.update(kw)
    return ExperimentConfig.from_dict(d)


# -- configuration -----------------------------------------------------------


def test_config_round_trip(tmp_path):
    cfg = tiny_config(tmp_path, monte_carlo={"samples": 7})
    back = ExperimentConfig.loads(cfg.dumps())
    assert back == cfg
    assert back.scm.n_candidates == 100 and back.monte_carlo.samples == 7


def test_default_mesh_per_problem():
    assert ExperimentConfig(problem="iso").mesh.n_sub == 9
    assert ExperimentConfig(problem="aniso1").n_elem == 18


@pytest.mark.parametrize("bad", [{"problem": "cube"}, {"eps_RB": 0.0}, {"viscosity": -1.0},
                                 {"level_start": 3, "level_max": 2}, {"quad_points": 0},
                                 {"typo_key": 1}, {"scm": {"tol": 2.0}},
                                 {"monte_carlo": {"samples": -1}}, {"scm": {"bogus": 1}}])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(bad)


def test_load_config_resolves_paths(tmp_path):
    sub = tmp_path / "cfgs"
    sub.mkdir()
    (sub / "a.yaml").write_text("problem: iso\noutput_dir: res\nmonte_carlo:\n"
                                "  reference: ref/mc.npz\n")
    cfg = driver.load_config(sub / "a.yaml")
    assert cfg.output_dir == str((sub / "res").resolve())
    assert cfg.monte_carlo.reference == str((sub / "ref" / "mc.npz").resolve())


def test_load_config_unreadable(tmp_path):
    with pytest.raises(ConfigError):
        driver.load_config(tmp_path / "missing.yaml")
    (tmp_path / "bad.yaml").write_text("problem: [unclosed\n")
    with pytest.raises(ConfigError):
        driver.load_config(tmp_path / "bad.yaml")


def test_phase_tags_failures():
    with pytest.raises(PhaseError, match="phase 'assembly' failed: ZeroDivisionError"):
        with phase("assembly"):
            1 / 0


# -- Monte Carlo ---------------------------------------------------------------


@pytest.fixture(scope="module")
def tiny_problem(tmp_path_factory):
    cfg = tiny_config(tmp_path_factory.mktemp("mc"))
    return driver.setup_problem(cfg, write=False)


def test_single_sample_is_the_first_halton_point(tiny_problem):
    prob = tiny_problem
    m = driver.monte_carlo_reference(prob, 1)
    xi = halton_in_box(1, prob.box, start=1)[0]
    from brinkman_rb.fem import HighFidelitySolver
    s = HighFidelitySolver(prob.ops, prob.dec).solve(xi)
    np.testing.assert_array_equal(m.mean_u, s.u)
    np.testing.assert_array_equal(m.mean_p, s.p)
    assert np.all(m.var_u == 0) and np.all(m.var_p == 0)


def test_zero_width_box_has_zero_variance(tmp_path):
    prob = driver.setup_problem(tiny_config(tmp_path, zero_width=True), write=False)
    m = driver.monte_carlo_reference(prob, 6, every=4)
    assert np.all(m.var_u == 0) and np.all(m.var_p == 0)


def test_analytic_toy_moments(tiny_problem):
    prob = tiny_problem
    n = prob.ops.n_u + prob.ops.n_p
    a, b = prob.box.lower[0], prob.box.upper[0]
    m = driver.monte_carlo_reference(prob, 10000, solve=lambda xi: np.full(n, 1.0 / xi[0]),
                                     every=3000)
    mean = np.log(b / a) / (b - a)
    var = 1.0 / (a * b) - mean**2
    assert m.mean_u[0] == pytest.approx(mean, rel=1e-4)
    assert m.var_p[0] == pytest.approx(var, rel=1e-2)


def test_chunked_merge_matches_single_pass(tiny_problem):
    prob = tiny_problem
    n = prob.ops.n_u + prob.ops.n_p
    f = lambda xi: np.full(n, np.exp(xi).sum())
    one = driver.monte_carlo_reference(prob, 50, solve=f, every=50)
    many = driver.monte_carlo_reference(prob, 50, solve=f, every=7)
    np.testing.assert_allclose(many.mean_u, one.mean_u, rtol=1e-13)
    np.testing.assert_allclose(many.var_u, one.var_u, rtol=1e-10)


def test_checkpoint_resume_is_bitwise(tiny_problem, tmp_path):
    prob = tiny_problem
    n = prob.ops.n_u + prob.ops.n_p
    f = lambda xi: np.full(n, np.sin(xi).prod())
    ck = tmp_path / "ck.npz"
    driver.monte_carlo_reference(prob, 20, checkpoint=ck, solve=f, every=5)
    resumed = driver.monte_carlo_reference(prob, 40, checkpoint=ck, solve=f, every=5)
    fresh = driver.monte_carlo_reference(prob, 40, solve=f, every=5)
    np.testing.assert_array_equal(resumed.mean_u, fresh.mean_u)
    np.testing.assert_array_equal(resumed.var_p, fresh.var_p)


def test_monte_carlo_rejects_zero_samples(tiny_problem):
    with pytest.raises(ValueError):
        driver.monte_carlo_reference(tiny_problem, 0)


# -- error report ------------------------------------------------------------


def _moments(prob, rng):
    nu, npr = prob.ops.n_u, prob.ops.n_p
    return Moments(rng.random(nu), rng.random(nu), rng.random(npr), rng.random(npr))


def test_identical_moments_have_zero_error(tiny_problem, rng):
    m = _moments(tiny_problem, rng)
    assert all(r.rel_error == 0.0 and not r.absolute for r in report_errors(m, m,
                                                                           tiny_problem.ops))


def test_scaled_reference_error_is_half(tiny_problem, rng):
    ref = _moments(tiny_problem, rng)
    half = Moments(*(0.5 * getattr(ref, k) for k in ("mean_u", "var_u", "mean_p", "var_p")))
    for r in report_errors(half, ref, tiny_problem.ops):
        assert r.rel_error == pytest.approx(0.5, rel=1e-12)


def test_zero_reference_reports_absolute(tiny_problem, rng):
    m = _moments(tiny_problem, rng)
    ref = Moments(m.mean_u, np.zeros_like(m.var_u), m.mean_p, np.zeros_like(m.var_p))
    rows = {(r.moment, r.field): r for r in report_errors(m, ref, tiny_problem.ops)}
    v = rows[("variance", "velocity")]
    assert v.absolute and v.rel_error == v.abs_error > 0
    assert not rows[("mean", "pressure")].absolute


def test_combined_row_uses_concatenated_field(tiny_problem, rng):
    ops = tiny_problem.ops
    a, b = _moments(tiny_problem, rng), _moments(tiny_problem, rng)
    import scipy.sparse as sp
    W = sp.block_diag([ops.M_L2, ops.M_Q])
    d = np.concatenate([a.mean_u - b.mean_u, a.mean_p - b.mean_p])
    r = np.concatenate([b.mean_u, b.mean_p])
    rows = {(x.moment, x.field): x for x in report_errors(a, b, ops)}
    assert rows[("mean", "combined")].rel_error == pytest.approx(
        np.sqrt(d @ (W @ d) / (r @ (W @ r))), rel=1e-12)


# -- full runs ------------------------------------------------------------------


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("run")
    cfg = tiny_config(base, monte_carlo={"samples": 30, "checkpoint_every": 10})
    return cfg, driver.run_experiment(cfg)


def test_run_writes_artifacts(tiny_run):
    cfg, rep = tiny_run
    out = driver.Path(cfg.output_dir)
    for name in ("config.yaml", "intervals.json", "scm_coercivity.npz", "scm_continuity.npz",
                 "stability.json", "greedy_trace.csv", "anova_levels.csv", "basis.npz",
                 "moments.npz", "mean_u.csv", "var_u.csv", "mean_p.csv", "var_p.csv",
                 "mc_reference.npz", "errors.csv", "summary.json"):
        assert (out / name).exists(), name
    assert rep.counts["hf_solves"] == rep.counts["N_Q"] == rep.counts["N_V"] // 2
    assert rep.counts["max_divergence_residual"] < 1e-8
    assert len(rep.errors) == 6


def test_run_is_bit_reproducible(tiny_run, tmp_path):
    cfg, _ = tiny_run
    again = ExperimentConfig.from_dict(dict(cfg.to_dict(), output_dir=str(tmp_path / "b")))
    driver.run_experiment(again)
    for name in ("greedy_trace.csv", "anova_levels.csv", "mean_u.csv", "var_u.csv",
                 "mean_p.csv", "var_p.csv", "errors.csv"):
        assert filecmp.cmp(driver.Path(cfg.output_dir) / name, tmp_path / "b" / name,
                           shallow=False), name


def test_report_directory_reproduces_errors(tiny_run):
    cfg, rep = tiny_run
    rows = driver.report_directory(cfg.output_dir)
    assert [r.rel_error for r in rows] == [r.rel_error for r in rep.errors]


def test_reuse_stability_and_reference(tiny_run, tmp_path):
    cfg, rep = tiny_run
    d = dict(cfg.to_dict(), output_dir=str(tmp_path / "c"))
    d["monte_carlo"] = {"reference": str(driver.Path(cfg.output_dir) / "mc_reference.npz")}
    rep2 = driver.run_experiment(ExperimentConfig.from_dict(d), stability_dir=cfg.output_dir)
    assert [r.rel_error for r in rep2.errors] == [r.rel_error for r in rep.errors]
    assert not (tmp_path / "c" / "scm_coercivity.npz").exists()


def test_zero_width_run_has_zero_variance(tmp_path):
    rep = driver.run_experiment(tiny_config(tmp_path, zero_width=True))
    assert np.all(rep.moments.var_u == 0) and np.all(rep.moments.var_p == 0)
    assert rep.counts["hf_solves"] == 1


def test_effectivity_run(tmp_path):
    rows = driver.run_effectivity(tiny_config(tmp_path, eps_RB=1.0), samples=5)
    assert len(rows) == 5
    assert all(min(r.ratios) >= 1.0 for r in rows)
    assert (tmp_path / "out" / "effectivity.csv").exists()


def test_report_directory_missing_reference(tmp_path):
    cfg = tiny_config(tmp_path)
    driver.run_experiment(cfg)
    with pytest.raises(PhaseError, match="phase 'report'"):
        driver.report_directory(cfg.output_dir)
