"""Experiment orchestration: configuration, phases, Monte Carlo reference, reports.

A run goes through the phases ``assembly -> scm -> rb-anova -> monte-carlo ->
report``.  Any failure is re-raised as :class:`PhaseError` naming the phase.
Every output directory receives the resolved configuration, the generated
permeability intervals and all CSV/NPZ artifacts of the run.
"""

from __future__ import annotations

import contextlib
import csv
import dataclasses
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from ._kernels import BACKEND
from .fem import (PRESSURE, VELOCITY, AssembledOperators, BoundaryConditions,
                  HighFidelitySolver, MeshConfig, build_operators, write_field)
from .params import (KINDS, AffineDecomposition, ParameterBox, PermeabilityModel,
                     generate_intervals, halton_in_box, make_decomposition,
                     make_rng, save_box)
from .parallel import chunks, pmap
from .rb import ReducedModel, StabilityCache, rb_anova_drive
from .scm import (COERCIVITY, CONTINUITY, SCMConfig, SCMData, StabilityBounds,
                  compute_beta, compute_box, scm_train, write_trace)

log = logging.getLogger(__name__)

CONFIG_NAME = "config.yaml"
MC_NAME = "mc_reference.npz"
MOMENTS_NAME = "moments.npz"
BASIS_VERSION = 1

# full-scale grids of the three model problems
DEFAULT_MESH = {"iso": (9, 12), "aniso1": (6, 18), "aniso2": (6, 18)}


class ConfigError(ValueError):
    pass


class PhaseError(RuntimeError):
    def __init__(self, phase, message):
        super().__init__(f"phase '{phase}' failed: {message}")
        self.phase = phase


@contextlib.contextmanager
def phase(name):
    t = time.perf_counter()
    log.info("phase %s: start", name)
    try:
        yield
    except PhaseError:
        raise
    except Exception as exc:  # noqa: BLE001 - every failure is tagged with its phase
        raise PhaseError(name, f"{type(exc).__name__}: {exc}") from exc
    log.info("phase %s: done in %.2f s", name, time.perf_counter() - t)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class MonteCarloConfig:
    samples: int = 0  # 0 disables the reference run
    reference: str = None  # existing reference file to reuse
    checkpoint_every: int = 500


@dataclass
class ExperimentConfig:
    problem: str = "iso"
    n_sub: int = None
    n_elem: int = None
    viscosity: float = 1e-3
    inflow_peak: float = 1.0
    seed: int = 0
    zero_width: bool = False  # collapse every interval to its centre
    quad_points: int = 5
    eps_RB: float = 0.01
    eps_A: float = 1e-6
    level_start: int = 1
    level_max: int = 2
    memory_cap_gb: float = 2.0
    scm: SCMConfig = field(default_factory=SCMConfig)
    monte_carlo: MonteCarloConfig = field(default_factory=MonteCarloConfig)
    output_dir: str = "output"

    def __post_init__(self):
        if self.problem not in KINDS:
            raise ConfigError(f"problem must be one of {KINDS}, got {self.problem!r}")
        n_sub, n_elem = DEFAULT_MESH[self.problem]
        self.n_sub = n_sub if self.n_sub is None else int(self.n_sub)
        self.n_elem = n_elem if self.n_elem is None else int(self.n_elem)
        if self.n_sub < 1 or self.n_elem < 1:
            raise ConfigError("mesh sizes must be positive")
        for name in ("viscosity", "eps_RB", "eps_A", "memory_cap_gb"):
            if not float(getattr(self, name)) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.inflow_peak < 0:
            raise ConfigError("inflow_peak must be nonnegative")
        if self.quad_points < 1:
            raise ConfigError("quad_points must be at least 1")
        if not 1 <= self.level_start <= self.level_max:
            raise ConfigError("levels must satisfy 1 <= level_start <= level_max")
        if self.monte_carlo.samples < 0 or self.monte_carlo.checkpoint_every < 1:
            raise ConfigError("invalid Monte Carlo sample or checkpoint count")

    @property
    def mesh(self):
        return MeshConfig(self.n_sub, self.n_elem)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            scm = SCMConfig(**(d.pop("scm", None) or {}))
            mc = MonteCarloConfig(**(d.pop("monte_carlo", None) or {}))
            return cls(scm=scm, monte_carlo=mc, **d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def dumps(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def loads(cls, text):
        return cls.from_dict(yaml.safe_load(text))

    def save(self, path):
        Path(path).write_text(self.dumps())
        return path


def load_config(path):
    """Read a YAML experiment file; relative paths resolve against its folder."""
    path = Path(path)
    try:
        cfg = ExperimentConfig.loads(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    base = path.resolve().parent
    cfg.output_dir = str((base / cfg.output_dir).resolve())
    if cfg.monte_carlo.reference:
        cfg.monte_carlo.reference = str((base / cfg.monte_carlo.reference).resolve())
    return cfg


# ---------------------------------------------------------------------------
# problem set-up


@dataclass
class Problem:
    cfg: ExperimentConfig
    ops: AssembledOperators
    model: PermeabilityModel
    box: ParameterBox
    dec: AffineDecomposition

    @property
    def out(self):
        return Path(self.cfg.output_dir)


def setup_problem(cfg: ExperimentConfig, write=True) -> Problem:
    with phase("assembly"):
        model = PermeabilityModel(cfg.problem, cfg.n_sub, seed=cfg.seed)
        box = generate_intervals(model)
        if cfg.zero_width:
            c = box.anchor()
            box = ParameterBox(c, c.copy())
        ops = build_operators(cfg.mesh, BoundaryConditions(cfg.inflow_peak), model.fem_kind,
                              cfg.viscosity)
        dec = make_decomposition(ops, box, model)
        prob = Problem(cfg, ops, model, box, dec)
        log.info("%s: %d velocity + %d pressure dof, n_A=%d, n_f=%d, M=%d", cfg.problem,
                 ops.n_u, ops.n_p, ops.n_A, ops.n_f, box.M)
    if write:
        with phase("io"):
            prob.out.mkdir(parents=True, exist_ok=True)
            cfg.save(prob.out / CONFIG_NAME)
            save_box(box, prob.out / "intervals.json", model)
    return prob


def train_stability(prob: Problem, write=True) -> StabilityBounds:
    with phase("scm"):
        cfg = prob.cfg.scm
        candidates = halton_in_box(cfg.n_candidates, prob.box)  # shared by both modes
        bx = compute_box(prob.ops)
        co = scm_train(candidates, cfg, COERCIVITY, prob.ops, prob.dec, box=bx)
        ct = scm_train(candidates, cfg, CONTINUITY, prob.ops, prob.dec, box=bx)
        beta = compute_beta(prob.ops)
        log.info("SCM: %d coercivity / %d continuity iterations, beta = %.6g",
                 len(co.trace), len(ct.trace), beta)
    if write:
        with phase("io"):
            for data in (co, ct):
                data.save(prob.out / f"scm_{data.mode}.npz")
                write_trace(data, prob.out / f"scm_trace_{data.mode}.csv")
            stats = {"beta": beta, "box_lo": list(bx[0]), "box_hi": list(bx[1]),
                     "iterations": {COERCIVITY: len(co.trace), CONTINUITY: len(ct.trace)}}
            (prob.out / "stability.json").write_text(json.dumps(stats, indent=1))
    return StabilityBounds(co, ct, beta, prob.dec)


def load_stability(prob: Problem, directory) -> StabilityBounds:
    d = Path(directory)
    co = SCMData.load(d / f"scm_{COERCIVITY}.npz")
    ct = SCMData.load(d / f"scm_{CONTINUITY}.npz")
    beta = json.loads((d / "stability.json").read_text())["beta"]
    return StabilityBounds(co, ct, beta, prob.dec)


# ---------------------------------------------------------------------------
# Monte Carlo reference


@dataclass
class Moments:
    mean_u: np.ndarray
    var_u: np.ndarray
    mean_p: np.ndarray
    var_p: np.ndarray
    n: int = 0

    @classmethod
    def split(cls, mean, var, n_u, n=0):
        return cls(mean[:n_u], var[:n_u], mean[n_u:], var[n_u:], n)

    def save(self, path, **extra):
        np.savez(path, mean_u=self.mean_u, var_u=self.var_u, mean_p=self.mean_p,
                 var_p=self.var_p, n=self.n, **extra)

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            return cls(z["mean_u"], z["var_u"], z["mean_p"], z["var_p"], int(z["n"]))


def _signature(prob: Problem):
    h = hashlib.sha256()
    for a in (prob.box.lower, prob.box.upper):
        h.update(np.ascontiguousarray(a).tobytes())
    c = prob.cfg
    h.update(repr((c.problem, c.n_sub, c.n_elem, c.viscosity, c.inflow_peak)).encode())
    return h.hexdigest()


def monte_carlo_reference(prob: Problem, n_samples, checkpoint=None, solve=None,
                          every=None, threads=None) -> Moments:
    """Quasi-Monte Carlo mean and ``1/n`` variance over Halton points in the box.

    ``solve`` maps a parameter to a stacked ``[u, p]`` vector (high-fidelity
    by default).  Chunks are merged with the pairwise mean/M2 update, and the
    running state is written to ``checkpoint`` after every chunk; a matching
    checkpoint resumes the sequence where it stopped.
    """
    if n_samples < 1:
        raise ValueError("Monte Carlo needs at least one sample")
    every = every or prob.cfg.monte_carlo.checkpoint_every
    if solve is None:
        hf = HighFidelitySolver(prob.ops, prob.dec)

        def solve(xi):
            s = hf.solve(xi)
            return np.concatenate([s.u, s.p])
    sig = _signature(prob)
    n_done, mean, m2 = 0, None, None
    if checkpoint is not None and Path(checkpoint).exists():
        with np.load(checkpoint) as z:
            if str(z["signature"]) == sig and int(z["n_done"]) <= n_samples:
                n_done, mean, m2 = int(z["n_done"]), z["mean"].copy(), z["m2"].copy()
                log.info("Monte Carlo: resuming after %d samples", n_done)
    for start, stop in chunks(n_samples - n_done, every):
        start, stop = start + n_done, stop + n_done
        pts = halton_in_box(stop - start, prob.box, start=1 + start)
        vals = np.array(pmap(solve, pts, threads))
        cm = vals.mean(axis=0)
        cm2 = ((vals - cm) ** 2).sum(axis=0)
        nb = stop - start
        if mean is None:
            mean, m2 = cm, cm2
        else:
            na = start
            delta = cm - mean
            mean = mean + delta * (nb / (na + nb))
            m2 = m2 + cm2 + delta**2 * (na * nb / (na + nb))
        if checkpoint is not None:
            tmp = Path(str(checkpoint) + ".tmp.npz")
            np.savez(tmp, signature=sig, n_done=stop, mean=mean, m2=m2)
            os.replace(tmp, checkpoint)
        log.info("Monte Carlo: %d / %d samples", stop, n_samples)
    return Moments.split(mean, m2 / n_samples, prob.ops.n_u, n_samples)


def reference_moments(prob: Problem, n_samples=None, write=True) -> Moments:
    mc = prob.cfg.monte_carlo
    if mc.reference:
        with phase("monte-carlo"):
            return Moments.load(mc.reference)
    n = n_samples if n_samples is not None else mc.samples
    with phase("monte-carlo"):
        prob.out.mkdir(parents=True, exist_ok=True)
        ref = monte_carlo_reference(prob, n, checkpoint=prob.out / "mc_checkpoint.npz")
    if write:
        with phase("io"):
            ref.save(prob.out / MC_NAME, signature=_signature(prob))
    return ref


# ---------------------------------------------------------------------------
# errors


@dataclass
class ErrorRow:
    moment: str  # mean | variance
    field: str  # velocity | pressure | combined
    abs_error: float
    ref_norm: float
    rel_error: float
    absolute: bool  # True when the reference norm is zero


def report_errors(rb: Moments, ref: Moments, ops: AssembledOperators):
    """Relative discrete L2 errors; velocity in the L2 mass, pressure in ``M_Q``."""
    def sq(M, v):
        return float(max(v @ (M @ v), 0.0))

    rows = []
    for moment, a, b in (("mean", (rb.mean_u, rb.mean_p), (ref.mean_u, ref.mean_p)),
                         ("variance", (rb.var_u, rb.var_p), (ref.var_u, ref.var_p))):
        du, dp = sq(ops.M_L2, a[0] - b[0]), sq(ops.M_Q, a[1] - b[1])
        nu, npr = sq(ops.M_L2, b[0]), sq(ops.M_Q, b[1])
        # combined row from the concatenated field with the block-diagonal mass
        for name, e2, n2 in (("velocity", du, nu), ("pressure", dp, npr),
                             ("combined", du + dp, nu + npr)):
            e, n = np.sqrt(e2), np.sqrt(n2)
            rows.append(ErrorRow(moment, name, e, n, e / n if n > 0 else e, n == 0))
    return rows


def write_errors(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["moment", "field", "abs_error", "ref_norm", "rel_error", "absolute"])
        for r in rows:
            w.writerow([r.moment, r.field, f"{r.abs_error:.17g}", f"{r.ref_norm:.17g}",
                        f"{r.rel_error:.17g}", int(r.absolute)])


def format_errors(rows):
    lines = [f"{'moment':<9}{'field':<10}{'rel. L2 error':>15}"]
    for r in rows:
        tag = "  (absolute)" if r.absolute else ""
        lines.append(f"{r.moment:<9}{r.field:<10}{r.rel_error:>15.4e}{tag}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# experiment


@dataclass
class MomentReport:
    moments: Moments
    reference: Moments = None
    errors: list = None
    counts: dict = field(default_factory=dict)
    levels: list = None


def build_reduced_model(prob: Problem, stability: StabilityBounds):
    return ReducedModel(prob.ops, prob.dec, StabilityCache(stability),
                        memory_cap=int(prob.cfg.memory_cap_gb * 1024**3))


def save_basis(model: ReducedModel, path):
    off = model.offline
    snaps = np.array([s for s in model.rb.snapshots], dtype=float).reshape(-1, model.dec.M)
    np.savez(path, version=BASIS_VERSION, V=model.rb.V, Q=model.rb.Q, snapshots=snaps,
             **{k: getattr(off, k) for k in ("A_red", "B_red", "f_red", "g_red", "C", "D",
                                              "E", "F", "G", "H", "S", "T")},
             R=off.R)


def write_levels(levels, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "direction", "indicator", "n_points", "cumulative_points"])
        for rep in levels:
            for T, eta, npts, cum in rep["rows"]:
                w.writerow([rep["level"], " ".join(str(t) for t in T), f"{eta:.17g}", npts, cum])


def run_anova(prob: Problem, stability: StabilityBounds):
    cfg = prob.cfg
    with phase("rb-anova"):
        model = build_reduced_model(prob, stability)
        hf = HighFidelitySolver(prob.ops, prob.dec)
        res = rb_anova_drive(model, hf, cfg.eps_RB, cfg.eps_A, cfg.level_start, cfg.level_max,
                             cfg.quad_points)
    return res, hf


def run_experiment(cfg: ExperimentConfig, stability_dir=None) -> MomentReport:
    """SCM, RB-ANOVA, optional Monte Carlo reference and the error table."""
    t0 = time.perf_counter()
    prob = setup_problem(cfg)
    if stability_dir is not None:
        with phase("scm"):
            stability = load_stability(prob, stability_dir)
    else:
        stability = train_stability(prob)
    res, hf = run_anova(prob, stability)
    moments = Moments(res.mean_u, res.var_u, res.mean_p, res.var_p, res.n_points)
    counts = {"hf_solves": res.n_hf_solves, "collocation_points": res.n_points,
              "N_V": res.model.rb.N_V, "N_Q": res.model.rb.N_Q,
              "max_divergence_residual": hf.max_divergence_residual}
    out = prob.out
    with phase("io"):
        res.trace.write(out / "greedy_trace.csv")
        write_levels(res.levels, out / "anova_levels.csv")
        save_basis(res.model, out / "basis.npz")
        moments.save(out / MOMENTS_NAME)
        write_moment_fields(prob.ops, moments, out, "")
    report = MomentReport(moments, counts=counts, levels=res.levels)
    if cfg.monte_carlo.samples > 0 or cfg.monte_carlo.reference:
        ref = reference_moments(prob)
        with phase("report"):
            report.reference = ref
            report.errors = report_errors(moments, ref, prob.ops)
            write_errors(report.errors, out / "errors.csv")
    with phase("io"):
        summary = dict(counts, version=__version__, backend=BACKEND,
                       runtime_seconds=time.perf_counter() - t0)
        (out / "summary.json").write_text(json.dumps(summary, indent=1))
    return report


def write_moment_fields(ops, m: Moments, out, prefix):
    out = Path(out)
    write_field(m.mean_u, VELOCITY, out / f"{prefix}mean_u.csv", ops, add_lift=True)
    write_field(m.var_u, VELOCITY, out / f"{prefix}var_u.csv", ops)
    write_field(m.mean_p, PRESSURE, out / f"{prefix}mean_p.csv", ops)
    write_field(m.var_p, PRESSURE, out / f"{prefix}var_p.csv", ops)


# ---------------------------------------------------------------------------
# effectivity


@dataclass
class EffectivityRow:
    sample: int
    delta_u: float
    delta_p: float
    delta: float
    err_u: float
    err_p: float
    err: float

    @property
    def ratios(self):
        return tuple(d / e if e > 0 else np.inf for d, e in
                     ((self.delta_u, self.err_u), (self.delta_p, self.err_p),
                      (self.delta, self.err)))


def effectivity_study(prob: Problem, model: ReducedModel, points, hf=None):
    """Estimates against true V/Q errors at ``points`` (one high-fidelity solve each)."""
    hf = hf or HighFidelitySolver(prob.ops, prob.dec)
    ops = prob.ops
    res = model.solve(points)
    rows = []
    for k, xi in enumerate(points):
        s = hf.solve(xi)
        u, p = model.rb.lift(res.u_N[k], res.p_N[k])
        eu = np.sqrt(max((s.u - u) @ (ops.M_V @ (s.u - u)), 0.0))
        ep = np.sqrt(max((s.p - p) @ (ops.M_Q @ (s.p - p)), 0.0))
        e = res.estimate
        rows.append(EffectivityRow(k, e.delta_u[k], e.delta_p[k], e.delta[k], eu, ep,
                                   float(np.hypot(eu, ep))))
    return rows


def sample_collocation(res, n, seed):
    """``n`` distinct collocation points that are not snapshot parameters."""
    X = res.state.points.coordinates()
    snaps = {np.asarray(s).tobytes() for s in res.model.rb.snapshots}
    pool = [k for k in range(len(X)) if X[k].tobytes() not in snaps]
    if n > len(pool):
        raise ValueError(f"only {len(pool)} non-snapshot collocation points available")
    pick = make_rng(seed).choice(len(pool), size=n, replace=False)
    return X[np.sort(np.asarray(pool)[pick])]


def write_effectivity(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "eff_u", "eff_p", "eff", "delta_u", "delta_p", "delta",
                    "err_u", "err_p", "err"])
        for r in rows:
            vals = r.ratios + (r.delta_u, r.delta_p, r.delta, r.err_u, r.err_p, r.err)
            w.writerow([r.sample] + [f"{v:.17g}" for v in vals])


def run_effectivity(cfg: ExperimentConfig, samples=100):
    prob = setup_problem(cfg)
    stability = train_stability(prob)
    res, hf = run_anova(prob, stability)
    with phase("effectivity"):
        pts = sample_collocation(res, samples, cfg.seed + 1)
        rows = effectivity_study(prob, res.model, pts, hf)
    with phase("io"):
        write_effectivity(rows, prob.out / "effectivity.csv")
    return rows


# ---------------------------------------------------------------------------
# report from a finished run


def report_directory(directory):
    """Recompute the error table from a run directory's stored moments."""
    d = Path(directory)
    with phase("report"):
        cfg = ExperimentConfig.loads((d / CONFIG_NAME).read_text())
        rb = Moments.load(d / MOMENTS_NAME)
        ref_path = Path(cfg.monte_carlo.reference) if cfg.monte_carlo.reference else d / MC_NAME
        if not ref_path.exists():
            raise FileNotFoundError(f"no Monte Carlo reference at {ref_path}")
        ref = Moments.load(ref_path)
        prob = setup_problem(cfg, write=False)
        rows = report_errors(rb, ref, prob.ops)
        write_errors(rows, d / "errors.csv")
    return rows
