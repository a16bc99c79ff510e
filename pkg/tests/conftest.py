import numpy as np
import pytest

from brinkman_rb.fem import HighFidelitySolver, MeshConfig, build_operators
from brinkman_rb.params import (PermeabilityModel, generate_intervals, halton_in_box,
                                make_decomposition)
from brinkman_rb.rb import ReducedModel, StabilityCache, rb_anova_drive
from brinkman_rb.scm import (COERCIVITY, CONTINUITY, SCMConfig, StabilityBounds, compute_beta,
                             compute_box, scm_train)

ACCEPTANCE = {}  # criterion number -> list of (check, passed, detail)


def record(criterion, check, passed, detail):
    """Register one sub-check of an acceptance criterion for the summary."""
    ACCEPTANCE.setdefault(criterion, []).append((check, bool(passed), detail))
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[k]
        verdict = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        body = "; ".join(f"{name} {'ok' if ok else 'FAILED'} ({detail})"
                         for name, ok, detail in parts)
        terminalreporter.write_line(f"criterion {k}: {verdict}: {body}")


class Problem:
    def __init__(self, n_sub, n_elem, kind="iso", seed=1):
        self.model = PermeabilityModel(kind, n_sub, seed=seed)
        self.box = generate_intervals(self.model)
        self.ops = build_operators(MeshConfig(n_sub, n_elem), model_kind=self.model.fem_kind)
        self.dec = make_decomposition(self.ops, self.box, self.model)
        self.hf = HighFidelitySolver(self.ops, self.dec)


@pytest.fixture(scope="session")
def small():
    """2x2 subdomains of 3x3 elements: 264 velocity dof, small enough for dense oracles."""
    return Problem(2, 3)


@pytest.fixture(scope="session")
def desk():
    """3x3 subdomains of 4x4 elements (M = 9), the desk-scale iso problem."""
    return Problem(3, 4)


def train_scm(prob, n_candidates=2000):
    cfg = SCMConfig(n_candidates=n_candidates)
    cand = halton_in_box(n_candidates, prob.box)
    bx = compute_box(prob.ops)
    co = scm_train(cand, cfg, COERCIVITY, prob.ops, prob.dec, box=bx)
    ct = scm_train(cand, cfg, CONTINUITY, prob.ops, prob.dec, box=bx)
    return StabilityBounds(co, ct, compute_beta(prob.ops), prob.dec)


@pytest.fixture(scope="session")
def desk_stability(desk):
    return train_scm(desk)


@pytest.fixture(scope="session")
def desk_anova(desk, desk_stability):
    """RB-ANOVA on the desk problem at eps_RB = 0.01, eps_A = 1e-6."""
    model = ReducedModel(desk.ops, desk.dec, StabilityCache(desk_stability))
    hf = HighFidelitySolver(desk.ops, desk.dec)
    res = rb_anova_drive(model, hf, 0.01, 1e-6)
    return res, hf


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
