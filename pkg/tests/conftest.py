import numpy as np
import pytest

from tumor_control import (
    Controls,
    ControlProblem,
    CostSpec,
    ModelParams,
    PotentialSpec,
    StateSnapshot,
    TimeGrid,
    build_domain,
)
from tumor_control.presets import profile

DEFAULT_PARAMS = ModelParams(alpha=1.0, beta=1.0, chi=1.0, P=1.0, A=0.5, B=1.0, D=1.0, sigma_s=1.0)


def make_problem(dim=1, cells=32, steps=10, T=1.0, variant="logarithmic", cost=None, params=None,
                 phi_amp=0.5, options=None):
    """Small tracking problem on the unit interval/square."""
    cells_t = [cells] * dim
    domain = build_domain(dim, [1.0] * dim, cells_t)
    tg = TimeGrid(T, steps)
    init = StateSnapshot(domain.zeros(), profile(domain, "cosine", phi_amp), domain.full(1.0))
    if cost is None:
        cost = CostSpec(gamma1=0.5, gamma2=1.0, gamma3=0.5, gamma4=1.0, gamma5=1e-2, gamma6=1e-2,
                        phi_Q=profile(domain, "cosine", -0.5, -0.2), sigma_Q=0.5,
                        phi_Omega=-1.0, sigma_Omega=0.0)
    kwargs = {} if options is None else {"options": options}
    return ControlProblem(domain, params or DEFAULT_PARAMS, PotentialSpec(variant), tg, init, cost, **kwargs)


def random_controls(problem, rng, lo=0.2, hi=0.8):
    shape = problem.control_shape
    return Controls(rng.uniform(lo, hi, shape), rng.uniform(-0.5, 0.5, shape))


@pytest.fixture
def problem():
    return make_problem()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[key])
