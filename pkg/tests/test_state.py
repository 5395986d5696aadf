import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import DEFAULT_PARAMS, make_problem, random_controls
from tumor_control import (
    Controls,
    ModelParams,
    PotentialSpec,
    SolverOptions,
    StateSnapshot,
    TimeGrid,
    build_domain,
    solve_state,
    state_residual,
)
from tumor_control.state import NewtonDivergence, SeparationViolation, Stepper


@pytest.mark.parametrize("variant", ["regular", "logarithmic", "yosida_logarithmic"])
def test_zero_state_is_a_fixed_point(variant):
    d = build_domain(1, 1.0, 16)
    tg = TimeGrid(1.0, 20)
    params = ModelParams(alpha=1, beta=1, chi=1, P=2.0, A=0.0, B=1.0, D=1.0, sigma_s=0.0)
    init = StateSnapshot(d.zeros(), d.zeros(), d.zeros())
    traj = solve_state(params, PotentialSpec(variant), Controls.constant(d, tg), init, tg, d)
    assert np.abs(traj.stacked()).max() <= 1e-13
    assert all(r.iterations == 1 for r in traj.records)


def test_nutrient_recurrence_without_consumption():
    # uniform fields, D = 0: sigma' (1/tau + B) = sigma/tau + B sigma_s
    d = build_domain(1, 1.0, 8)
    tg = TimeGrid(0.3, 3)
    params = ModelParams(alpha=1, beta=1, chi=1, P=0, A=0, B=1.0, D=0.0, sigma_s=0.4)
    init = StateSnapshot(d.zeros(), d.zeros(), d.full(1.0))
    traj = solve_state(params, PotentialSpec("regular"), Controls.constant(d, tg), init, tg, d)
    sig = 1.0
    for n in range(1, 4):
        sig = (sig / 0.1 + 0.4) / (1 / 0.1 + 1.0)
        np.testing.assert_allclose(traj.sigma[n], sig, rtol=1e-13)
    assert traj.sigma[1][0] == pytest.approx(1.04 / 1.1, rel=1e-13)


def test_residual_single_entry():
    # independent hand evaluation of each equation at one cell
    d = build_domain(1, 1.0, 5)
    p = ModelParams(alpha=2.0, beta=0.5, chi=0.7, P=1.3, A=0.2, B=0.9, D=0.4, sigma_s=0.8)
    st_ = Stepper(d, p, PotentialSpec("regular"), 0.1)
    rng = np.random.default_rng(0)
    prev = StateSnapshot(*rng.uniform(-0.5, 0.5, (3, 5)))
    nxt = StateSnapshot(*rng.uniform(-0.5, 0.5, (3, 5)))
    u, w = rng.uniform(0, 1, 5), rng.uniform(-1, 1, 5)
    R = state_residual(prev, nxt, u, w, st_)
    i, h2 = 2, 0.2**2
    lap = lambda f: (f[i - 1] - 2 * f[i] + f[i + 1]) / h2
    s = (nxt.phi[i] + 1) / 2
    h = 10 * s**3 - 15 * s**4 + 6 * s**5
    r_mu = 2.0 * (nxt.mu[i] - prev.mu[i]) / 0.1 + (nxt.phi[i] - prev.phi[i]) / 0.1 - lap(nxt.mu) \
        - (1.3 * nxt.sigma[i] - 0.2 - u[i]) * h
    r_phi = 0.5 * (nxt.phi[i] - prev.phi[i]) / 0.1 - lap(nxt.phi) + nxt.phi[i] ** 3 - nxt.phi[i] \
        - 0.7 * nxt.sigma[i] - nxt.mu[i]
    r_sig = (nxt.sigma[i] - prev.sigma[i]) / 0.1 - lap(nxt.sigma) + 0.7 * lap(nxt.phi) \
        - 0.9 * (0.8 - nxt.sigma[i]) + 0.4 * nxt.sigma[i] * h - w[i]
    assert R.mu[i] == pytest.approx(r_mu, rel=1e-12)
    assert R.phi[i] == pytest.approx(r_phi, rel=1e-12)
    assert R.sigma[i] == pytest.approx(r_sig, rel=1e-12)
    # Neumann wall: the ghost value equals the boundary value
    assert R.mu[0] - 2.0 * (nxt.mu[0] - prev.mu[0]) / 0.1 - (nxt.phi[0] - prev.phi[0]) / 0.1 \
        == pytest.approx(-(nxt.mu[1] - nxt.mu[0]) / h2 - (1.3 * nxt.sigma[0] - 0.2 - u[0])
                         * h_at(nxt.phi[0]), rel=1e-12)


def h_at(r):
    s = (r + 1) / 2
    return 10 * s**3 - 15 * s**4 + 6 * s**5


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["regular", "logarithmic", "yosida_logarithmic"]),
       st.booleans())
def test_jacobian_matches_finite_differences(seed, variant, two_d):
    d = build_domain(2, [1.0, 1.0], [3, 3]) if two_d else build_domain(1, 1.0, 6)
    rng = np.random.default_rng(seed)
    st_ = Stepper(d, DEFAULT_PARAMS, PotentialSpec(variant), 0.05)
    prev = StateSnapshot(*rng.uniform(-0.6, 0.6, (3, d.size)))
    x = rng.uniform(-0.6, 0.6, 3 * d.size)
    u, w = rng.uniform(0, 1, d.size), rng.uniform(-1, 1, d.size)
    J = st_.jacobian(StateSnapshot.unstack(x), u).toarray()
    assert np.array_equal(J, st_.jacobian_reference(StateSnapshot.unstack(x), u).toarray())
    v = rng.standard_normal(x.size)
    e = 1e-6
    f = lambda y: np.concatenate(st_.residual(prev, StateSnapshot.unstack(y), u, w))
    fd = (f(x + e * v) - f(x - e * v)) / (2 * e)
    np.testing.assert_allclose(J @ v, fd, rtol=1e-6, atol=1e-6 * np.abs(fd).max())


def test_newton_converges_and_solves_step():
    pr = make_problem(steps=8)
    traj = pr.solve(random_controls(pr, np.random.default_rng(3)))
    for k, rec in enumerate(traj.records):
        R = np.concatenate(state_residual(traj.snapshot(k), traj.snapshot(k + 1), traj.controls.u[k],
                                          traj.controls.w[k], traj.stepper))
        assert np.abs(R).max() <= 1e-12 * rec.scale
        assert rec.iterations <= 8


def test_determinism():
    pr = make_problem(dim=2, cells=8, steps=5)
    c = random_controls(pr, np.random.default_rng(9))
    a, b = pr.solve(c).stacked(), pr.solve(c).stacked()
    assert np.array_equal(a, b)


def test_initial_phase_outside_interval_is_reported():
    pr = make_problem(phi_amp=1.0)
    pr.initial = pr.initial._replace(phi=np.where(np.arange(32) == 3, 1.0, 0.0))
    with pytest.raises(SeparationViolation) as info:
        pr.solve(pr.zero_controls())
    assert info.value.step == 0 and info.value.cell == 3


def test_newton_budget_exhaustion():
    pr = make_problem(options=SolverOptions(max_iter=1))
    with pytest.raises(NewtonDivergence) as info:
        pr.solve(random_controls(pr, np.random.default_rng(0)))
    assert info.value.step == 1


def test_logarithmic_run_stays_inside():
    pr = make_problem(steps=40, phi_amp=0.95)
    traj = pr.solve(Controls.constant(pr.domain, pr.timegrid, 1.0, -1.0))
    assert np.abs(traj.phi).max() < 1


def test_parameter_validation():
    with pytest.raises(ValueError, match="A4"):
        ModelParams(alpha=0.0)
    with pytest.raises(ValueError, match="A4"):
        ModelParams(D=-1.0)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)
    d = build_domain(1, 1.0, 4)
    with pytest.raises(ValueError, match="shape-mismatch"):
        Controls.constant(d, TimeGrid(1.0, 3)).check(d, TimeGrid(1.0, 4))
