"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Lines are also collected in ``RESULTS`` and repeated in the pytest terminal
summary, so they show up even when output capture is on. Run standalone with
``python tests/test_acceptance.py`` for the bare report.
"""
import time

import numpy as np
import pytest

from conftest import DEFAULT_PARAMS, make_problem
from tumor_control import (
    Controls,
    ControlProblem,
    CostSpec,
    ModelParams,
    PotentialSpec,
    StateSnapshot,
    TimeGrid,
    build_domain,
    duality_gap,
    solve_state,
)
from tumor_control import verification as V
from tumor_control.io import ConfigError, parse_config, read_snapshot, write_snapshot
from tumor_control.optimizer import ControlBox, OptimizerConfig, clamp_characterization_residual, optimize
from tumor_control.presets import profile
from tumor_control.runner import simulate, verify

RESULTS = {}
BOX = ControlBox(0.0, 1.0, -1.0, 1.0)
MASS_TOL = 1e-10


def report(number, name, passed, detail, started):
    line = f"[{'PASS' if passed else 'FAIL'}] {number:>2}. {name}: {detail} ({time.perf_counter() - started:.1f}s)"
    RESULTS[number] = line
    print(line)
    assert passed, line


def _mass_worst(traj):
    m = V.mass_identity_residuals(traj)
    return float(max((m["sigma"] / m["scale"]).max(), (m["combined"] / m["scale"]).max()))


MASS_SEEN = []


def _track_mass(traj):
    MASS_SEEN.append(_mass_worst(traj))
    return traj


def _box_controls(problem, rng):
    s = problem.control_shape
    return Controls(rng.uniform(BOX.u_lo, BOX.u_hi, s), rng.uniform(BOX.w_lo, BOX.w_hi, s))


def _benchmark(variant="logarithmic", cells=64, steps=50, cost=None):
    return make_problem(cells=cells, steps=steps, variant=variant, cost=cost)


def test_01_duality():
    t0 = time.perf_counter()
    gaps = []
    variants = ("regular", "logarithmic")
    for seed in range(20):
        rng = np.random.default_rng(seed)
        dim = 1 + seed % 2
        cells = 32 if dim == 1 else 16
        pr = make_problem(dim=dim, cells=cells, steps=10 + seed % 11, variant=variants[(seed // 2) % 2])
        traj = _track_mass(pr.solve(_box_controls(pr, rng)))
        d = V.random_direction(pr, rng)
        gaps.append(duality_gap(traj, d, seed=seed))
    worst = max(gaps)
    report(1, "adjoint duality", worst <= 1e-10 and time.perf_counter() - t0 <= 120,
           f"max gap {worst:.2e} <= 1e-10 over 20 instances", t0)


def test_02_gradient():
    t0 = time.perf_counter()
    pr = _benchmark()
    errs = []
    for seed in range(20):
        c = _box_controls(pr, np.random.default_rng(100 + seed))
        errs += [r["rel_err"] for r in V.gradient_check(pr, c, probes=1, seed=seed, fd_step=1e-5)]
    worst = max(errs)
    report(2, "gradient exactness", worst <= 1e-6, f"max rel err {worst:.2e} <= 1e-6 over 20 probes", t0)


@pytest.fixture(scope="module")
def order_setup():
    pr = _benchmark()
    c = _box_controls(pr, np.random.default_rng(7))
    dirs = [V.random_direction(pr, np.random.default_rng(200 + k)) for k in range(5)]
    return pr, c, dirs


def test_03_frechet(order_setup):
    t0 = time.perf_counter()
    pr, c, dirs = order_setup
    probes = [V.frechet_order_probe(pr, c, d, lambdas=(1e-1, 3e-2, 1e-2, 3e-3)) for d in dirs]
    slopes = [p["slope"] for p in probes]
    ok = min(slopes) >= 1.9 and all(p["monotone"] for p in probes)
    report(3, "Frechet order", ok, f"min slope {min(slopes):.3f} >= 1.9 over 5 directions", t0)


def test_04_tangent(order_setup):
    t0 = time.perf_counter()
    pr, c, dirs = order_setup
    slopes = [V.tangent_order_probe(pr, c, d)["slope"] for d in dirs]
    report(4, "tangent consistency", min(slopes) >= 0.9, f"min order {min(slopes):.3f} >= 0.9", t0)


def test_05_separation():
    t0 = time.perf_counter()
    d = build_domain(1, 1.0, 64)
    tg = TimeGrid(1.0, 100)
    init = StateSnapshot(d.zeros(), profile(d, "cosine", 0.9), d.full(1.0))
    pot = PotentialSpec("logarithmic", k=2.0)
    rng = np.random.default_rng(5)
    shape = (tg.steps, d.size)
    choices = [Controls(np.full(shape, u), np.full(shape, w)) for u in (0.0, 1.0) for w in (-1.0, 1.0)]
    choices.append(Controls(rng.uniform(0, 1, shape), rng.uniform(-1, 1, shape)))
    margins = []
    for c in choices:
        traj = _track_mass(solve_state(DEFAULT_PARAMS, pot, c, init, tg, d))
        rep = V.separation_report(traj)
        margins.append(float(rep["level_margins"].min()))
    worst = min(margins)
    report(5, "separation", worst > 0, f"min margin to +-1 over all levels {worst:.4f} > 0 ({len(choices)} runs)",
           t0)


def test_06_mass():
    t0 = time.perf_counter()
    pr = _benchmark()
    for seed in range(3):
        _track_mass(pr.solve(_box_controls(pr, np.random.default_rng(300 + seed))))
    pr2 = make_problem(dim=2, cells=16, steps=20, variant="yosida_logarithmic")
    _track_mass(pr2.solve(_box_controls(pr2, np.random.default_rng(9))))
    worst = max(MASS_SEEN)
    report(6, "mass identities", worst <= MASS_TOL,
           f"max defect/scale {worst:.2e} <= 1e-10 over {len(MASS_SEEN)} runs", t0)


def test_07_stationary():
    t0 = time.perf_counter()
    worst = 0.0
    for dim, cells in ((1, [32]), (2, [12, 12])):
        d = build_domain(dim, [1.0] * dim, cells)
        tg = TimeGrid(1.0, 25)
        prm = ModelParams(alpha=1, beta=1, chi=1, P=1.0, A=0.0, B=1.0, D=1.0, sigma_s=0.0)
        init = StateSnapshot(d.zeros(), d.zeros(), d.zeros())
        for variant in ("regular", "logarithmic", "yosida_logarithmic"):
            traj = solve_state(prm, PotentialSpec(variant), Controls.constant(d, tg), init, tg, d)
            worst = max(worst, float(np.abs(traj.stacked() - traj.stacked()[0]).max()))
    report(7, "stationary exactness", worst <= 1e-13, f"max deviation {worst:.1e} <= 1e-13", t0)


def test_08_optimizer():
    t0 = time.perf_counter()
    d = build_domain(1, 1.0, 64)
    cost = CostSpec(gamma2=1.0, gamma4=1.0, gamma5=1e-2, gamma6=1e-2,
                    phi_Q=profile(d, "cosine", -0.5, -0.2), sigma_Q=0.5)
    pr = _benchmark(cost=cost)
    rep = optimize(pr, BOX, OptimizerConfig(max_iters=200))
    _track_mass(rep.trajectory)
    stat = rep.stationarity
    iters = rep.history[-1].iteration
    first = next(r.iteration for r in rep.history if r.stationarity <= 1e-4)
    monotone = bool(np.all(np.diff(rep.J) <= 0))
    ru, rw = clamp_characterization_residual(rep.controls, rep.adjoint, rep.trajectory, pr.cost, BOX, pr)
    ok = stat <= 1e-4 and iters <= 200 and monotone and ru <= 1e-3 and rw <= 1e-3
    report(8, "optimizer contract", ok,
           f"stationarity {stat:.1e} (<= 1e-4 at iter {first}, stopped at {iters}), J nonincreasing={monotone}, "
           f"clamp residuals ({ru:.1e}, {rw:.1e}) <= 1e-3", t0)


def test_09_pure_control():
    t0 = time.perf_counter()
    pr = _benchmark(cost=CostSpec(gamma5=1e-2, gamma6=1e-2))
    worst, iters = 0.0, 0
    for rule in ("fixed", "barzilai_borwein"):
        rep = optimize(pr, BOX, OptimizerConfig(step_rule=rule, stationarity_tol=1e-10))
        worst = max(worst, np.abs(rep.controls.u - max(BOX.u_lo, 0.0)).max(), np.abs(rep.controls.w).max())
        iters = max(iters, rep.history[-1].iteration)
    report(9, "pure-control sanity", worst <= 1e-10 and iters <= 3,
           f"max |c - c*| {worst:.1e} <= 1e-10 in {iters} <= 3 iterations", t0)


def test_10_lipschitz():
    t0 = time.perf_counter()
    pr = make_problem(cells=32, steps=20)
    spreads = []
    for seed in range(10):
        rng = np.random.default_rng(400 + seed)
        c = _box_controls(pr, rng)
        d = V.random_direction(pr, rng) * 0.5
        ratios = V.lipschitz_probe(pr, [(c + d * s, c) for s in (0.2, 0.1, 0.05)])["ratios"]
        spreads.append(float(ratios.max() / ratios.min()))
    worst = max(spreads)
    report(10, "Lipschitz probe", worst <= 2.0, f"max ratio spread {worst:.3f} <= 2 over 10 pairs, sizes x4", t0)


def _smooth_problem(cells=32, steps=10, variant="regular"):
    d = build_domain(1, 1.0, cells)
    tg = TimeGrid(1.0, steps)
    init = StateSnapshot(d.zeros(), profile(d, "cosine", 0.5), profile(d, "cosine", 0.2, 0.8))
    cost = CostSpec(gamma1=0.5, gamma2=1.0, gamma3=0.5, gamma4=1.0, gamma5=1e-2, gamma6=1e-2,
                    phi_Q=profile(d, "cosine", -0.5, -0.2), sigma_Q=0.5, phi_Omega=-0.5)
    return ControlProblem(d, DEFAULT_PARAMS, PotentialSpec(variant), tg, init, cost)


def _smooth_controls(pr):
    t = pr.timegrid.times[1:, None]
    x = pr.domain.centers()[0][None, :]
    return Controls(0.5 + 0.3 * np.cos(np.pi * x) * np.sin(np.pi * t), 0.2 * np.cos(np.pi * x) * t)


def test_11_continuous_adjoint():
    t0 = time.perf_counter()
    res = V.continuous_adjoint_crosscheck(_smooth_problem(), _smooth_controls, steps=(10, 20, 40, 80))
    orders = res["orders"]
    report(11, "continuous-adjoint cross-check", orders.min() >= 0.9,
           f"orders {np.array2string(orders, precision=3)} >= 0.9", t0)


def test_12_convergence():
    t0 = time.perf_counter()
    tau = V.temporal_convergence(_smooth_problem(), _smooth_controls, steps=(10, 20, 40, 80, 160))["orders"]

    def build(nc):
        pr = _smooth_problem(cells=nc, steps=20)
        return pr, _smooth_controls(pr)

    dx = V.spatial_convergence(build, cells=(12, 36, 108))["orders"]
    ok = tau[-1] >= 0.9 and dx[-1] >= 1.9
    report(12, "convergence orders", ok, f"tau order {tau[-1]:.3f} >= 0.9, dx order {dx[-1]:.3f} >= 1.9", t0)


def test_13_io(tmp_path):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    fields = {"mu": rng.standard_normal(48), "phi": rng.standard_normal(48)}
    write_snapshot(tmp_path / "s.tgf", (6, 8), fields)
    cells, back = read_snapshot(tmp_path / "s.tgf")
    round_trip = cells == (6, 8) and all(back[k].tobytes() == v.tobytes() for k, v in fields.items())
    rejected = []
    for text, tag in [("[model]\nalpha = 0\n", "(A4)"), ("[model]\nbeta = -1\n", "(A4)"),
                      ("[model]\nsigma_s = -1\n", "(A4)"), ("[box]\nu_lo = -0.5\n", "(A7)"),
                      ("[box]\nu_lo = 0.8\nu_hi = 0.2\n", "(A7)")]:
        try:
            parse_config(text)
            rejected.append(False)
        except ConfigError as exc:
            rejected.append(exc.kind == "validation-error" and tag in str(exc))
    cfg = parse_config("[run]\nseed = 4\n[domain]\ncells = 16\n[time]\nsteps = 10\n[verify]\nprobes = 2\n")
    same = True
    for task, names in ((simulate, ("monitors.csv",)), (verify, ("verify.csv",))):
        task(cfg, tmp_path / "a")
        task(cfg, tmp_path / "b")
        same &= all((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names)
    ok = round_trip and all(rejected) and same
    report(13, "I/O", ok, f"round-trip bit-exact={round_trip}, rejections {sum(rejected)}/{len(rejected)}, "
           f"byte-identical CSVs={same}", t0)


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
