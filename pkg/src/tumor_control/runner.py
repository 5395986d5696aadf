"""Orchestration behind the command line: one function per subcommand.

Each function takes a validated RunConfig and an output directory, writes
its CSV/snapshot artifacts there, and returns a small summary dict with a
``passed`` flag where thresholds apply.
"""
from __future__ import annotations

import itertools
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import verification as V
from .cost import evaluate_cost
from .io import RunConfig, parse_config, write_csv, write_snapshot
from .optimizer import clamp_characterization_residual, optimize
from .potentials import PotentialSpec
from .sensitivity import duality_gap
from .state import Controls, SolverError

log = logging.getLogger(__name__)

FRECHET_MIN_SLOPE = 1.9
TANGENT_MIN_SLOPE = 0.9
LIPSCHITZ_MAX_SPREAD = 2.0
ADJOINT_MIN_ORDER = 0.9


def _prepare(cfg: RunConfig, out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_effective.ini").write_text(cfg.to_text())
    return out


def _levels_to_save(N: int, cadence: int):
    return sorted(set(range(0, N + 1, cadence)) | {0, N})


def simulate(cfg: RunConfig, out) -> dict:
    out = _prepare(cfg, out)
    problem = cfg.problem()
    controls = cfg.controls(problem)
    traj = problem.solve(controls)
    mon = traj.monitors
    mass = V.mass_identity_residuals(traj)
    rows = []
    for n in range(traj.steps + 1):
        ms = mass["sigma"][n - 1] if n else 0.0
        mc = mass["combined"][n - 1] if n else 0.0
        rows.append([n, mon["time"][n], mon["phi_min"][n], mon["phi_max"][n], mon["mass_mu"][n],
                     mon["mass_phi"][n], mon["mass_sigma"][n], mon["newton_iterations"][n],
                     mon["newton_residual"][n], ms, mc])
    write_csv(out / "monitors.csv",
              ["level", "time", "phi_min", "phi_max", "mass_mu", "mass_phi", "mass_sigma",
               "newton_iterations", "newton_residual", "mass_defect_sigma", "mass_defect_combined"], rows)
    snaps = out / "snapshots"
    snaps.mkdir(exist_ok=True)
    for n in _levels_to_save(traj.steps, cfg["output"]["cadence"]):
        write_snapshot(snaps / f"level_{n:05d}.tgf", problem.domain.cells,
                       {"mu": traj.mu[n], "phi": traj.phi[n], "sigma": traj.sigma[n]})
    J = evaluate_cost(traj, controls, problem.cost)
    return {"J": J, "phi_min": float(traj.phi.min()), "phi_max": float(traj.phi.max()), "passed": True}


def _controls_fields(c: Controls) -> dict:
    fields = {}
    for k in range(c.shape[0]):
        fields[f"u_{k + 1:05d}"] = c.u[k]
    for k in range(c.shape[0]):
        fields[f"w_{k + 1:05d}"] = c.w[k]
    return fields


def optimize_run(cfg: RunConfig, out) -> dict:
    out = _prepare(cfg, out)
    problem = cfg.problem()
    box = cfg.box
    report = optimize(problem, box, cfg.optimizer, cfg.controls(problem))
    write_csv(out / "history.csv", ["iter", "J", "stationarity", "step", "armijo_rejections"],
              [[r.iteration, r.J, r.stationarity, r.step, r.armijo_rejections] for r in report.history])
    write_snapshot(out / "controls_final.tgf", problem.domain.cells, _controls_fields(report.controls))
    tr = report.trajectory
    write_snapshot(out / "state_final.tgf", problem.domain.cells,
                   {"mu": tr.mu[-1], "phi": tr.phi[-1], "sigma": tr.sigma[-1]})
    ru, rw = clamp_characterization_residual(report.controls, report.adjoint, tr, problem.cost, box, problem)
    summary = {"J": report.history[-1].J, "stationarity": report.stationarity,
               "iterations": report.history[-1].iteration, "clamp_residual_u": ru, "clamp_residual_w": rw,
               "converged": report.converged, "message": report.message, "passed": True}
    write_csv(out / "report.csv", list(summary), [list(summary.values())])
    return summary


def gradcheck(cfg: RunConfig, out) -> dict:
    out = _prepare(cfg, out)
    problem = cfg.problem()
    vcfg = cfg["verify"]
    rows = V.gradient_check(problem, cfg.controls(problem), vcfg["probes"], cfg.seed, vcfg["fd_step"])
    write_csv(out / "gradcheck.csv", ["probe", "seed", "fd", "adjoint", "rel_err"],
              [[i, cfg.seed, r["fd"], r["adjoint"], r["rel_err"]] for i, r in enumerate(rows)])
    worst = max(r["rel_err"] for r in rows)
    return {"max_rel_err": worst, "threshold": vcfg["gradient_tol"], "passed": worst <= vcfg["gradient_tol"]}


def _smooth_controls(problem):
    t = problem.timegrid.times[1:, None]
    mode = np.ones(problem.domain.size)
    for x, length in zip(problem.domain.centers(), problem.domain.lengths):
        mode = mode * np.cos(np.pi * x / length)
    return Controls(0.5 + 0.3 * mode[None, :] * np.sin(np.pi * t), 0.2 * mode[None, :] * t)


def verify(cfg: RunConfig, out) -> dict:
    """Full probe battery; one CSV row per statistic."""
    out = _prepare(cfg, out)
    problem = cfg.problem()
    vcfg = cfg["verify"]
    seed = cfg.seed
    rng = np.random.default_rng(seed)
    c = cfg.controls(problem)
    rows = []

    def record(probe, statistic, value, threshold, passed):
        rows.append([probe, statistic, value, threshold, bool(passed), seed])
        log.info("%s %s=%.3e threshold=%s %s", probe, statistic, value, threshold, "pass" if passed else "FAIL")

    traj = problem.solve(c)
    gaps = [duality_gap(traj, V.random_direction(problem, rng), seed=seed + i) for i in range(3)]
    record("duality", "max_gap", max(gaps), vcfg["duality_tol"], max(gaps) <= vcfg["duality_tol"])

    grads = V.gradient_check(problem, c, vcfg["probes"], seed, vcfg["fd_step"])
    worst = max(r["rel_err"] for r in grads)
    record("gradient", "max_rel_err", worst, vcfg["gradient_tol"], worst <= vcfg["gradient_tol"])

    d = V.random_direction(problem, rng)
    fr = V.frechet_order_probe(problem, c, d)
    record("frechet", "slope", fr["slope"], FRECHET_MIN_SLOPE, fr["slope"] >= FRECHET_MIN_SLOPE and fr["monotone"])
    tg = V.tangent_order_probe(problem, c, d)
    record("tangent", "slope", tg["slope"], TANGENT_MIN_SLOPE, tg["slope"] >= TANGENT_MIN_SLOPE)

    sizes = (0.2, 0.1, 0.05)
    ratios = V.lipschitz_probe(problem, [(c + d * s, c) for s in sizes])["ratios"]
    spread = float(ratios.max() / ratios.min())
    record("lipschitz", "ratio_spread", spread, LIPSCHITZ_MAX_SPREAD, spread <= LIPSCHITZ_MAX_SPREAD)

    sep = V.separation_report(traj)
    margin = min(sep["margin_lo"], sep["margin_hi"])
    record("separation", "min_margin", margin, 0.0, margin > 0)

    mass = V.mass_identity_residuals(traj)
    worst_mass = float(max((mass["sigma"] / mass["scale"]).max(), (mass["combined"] / mass["scale"]).max()))
    record("mass", "max_scaled_defect", worst_mass, vcfg["mass_tol"], worst_mass <= vcfg["mass_tol"])

    smooth = problem.with_timegrid(problem.timegrid)
    smooth.potential = PotentialSpec("regular")
    N = problem.timegrid.steps
    ca = V.continuous_adjoint_crosscheck(smooth, _smooth_controls, steps=(N, 2 * N, 4 * N))
    order = float(ca["orders"][-1])
    record("continuous_adjoint", "order", order, ADJOINT_MIN_ORDER, order >= ADJOINT_MIN_ORDER)

    write_csv(out / "verify.csv", ["probe", "statistic", "value", "threshold", "passed", "seed"], rows)
    return {"passed": all(r[4] for r in rows), "failed": [r[0] for r in rows if not r[4]]}


TASKS = {"simulate": simulate, "optimize": optimize_run, "gradcheck": gradcheck, "verify": verify}


def _sweep_one(args):
    idx, text, overrides, task, out = args
    run_dir = Path(out) / f"run_{idx:03d}"
    try:
        cfg = parse_config(text, overrides)
        summary = TASKS[task](cfg, run_dir)
        return idx, "ok", summary, ""
    except (SolverError, ValueError, RuntimeError) as exc:
        return idx, "failed", {}, str(exc)


def sweep(base_text: str, base_overrides, grid: dict, task: str, out, jobs: int = 1) -> dict:
    """Run every combination of the swept values independently; one summary CSV."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    keys = list(grid)
    combos = list(itertools.product(*(grid[k] for k in keys)))
    jobs_args = [(i, base_text, list(base_overrides) + [f"{k}={v}" for k, v in zip(keys, combo)], task, out)
                 for i, combo in enumerate(combos)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_sweep_one, jobs_args))
    else:
        results = [_sweep_one(a) for a in jobs_args]
    metric_keys = sorted({k for _, status, s, _ in results if status == "ok" for k in s})
    rows = []
    for (idx, status, summary, err), combo in zip(sorted(results), combos):
        rows.append([idx, *combo, status, *(summary.get(k, "") for k in metric_keys), err])
    write_csv(out / "summary.csv", ["run", *keys, "status", *metric_keys, "error"], rows)
    failed = [r[0] for r in rows if r[len(keys) + 1] != "ok"]
    return {"runs": len(rows), "failed": failed, "passed": True}
