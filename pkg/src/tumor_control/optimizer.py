"""Projected gradient descent over the control box with Armijo backtracking."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .potentials import h_eval
from .problem import ControlProblem
from .state import Controls, SolverError

log = logging.getLogger(__name__)


class OptimizerError(RuntimeError):
    def __init__(self, message, controls=None, iteration=None):
        super().__init__(message)
        self.controls = controls
        self.iteration = iteration


@dataclass
class ControlBox:
    u_lo: np.ndarray | float = 0.0
    u_hi: np.ndarray | float = 1.0
    w_lo: np.ndarray | float = -1.0
    w_hi: np.ndarray | float = 1.0

    def __post_init__(self):
        if np.any(np.asarray(self.u_lo) < 0):
            raise ValueError("box: u_lo must be >= 0 (A7)")
        if np.any(np.asarray(self.u_lo) > np.asarray(self.u_hi)):
            raise ValueError("box: u_lo must be <= u_hi (A7)")
        if np.any(np.asarray(self.w_lo) > np.asarray(self.w_hi)):
            raise ValueError("box: w_lo must be <= w_hi (A7)")

    @property
    def radius(self) -> float:
        """Radius of an L-infinity ball that contains the box with room to spare."""
        return float(max(np.abs(np.asarray(b)).max() for b in (self.u_lo, self.u_hi, self.w_lo, self.w_hi)) + 1.0)

    def midpoint(self, shape) -> Controls:
        return Controls(np.broadcast_to(0.5 * (np.asarray(self.u_lo) + self.u_hi), shape),
                        np.broadcast_to(0.5 * (np.asarray(self.w_lo) + self.w_hi), shape))


@dataclass(frozen=True)
class OptimizerConfig:
    max_iters: int = 200
    armijo_c1: float = 1e-4
    backtrack_factor: float = 0.5
    initial_step: float | None = None  # None: 1 / max(gamma5, gamma6)
    stationarity_tol: float = 1e-6
    step_rule: str = "fixed"
    min_step: float = 1e-14

    def __post_init__(self):
        if not 0 < self.armijo_c1 < 0.5:
            raise ValueError("optimizer: armijo_c1 must lie in (0, 0.5)")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError("optimizer: backtrack_factor must lie in (0, 1)")
        if (self.initial_step is not None and not self.initial_step > 0) or not self.stationarity_tol > 0:
            raise ValueError("optimizer: initial_step and stationarity_tol must be > 0")
        if self.step_rule not in ("fixed", "barzilai_borwein"):
            raise ValueError(f"optimizer: unknown step_rule {self.step_rule!r}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 0:
            raise ValueError("optimizer: max_iters must be a nonnegative integer")


@dataclass
class IterateRecord:
    iteration: int
    J: float
    stationarity: float
    step: float
    armijo_rejections: int


@dataclass
class OptimizationReport:
    history: list[IterateRecord]
    controls: Controls
    trajectory: object = field(repr=False)
    adjoint: object = field(repr=False)
    gradient: Controls = field(repr=False)
    converged: bool = False
    message: str = ""

    @property
    def J(self) -> np.ndarray:
        return np.array([r.J for r in self.history])

    @property
    def stationarity(self) -> float:
        return self.history[-1].stationarity


def project_box(controls: Controls, box: ControlBox) -> Controls:
    """Pointwise clamp, which is the L2(Q) projection onto the box."""
    u = np.maximum(box.u_lo, np.minimum(box.u_hi, controls.u))
    w = np.maximum(box.w_lo, np.minimum(box.w_hi, controls.w))
    return Controls(np.broadcast_to(u, controls.shape), np.broadcast_to(w, controls.shape))


def stationarity_measure(controls: Controls, gradient: Controls, box: ControlBox,
                         problem: ControlProblem, probe_step: float = 1.0) -> float:
    """||c - P(c - s * grad_L2 J)||_{L2(Q)} / s; zero exactly at discrete KKT points.

    ``gradient`` is the exact (measure-weighted) gradient; it is converted to
    its L2(Q) representative before the probe step.
    """
    g = problem.riesz(gradient)
    moved = project_box(controls - g * probe_step, box)
    return problem.l2q_norm(controls - moved) / probe_step


def clamp_characterization_residual(controls: Controls, adj, traj, cost_spec, box: ControlBox,
                                    problem: ControlProblem):
    """L2(Q) distances of (u, w) to clamp(h(phi) q / gamma5) and clamp(-r / gamma6).

    A component whose weight vanishes is reported as ``None``; asking for no
    component at all is an error.
    """
    g5, g6 = cost_spec.gamma5, cost_spec.gamma6
    if not (g5 > 0 or g6 > 0):
        raise ValueError("zero-weight-requested: clamp residual needs gamma5 > 0 or gamma6 > 0")
    m = problem.measure
    res_u = res_w = None
    if g5 > 0:
        target = np.maximum(box.u_lo, np.minimum(box.u_hi, h_eval(traj.phi[1:]) * adj.q / g5))
        res_u = float(np.sqrt(m * np.sum((controls.u - target) ** 2)))
    if g6 > 0:
        target = np.maximum(box.w_lo, np.minimum(box.w_hi, -adj.r / g6))
        res_w = float(np.sqrt(m * np.sum((controls.w - target) ** 2)))
    return res_u, res_w


def _dot(a: Controls, b: Controls) -> float:
    return float(np.sum(a.u * b.u) + np.sum(a.w * b.w))


def initial_step_for(problem: ControlProblem, config: OptimizerConfig) -> float:
    """Configured first trial step, or the inverse curvature of the control penalty."""
    if config.initial_step is not None:
        return float(config.initial_step)
    g = max(problem.cost.gamma5, problem.cost.gamma6)
    return 1.0 / g if g > 0 else 1.0


def optimize(problem: ControlProblem, box: ControlBox, config: OptimizerConfig | None = None,
             initial: Controls | None = None, callback=None) -> OptimizationReport:
    """Projected gradient iteration c <- P(c - s grad J) with Armijo acceptance.

    Step lengths are measured in L2(Q) gradient units, i.e. the trial point
    is P(c - s * riesz(grad)). Returns once the stationarity measure drops
    below the tolerance or the iteration budget is spent.
    """
    config = config or OptimizerConfig()
    c = project_box(initial if initial is not None else box.midpoint(problem.control_shape), box)
    try:
        J, grad, traj, adj = problem.cost_and_gradient(c)
    except SolverError as exc:
        raise OptimizerError(f"forward solve failed at the initial iterate: {exc}", c, 0) from exc
    stat = stationarity_measure(c, grad, box, problem)
    history = [IterateRecord(0, J, stat, 0.0, 0)]
    log.info("iter 0: J=%.6e stationarity=%.3e (box radius %.3g)", J, stat, box.radius)
    base_step = initial_step_for(problem, config)
    step = base_step
    prev = None
    message = "max_iters reached"
    converged = stat <= config.stationarity_tol
    if converged:
        message = "stationary"
    it = 0
    while not converged and it < config.max_iters:
        it += 1
        g_l2 = problem.riesz(grad)
        if config.step_rule == "barzilai_borwein" and prev is not None:
            dc, dg = c - prev[0], g_l2 - prev[1]
            curv = _dot(dc, dg)
            step = _dot(dc, dc) / curv if curv > 0 else base_step
            step = float(np.clip(step, 1e-10, 1e10))
        elif config.step_rule == "fixed":
            step = base_step
        rejections = 0
        while True:
            trial = project_box(c - g_l2 * step, box)
            decrease = _dot(grad, c - trial)
            try:
                J_t, grad_t, traj_t, adj_t = problem.cost_and_gradient(trial)
                ok = J_t <= J - config.armijo_c1 * decrease
            except SolverError:
                ok = False
            if ok:
                break
            rejections += 1
            step *= config.backtrack_factor
            if step < config.min_step:
                report = OptimizationReport(history, c, traj, adj, grad, False,
                                            f"line-search-stall at iteration {it}")
                raise OptimizerError(report.message, c, it) from None
        prev = (c, g_l2)
        c, J, grad, traj, adj = trial, J_t, grad_t, traj_t, adj_t
        stat = stationarity_measure(c, grad, box, problem)
        history.append(IterateRecord(it, J, stat, step, rejections))
        log.info("iter %d: J=%.6e stationarity=%.3e step=%.3e rejections=%d", it, J, stat, step, rejections)
        if callback is not None:
            callback(history[-1])
        if stat <= config.stationarity_tol:
            converged = True
            message = "stationary"
    return OptimizationReport(history, c, traj, adj, grad, converged, message)
