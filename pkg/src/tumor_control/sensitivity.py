"""Tangent (linearized) and adjoint sweeps over a stored state trajectory.

Both sweeps reuse the converged Newton Jacobian J_n of every forward step.
Writing the step residual as R(x_n, x_{n-1}, c_n) with previous-level
derivative M = -E/tau and control derivative S_n, the tangent solves

    J_n dx_n = (E/tau) dx_{n-1} - S_n dc_n,

and the adjoint solves the transposed recursion backwards,

    J_n^T lam_n = g_n + (E/tau)^T lam_{n+1},     lam_{N+1} = 0,

so that sum_n <g_n, dx_n> = sum_n <-S_n^T lam_n, dc_n> holds to roundoff.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .state import Controls, StateTrajectory


class SensitivityError(ValueError):
    pass


@dataclass
class LinTrajectory:
    eta: np.ndarray
    xi: np.ndarray
    zeta: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.stack([self.eta, self.xi, self.zeta], axis=1)


@dataclass
class AdjTrajectory:
    """Adjoint states (p, q, r) in the pointwise scaling of the continuous system.

    Row n-1 of ``p``, ``q``, ``r`` is the multiplier of the step producing
    level n (n = 1..N). ``terminal`` holds the final-time data (p_T, q_T, r_T).
    ``multipliers`` are the raw Lagrange multipliers, i.e. tau*|cell| times
    (q, p, r) stacked in equation order (mu, phi, sigma).
    """

    p: np.ndarray
    q: np.ndarray
    r: np.ndarray
    terminal: tuple
    multipliers: np.ndarray
    trajectory: StateTrajectory


def _require_jacobians(traj: StateTrajectory):
    if not traj.records or len(traj.records) != traj.steps:
        raise SensitivityError("missing-jacobians: trajectory carries no stored step Jacobians")


def _check_direction(traj: StateTrajectory, direction: Controls):
    if direction.u.shape != (traj.steps, traj.domain.size):
        raise SensitivityError(
            f"shape-mismatch: direction {direction.u.shape}, expected {(traj.steps, traj.domain.size)}"
        )


def solve_linearized(traj: StateTrajectory, direction: Controls) -> LinTrajectory:
    """Directional derivative of the discrete control-to-state map."""
    _require_jacobians(traj)
    _check_direction(traj, direction)
    st = traj.stepper
    n, N = st.n, traj.steps
    E_tau = st.mass_matrix / st.tau
    out = np.zeros((N + 1, 3 * n))
    for k in range(N):
        rhs = E_tau @ out[k]
        rhs[:n] -= h_of(traj, k + 1) * direction.u[k]
        rhs[2 * n:] += direction.w[k]
        out[k + 1] = traj.records[k].solve(rhs)
    eta, xi, zeta = (out[:, i * n:(i + 1) * n] for i in range(3))
    return LinTrajectory(eta.copy(), xi.copy(), zeta.copy())


def h_of(traj: StateTrajectory, level: int) -> np.ndarray:
    return traj.stepper.control_jacobian(traj.snapshot(level))[0]


def adjoint_sweep(traj: StateTrajectory, sources) -> np.ndarray:
    """Backward transposed sweep.

    ``sources`` has shape (N, 3*cells): row n-1 is dJ/dx_n for n = 1..N.
    Returns the multipliers with the same shape.
    """
    _require_jacobians(traj)
    st = traj.stepper
    N, m = traj.steps, 3 * st.n
    sources = np.asarray(sources, dtype=float)
    if sources.shape != (N, m):
        raise SensitivityError(f"shape-mismatch: sources {sources.shape}, expected {(N, m)}")
    E_tau_T = (st.mass_matrix / st.tau).T.tocsr()
    lam = np.zeros((N, m))
    nxt = np.zeros(m)
    for k in range(N - 1, -1, -1):
        rhs = sources[k] + E_tau_T @ nxt
        lam[k] = traj.records[k].solve(rhs, trans="T")
        nxt = lam[k]
    return lam


def control_gradient(traj: StateTrajectory, multipliers) -> Controls:
    """-S^T lam: the state-constraint part of the exact discrete gradient."""
    n = traj.stepper.n
    gu = np.empty((traj.steps, n))
    for k in range(traj.steps):
        gu[k] = -h_of(traj, k + 1) * multipliers[k, :n]
    gw = multipliers[:, 2 * n:].copy()
    return Controls(gu, gw)


def solve_adjoint(traj: StateTrajectory, cost_spec) -> AdjTrajectory:
    """Exact discrete adjoint of the tracking cost (discretize-then-optimize)."""
    from .cost import adjoint_source

    sources, terminal = adjoint_source(traj, cost_spec)
    lam = adjoint_sweep(traj, sources)
    n = traj.stepper.n
    w = traj.timegrid.tau * traj.domain.cell_volume
    q, p, r = (lam[:, i * n:(i + 1) * n] / w for i in range(3))
    return AdjTrajectory(p, q, r, terminal, lam, traj)


def duality_gap(traj: StateTrajectory, direction: Controls, seed: int = 0, source_scale: float = 1.0) -> float:
    """Relative mismatch |<g, dx(d)> - <grad(g), d>| / (|g| |dx|) for random g."""
    rng = np.random.default_rng(seed)
    N, m = traj.steps, 3 * traj.stepper.n
    g = source_scale * rng.standard_normal((N, m))
    lin = solve_linearized(traj, direction).stacked()[1:].reshape(N, m)
    lhs = float(np.sum(g * lin))
    grad = control_gradient(traj, adjoint_sweep(traj, g))
    rhs = float(np.sum(grad.u * direction.u) + np.sum(grad.w * direction.w))
    scale = np.linalg.norm(g) * np.linalg.norm(lin)
    if scale == 0.0:
        return abs(lhs - rhs)
    return abs(lhs - rhs) / scale
