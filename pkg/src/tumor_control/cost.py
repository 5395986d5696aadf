"""Tracking cost, its exact state partials, and the reduced gradient.

Time integrals use the right-endpoint rule over levels 1..N, matching the
backward-Euler state; space integrals use the lumped cell quadrature.
Gradients are exact partial derivatives of the discrete cost, so they carry
the measure tau*|cell| and pair with perturbations through a plain sum.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .potentials import h_eval
from .state import Controls, StateTrajectory


@dataclass
class CostSpec:
    gamma1: float = 0.0
    gamma2: float = 0.0
    gamma3: float = 0.0
    gamma4: float = 0.0
    gamma5: float = 0.0
    gamma6: float = 0.0
    phi_Q: np.ndarray | float = 0.0
    sigma_Q: np.ndarray | float = 0.0
    phi_Omega: np.ndarray | float = 0.0
    sigma_Omega: np.ndarray | float = 0.0

    def __post_init__(self):
        g = self.gammas
        if any(not (x >= 0) for x in g):
            raise ValueError(f"cost: weights gamma1..gamma6 must be >= 0 (A5), got {g}")

    @property
    def trivial(self) -> bool:
        # all-zero weights are legal here (degenerate checks); run configs reject them
        return not any(x > 0 for x in self.gammas)

    @property
    def gammas(self) -> tuple[float, ...]:
        return (self.gamma1, self.gamma2, self.gamma3, self.gamma4, self.gamma5, self.gamma6)

    def targets(self, steps: int, cells: int):
        """Broadcast targets to (N, cells) for the running terms and (cells,) for the final ones."""
        try:
            phi_Q = np.broadcast_to(np.asarray(self.phi_Q, dtype=float), (steps, cells))
            sigma_Q = np.broadcast_to(np.asarray(self.sigma_Q, dtype=float), (steps, cells))
            phi_O = np.broadcast_to(np.asarray(self.phi_Omega, dtype=float), (cells,))
            sigma_O = np.broadcast_to(np.asarray(self.sigma_Omega, dtype=float), (cells,))
        except ValueError as exc:
            raise ValueError(f"shape-mismatch: cost targets do not fit the grid ({exc})") from None
        return phi_Q, sigma_Q, phi_O, sigma_O


def _weights(traj: StateTrajectory):
    return traj.timegrid.tau, traj.domain.cell_volume


def evaluate_cost(traj: StateTrajectory, controls: Controls, spec: CostSpec) -> float:
    tau, vol = _weights(traj)
    N, n = traj.steps, traj.domain.size
    controls.check(traj.domain, traj.timegrid)
    phi_Q, sigma_Q, phi_O, sigma_O = spec.targets(N, n)
    g1, g2, g3, g4, g5, g6 = spec.gammas
    J = 0.5 * vol * (
        g1 * np.sum((traj.phi[N] - phi_O) ** 2)
        + g3 * np.sum((traj.sigma[N] - sigma_O) ** 2)
        + tau * g2 * np.sum((traj.phi[1:] - phi_Q) ** 2)
        + tau * g4 * np.sum((traj.sigma[1:] - sigma_Q) ** 2)
        + tau * g5 * np.sum(controls.u**2)
        + tau * g6 * np.sum(controls.w**2)
    )
    return float(J)


def adjoint_source(traj: StateTrajectory, spec: CostSpec):
    """Partials of the discrete cost with respect to every state unknown.

    Returns ``(sources, terminal)``: ``sources`` has shape (N, 3*cells), row
    n-1 holding dJ/d(mu_n, phi_n, sigma_n); ``terminal`` is the final-time
    adjoint data (p_T, q_T, r_T) in pointwise scaling.
    """
    tau, vol = _weights(traj)
    N, n = traj.steps, traj.domain.size
    phi_Q, sigma_Q, phi_O, sigma_O = spec.targets(N, n)
    g1, g2, g3, g4, _, _ = spec.gammas
    src = np.zeros((N, 3 * n))
    src[:, n:2 * n] = g2 * tau * vol * (traj.phi[1:] - phi_Q)
    src[:, 2 * n:] = g4 * tau * vol * (traj.sigma[1:] - sigma_Q)
    fin_phi = g1 * (traj.phi[N] - phi_O)
    fin_sigma = g3 * (traj.sigma[N] - sigma_O)
    src[N - 1, n:2 * n] += vol * fin_phi
    src[N - 1, 2 * n:] += vol * fin_sigma
    terminal = (fin_phi / traj.params.beta, np.zeros(n), fin_sigma)
    return src, terminal


def reduced_gradient(traj: StateTrajectory, adj, controls: Controls, spec: CostSpec) -> Controls:
    """(tau|cell|(-h(phi) q + gamma5 u), tau|cell|(r + gamma6 w)) per step."""
    if adj.trajectory is not traj:
        raise ValueError("mismatched-trajectory: adjoint was computed from a different state trajectory")
    tau, vol = _weights(traj)
    h = h_eval(traj.phi[1:])
    gu = tau * vol * (-h * adj.q + spec.gamma5 * controls.u)
    gw = tau * vol * (adj.r + spec.gamma6 * controls.w)
    return Controls(gu, gw)
