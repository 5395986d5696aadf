"""Independent probes of the solver's analytical properties.

Every probe here reaches the state only through ``ControlProblem.solve`` and
``evaluate_cost``; the finite-difference oracles never touch the adjoint path.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .cost import CostSpec, adjoint_source, evaluate_cost, reduced_gradient
from .grid import Domain, grad_norm_sq, integrate, norm
from .potentials import PotentialSpec, h_eval, potential_eval
from .problem import ControlProblem
from .sensitivity import solve_adjoint, solve_linearized
from .state import Controls, StateTrajectory


def random_direction(problem: ControlProblem, rng, smooth: bool = False) -> Controls:
    shape = problem.control_shape
    if not smooth:
        return Controls(rng.standard_normal(shape), rng.standard_normal(shape))
    # a few low cosine modes in space times a random time profile
    xs = problem.domain.centers()
    parts = []
    for _ in range(2):
        field = np.zeros(problem.domain.size)
        for m in range(3):
            mode = np.ones(problem.domain.size)
            for x, length in zip(xs, problem.domain.lengths):
                mode = mode * np.cos(m * np.pi * x / length)
            field += rng.standard_normal() * mode
        t = np.linspace(0, 1, shape[0])
        prof = rng.standard_normal() + rng.standard_normal() * t
        parts.append(np.outer(prof, field))
    return Controls(*parts)


# -- gradient oracle ---------------------------------------------------------

def fd_gradient(problem: ControlProblem, controls: Controls, direction: Controls,
                fd_step: float = 1e-5, scale_aware: bool = True) -> float:
    """Central difference (J(c + h d) - J(c - h d)) / (2h) from two forward solves."""
    if not (np.any(direction.u) or np.any(direction.w)):
        return 0.0
    h = fd_step
    if scale_aware:
        h *= 1.0 + max(np.abs(controls.u).max(), np.abs(controls.w).max())
    jp = problem.reduced_cost(controls + direction * h)
    jm = problem.reduced_cost(controls - direction * h)
    return (jp - jm) / (2 * h)


def gradient_check(problem: ControlProblem, controls: Controls, probes: int = 5, seed: int = 0,
                   fd_step: float = 1e-5):
    """Compare <exact gradient, d> against central differences in random directions."""
    rng = np.random.default_rng(seed)
    _, grad, _, _ = problem.cost_and_gradient(controls)
    rows = []
    for _ in range(probes):
        d = random_direction(problem, rng)
        fd = fd_gradient(problem, controls, d, fd_step)
        an = float(np.sum(grad.u * d.u) + np.sum(grad.w * d.w))
        rel = abs(fd - an) / max(abs(fd), abs(an), 1e-300)
        rows.append({"fd": fd, "adjoint": an, "rel_err": rel})
    return rows


# -- trajectory norms --------------------------------------------------------

def _h1_sq(domain: Domain, f) -> float:
    return norm(domain, f) ** 2 + grad_norm_sq(domain, f)


def y_norm(domain: Domain, tau: float, stacked: np.ndarray) -> float:
    """Discrete norm mirroring (C0 H & L2 V) x (H1 H & Linf V) x (C0 H & L2 V).

    ``stacked`` has shape (N+1, 3, cells) in (mu, phi, sigma) order.
    """
    mu, phi, sig = stacked[:, 0], stacked[:, 1], stacked[:, 2]

    def c0h_l2v(f):
        sup = max(norm(domain, x) for x in f)
        l2v = np.sqrt(tau * sum(_h1_sq(domain, x) for x in f[1:]))
        return sup + l2v

    dphi = np.diff(phi, axis=0) / tau
    h1h = np.sqrt(tau * sum(norm(domain, x) ** 2 + norm(domain, y) ** 2 for x, y in zip(dphi, phi[1:])))
    linf_v = max(np.sqrt(_h1_sq(domain, x)) for x in phi)
    return float(c0h_l2v(mu) + h1h + linf_v + c0h_l2v(sig))


def _fit_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def frechet_order_probe(problem: ControlProblem, controls: Controls, direction: Controls,
                        lambdas=(1e-1, 3e-2, 1e-2, 3e-3)):
    """Remainder rho(lam) = |S(c + lam d) - S(c) - lam DS(c)d|_Y and its log-log slope."""
    traj = problem.solve(controls)
    lin = solve_linearized(traj, direction).stacked()
    base = traj.stacked()
    tau = problem.timegrid.tau
    rhos = []
    for lam in lambdas:
        pert = problem.solve(controls + direction * lam).stacked()
        rhos.append(y_norm(problem.domain, tau, pert - base - lam * lin))
    rhos = np.array(rhos)
    if not np.any(rhos):
        return {"slope": float("nan"), "rho": rhos, "lambdas": np.array(lambdas), "monotone": True}
    order = np.argsort(lambdas)[::-1]
    monotone = bool(np.all(np.diff(rhos[order]) < 0))
    return {"slope": _fit_slope(lambdas, rhos), "rho": rhos, "lambdas": np.array(lambdas),
            "monotone": monotone}


def tangent_order_probe(problem: ControlProblem, controls: Controls, direction: Controls,
                        lambdas=(1e-1, 1e-2, 1e-3)):
    """Error of the difference quotient (S(c + lam d) - S(c))/lam against DS(c)d."""
    traj = problem.solve(controls)
    lin = solve_linearized(traj, direction).stacked()
    base = traj.stacked()
    tau = problem.timegrid.tau
    errs = np.array([
        y_norm(problem.domain, tau, (problem.solve(controls + direction * lam).stacked() - base) / lam - lin)
        for lam in lambdas
    ])
    return {"slope": _fit_slope(lambdas, errs), "error": errs, "lambdas": np.array(lambdas)}


def lipschitz_probe(problem: ControlProblem, pairs):
    """|S(c1) - S(c2)|_Y / |c1 - c2|_{L2(Q)} for each control pair."""
    ratios = []
    for c1, c2 in pairs:
        dist = problem.l2q_norm(c1 - c2)
        if dist == 0.0:
            raise ValueError("identical-pair: control pair has zero distance")
        diff = problem.solve(c1).stacked() - problem.solve(c2).stacked()
        ratios.append(y_norm(problem.domain, problem.timegrid.tau, diff) / dist)
    ratios = np.array(ratios)
    return {"ratios": ratios, "max": float(ratios.max())}


# -- state monitors ----------------------------------------------------------

def separation_report(traj: StateTrajectory, potential: PotentialSpec | None = None) -> dict:
    potential = potential or traj.potential
    lo, hi = float(traj.phi.min()), float(traj.phi.max())
    if not potential.singular:
        return {"phi_min": lo, "phi_max": hi, "margin_lo": float("inf"), "margin_hi": float("inf"),
                "applicable": False, "level_margins": None}
    r_lo, r_hi = potential.effective_domain
    level = np.minimum(traj.phi.min(axis=1) - r_lo, r_hi - traj.phi.max(axis=1))
    return {"phi_min": lo, "phi_max": hi, "margin_lo": lo - r_lo, "margin_hi": r_hi - hi,
            "applicable": True, "level_margins": level}


def mass_identity_residuals(traj: StateTrajectory, controls: Controls | None = None,
                            phi=None, mu=None, sigma=None):
    """Per-step defects of the two integrated balance laws.

    sigma:    int (sigma_n - sigma_{n-1})/tau - int (B(sigma_s - sigma_n) - D sigma_n h(phi_n) + w_n)
    combined: int alpha(mu_n - mu_{n-1})/tau + (phi_n - phi_{n-1})/tau - int (P sigma_n - A - u_n) h(phi_n)

    Returns a dict with both series and the per-step scale |Omega| * (residual
    scale of the Newton solve); arrays may be overridden to test the detector.
    """
    controls = controls or traj.controls
    p, d, tau = traj.params, traj.domain, traj.timegrid.tau
    mu = traj.mu if mu is None else mu
    phi = traj.phi if phi is None else phi
    sigma = traj.sigma if sigma is None else sigma
    N = traj.steps
    res_sigma = np.empty(N)
    res_comb = np.empty(N)
    for k in range(N):
        n = k + 1
        h = h_eval(phi[n])
        lhs = integrate(d, (sigma[n] - sigma[k]) / tau)
        rhs = integrate(d, p.B * (p.sigma_s - sigma[n]) - p.D * sigma[n] * h + controls.w[k])
        res_sigma[k] = lhs - rhs
        lhs = integrate(d, p.alpha * (mu[n] - mu[k]) / tau + (phi[n] - phi[k]) / tau)
        rhs = integrate(d, (p.P * sigma[n] - p.A - controls.u[k]) * h)
        res_comb[k] = lhs - rhs
    scale = d.volume * np.array([r.scale for r in traj.records])
    return {"sigma": np.abs(res_sigma), "combined": np.abs(res_comb), "scale": scale}


# -- continuous adjoint ------------------------------------------------------

def direct_adjoint(traj: StateTrajectory, cost: CostSpec):
    """Backward Euler applied directly to the continuous adjoint system.

    Unknowns (q, p, r) live at the time levels t_0..t_N; the final-time data
    are imposed at t_N and each backward step to t_n uses state coefficients
    at t_n. The operator is assembled here from the equations

        -alpha q_t - Lap q - p = 0
        -q_t - beta p_t - Lap p + chi Lap r + F''(phi) p - (P sigma - A - u) h'(phi) q
             + D sigma h'(phi) r = gamma2 (phi - phi_Q)
        -r_t - Lap r + B r + D h(phi) r - chi p - P h(phi) q = gamma4 (sigma - sigma_Q)

    independently of the forward Jacobians. Returns arrays (q, p, r) of
    shape (N+1, cells).
    """
    d, prm, tau = traj.domain, traj.params, traj.timegrid.tau
    N, n = traj.steps, d.size
    L = d.laplacian
    I = sp.identity(n, format="csr")
    phi_Q, sigma_Q, _, _ = cost.targets(N, n)
    _, terminal = adjoint_source(traj, cost)
    p_T, q_T, r_T = terminal
    q, p, r = (np.zeros((N + 1, n)) for _ in range(3))
    q[N], p[N], r[N] = q_T, p_T, r_T
    for lev in range(N - 1, 0, -1):
        phi, sig = traj.phi[lev], traj.sigma[lev]
        u = traj.controls.u[lev - 1]
        h, dh = h_eval(phi), h_eval(phi, 1)
        d2F = potential_eval(traj.potential, phi, 2)
        D = sp.diags
        # block rows: q-equation, p-equation, r-equation; columns (q, p, r)
        A = sp.bmat([
            [prm.alpha / tau * I - L, -I, None],
            [I / tau - D((prm.P * sig - prm.A - u) * dh), prm.beta / tau * I - L + D(d2F),
             prm.chi * L + D(prm.D * sig * dh)],
            [-D(prm.P * h), -prm.chi * I, (1.0 / tau + prm.B) * I - L + D(prm.D * h)],
        ], format="csc")
        rhs = np.concatenate([
            prm.alpha / tau * q[lev + 1],
            (q[lev + 1] + prm.beta * p[lev + 1]) / tau + cost.gamma2 * (phi - phi_Q[lev - 1]),
            r[lev + 1] / tau + cost.gamma4 * (sig - sigma_Q[lev - 1]),
        ])
        q[lev], p[lev], r[lev] = np.split(splu(A).solve(rhs), 3)
    return q, p, r


def continuous_adjoint_deviation(problem: ControlProblem, controls: Controls) -> dict:
    """Relative L2(Q) gap between gradients from the direct and the exact discrete adjoint."""
    traj = problem.solve(controls)
    adj = solve_adjoint(traj, problem.cost)
    exact = problem.riesz(reduced_gradient(traj, adj, controls, problem.cost))
    q, _, r = direct_adjoint(traj, problem.cost)
    h = h_eval(traj.phi[1:])
    direct = Controls(-h * q[1:] + problem.cost.gamma5 * controls.u, r[1:] + problem.cost.gamma6 * controls.w)
    gap = problem.l2q_norm(direct - exact)
    ref = problem.l2q_norm(exact)
    return {"absolute": gap, "relative": gap / ref if ref > 0 else gap, "norm": ref}


def continuous_adjoint_crosscheck(problem: ControlProblem, control_fn, steps=(10, 20, 40, 80)):
    """Deviation series under tau-halving; ``control_fn(problem)`` builds controls on each grid."""
    devs = []
    for N in steps:
        pr = problem.with_timegrid(type(problem.timegrid)(problem.timegrid.T, N))
        devs.append(continuous_adjoint_deviation(pr, control_fn(pr))["absolute"])
    devs = np.array(devs)
    orders = np.log(devs[:-1] / devs[1:]) / np.log(np.array(steps[1:]) / np.array(steps[:-1]))
    return {"steps": np.array(steps), "deviation": devs, "orders": orders}


# -- self-convergence --------------------------------------------------------

def temporal_convergence(problem: ControlProblem, control_fn, steps=(10, 20, 40, 80)):
    """Observed orders of the terminal state under tau-halving (successive differences)."""
    finals = []
    for N in steps:
        pr = problem.with_timegrid(type(problem.timegrid)(problem.timegrid.T, N))
        tr = pr.solve(control_fn(pr))
        finals.append(tr.stacked()[-1])
    d = problem.domain
    diffs = np.array([sum(norm(d, a[i] - b[i]) for i in range(3)) for a, b in zip(finals[:-1], finals[1:])])
    orders = np.log(diffs[:-1] / diffs[1:]) / np.log(2.0)
    return {"steps": np.array(steps), "differences": diffs, "orders": orders}


def spatial_convergence(build, cells=(16, 48, 144)):
    """Observed orders in the cell width under refinement by 3.

    ``build(cells)`` returns (problem, controls) on a 1-D grid with that many
    cells. Refining by 3 keeps every coarse cell center on a fine cell
    center, so terminal states are compared without interpolation.
    """
    finals = []
    for nc in cells:
        pr, c = build(nc)
        finals.append((pr.domain, pr.solve(c).stacked()[-1]))
    diffs = []
    for (dc, xc), (_, xf) in zip(finals[:-1], finals[1:]):
        sub = xf[:, 1::3]
        diffs.append(sum(norm(dc, xc[i] - sub[i]) for i in range(3)))
    diffs = np.array(diffs)
    orders = np.log(diffs[:-1] / diffs[1:]) / np.log(3.0)
    return {"cells": np.array(cells), "differences": diffs, "orders": orders}
