"""Fully implicit (backward Euler) solver for the chemotactic tumor-growth system

    alpha mu_t + phi_t - Lap mu = (P sigma - A - u) h(phi)
    mu = beta phi_t - Lap phi + F'(phi) - chi sigma
    sigma_t - Lap sigma = -chi Lap phi + B (sigma_s - sigma) - D sigma h(phi) + w

with homogeneous Neumann walls. Each step is solved by Newton's method on the
coupled unknown x = [mu; phi; sigma]; the converged Jacobian of every step is
kept so that tangent and adjoint sweeps reuse the exact same linearization.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .grid import Domain, integrate
from .potentials import PotentialSpec, h_eval, potential_eval

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class NewtonDivergence(SolverError):
    def __init__(self, step, residual, iterations):
        super().__init__(
            f"newton-divergence: step {step} residual {residual:.3e} after {iterations} iterations"
        )
        self.step = step
        self.residual = residual


class SeparationViolation(SolverError):
    def __init__(self, step, cell, value):
        super().__init__(
            f"separation-violation: phi={value!r} at cell {cell}, step {step} left the open interval (-1, 1)"
        )
        self.step = step
        self.cell = cell
        self.value = value


@dataclass(frozen=True)
class ModelParams:
    alpha: float = 1.0
    beta: float = 1.0
    chi: float = 1.0
    P: float = 0.0
    A: float = 0.0
    B: float = 0.0
    D: float = 0.0
    sigma_s: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "beta", "chi"):
            if not getattr(self, name) > 0:
                raise ValueError(f"model: {name} must be > 0 (A4)")
        for name in ("P", "A", "B", "D", "sigma_s"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"model: {name} must be >= 0 (A4)")


@dataclass(frozen=True)
class TimeGrid:
    T: float
    steps: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"time: T must be > 0, got {self.T}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"time: steps must be a positive integer, got {self.steps}")

    @property
    def tau(self) -> float:
        return self.T / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.tau


@dataclass(frozen=True)
class SolverOptions:
    newton_tol: float = 1e-12
    max_iter: int = 25
    max_halvings: int = 6
    separation_margin: float = 1e-10
    max_pullbacks: int = 40
    keep_factorizations: bool = True


class StateSnapshot(NamedTuple):
    mu: np.ndarray
    phi: np.ndarray
    sigma: np.ndarray

    def stack(self) -> np.ndarray:
        return np.concatenate([self.mu, self.phi, self.sigma])

    @classmethod
    def unstack(cls, x):
        mu, phi, sigma = np.split(np.asarray(x, dtype=float), 3)
        return cls(mu, phi, sigma)


@dataclass
class Controls:
    """Per-step controls; row n-1 acts on the step that produces level n."""

    u: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.u = np.array(self.u, dtype=float)
        self.w = np.array(self.w, dtype=float)
        if self.u.ndim != 2 or self.u.shape != self.w.shape:
            raise ValueError(f"shape-mismatch: u {self.u.shape} vs w {self.w.shape}")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.w))):
            raise ValueError("controls must be finite")

    @classmethod
    def constant(cls, domain: Domain, timegrid: TimeGrid, u=0.0, w=0.0):
        shape = (timegrid.steps, domain.size)
        return cls(np.full(shape, float(u)), np.full(shape, float(w)))

    @classmethod
    def from_vector(cls, v, shape):
        v = np.asarray(v, dtype=float)
        half = v.size // 2
        return cls(v[:half].reshape(shape), v[half:].reshape(shape))

    @property
    def shape(self):
        return self.u.shape

    def vector(self) -> np.ndarray:
        return np.concatenate([self.u.ravel(), self.w.ravel()])

    def copy(self):
        return Controls(self.u.copy(), self.w.copy())

    def check(self, domain: Domain, timegrid: TimeGrid):
        if self.u.shape != (timegrid.steps, domain.size):
            raise ValueError(
                f"shape-mismatch: controls {self.u.shape}, expected {(timegrid.steps, domain.size)}"
            )
        return self

    def __add__(self, other):
        return Controls(self.u + other.u, self.w + other.w)

    def __sub__(self, other):
        return Controls(self.u - other.u, self.w - other.w)

    def __mul__(self, a):
        return Controls(a * self.u, a * self.w)

    __rmul__ = __mul__


@dataclass
class StepRecord:
    jacobian: sp.csc_matrix
    iterations: int
    residual: float
    scale: float
    _lu: object = field(default=None, repr=False)

    @property
    def lu(self):
        if self._lu is None:
            return splu(self.jacobian)
        return self._lu

    def solve(self, b, trans="N"):
        return self.lu.solve(np.asarray(b, dtype=float), trans=trans)


class Stepper:
    """Residual, Jacobian, and Newton step for one backward-Euler step."""

    def __init__(self, domain: Domain, params: ModelParams, potential: PotentialSpec,
                 tau: float, options: SolverOptions | None = None):
        self.domain = domain
        self.params = params
        self.potential = potential
        self.tau = float(tau)
        self.options = options or SolverOptions()
        self.L = domain.laplacian
        self.n = domain.size

    @cached_property
    def _Lnorm(self) -> float:
        return float(abs(self.L).sum(axis=1).max())

    @cached_property
    def mass_matrix(self) -> sp.csr_matrix:
        """E with R = (E x' - E x)/tau + G(x'); rows are (mu, phi, sigma) equations."""
        p, I = self.params, sp.identity(self.n, format="csr")
        return sp.bmat([[p.alpha * I, I, None], [None, p.beta * I, None], [None, None, I]], format="csr")

    @cached_property
    def prev_jacobian(self) -> sp.csr_matrix:
        """Derivative of the step residual with respect to the previous level."""
        return sp.csr_matrix(-self.mass_matrix / self.tau)

    def residual(self, prev: StateSnapshot, nxt: StateSnapshot, u, w) -> StateSnapshot:
        p, tau, L = self.params, self.tau, self.L
        mu0, phi0, sig0 = prev
        mu, phi, sig = nxt
        h = h_eval(phi)
        r_mu = p.alpha * (mu - mu0) / tau + (phi - phi0) / tau - L @ mu - (p.P * sig - p.A - u) * h
        r_phi = p.beta * (phi - phi0) / tau - L @ phi + potential_eval(self.potential, phi, 1) - p.chi * sig - mu
        r_sig = ((sig - sig0) / tau - L @ sig + p.chi * (L @ phi) - p.B * (p.sigma_s - sig)
                 + p.D * sig * h - w)
        return StateSnapshot(r_mu, r_phi, r_sig)

    @cached_property
    def _pattern(self):
        """Constant Jacobian part plus the positions of the state-dependent diagonals."""
        p, tau, L, n = self.params, self.tau, self.L, self.n
        I = sp.identity(n, format="csr")
        const = sp.bmat([
            [p.alpha / tau * I - L, I / tau, None],
            [-I, p.beta / tau * I - L, -p.chi * I],
            [None, p.chi * L, (1.0 / tau + p.B) * I - L],
        ], format="coo")
        ar = np.arange(n)
        # (row block, col block) of each state-dependent diagonal, in _diag_values order
        blocks = [(0, 1), (0, 2), (1, 1), (2, 1), (2, 2)]
        rows = np.concatenate([const.row] + [rb * n + ar for rb, _ in blocks])
        cols = np.concatenate([const.col] + [cb * n + ar for _, cb in blocks])
        keys, inverse = np.unique(cols.astype(np.int64) * 3 * n + rows, return_inverse=True)
        indices = (keys % (3 * n)).astype(np.int32)
        indptr = np.searchsorted(keys // (3 * n), np.arange(3 * n + 1)).astype(np.int32)
        return const.data.copy(), inverse, indices, indptr, keys.size

    def _diag_values(self, phi, sig, u):
        p = self.params
        h, dh = h_eval(phi), h_eval(phi, 1)
        d2F = potential_eval(self.potential, phi, 2)
        return [-(p.P * sig - p.A - u) * dh, -p.P * h, d2F, p.D * sig * dh, p.D * h]

    def jacobian(self, nxt: StateSnapshot, u) -> sp.csc_matrix:
        """Derivative of the step residual with respect to the new level."""
        const, inverse, indices, indptr, nnz = self._pattern
        vals = np.concatenate([const] + self._diag_values(nxt.phi, nxt.sigma, u))
        data = np.bincount(inverse, weights=vals, minlength=nnz)
        m = 3 * self.n
        return sp.csc_matrix((data, indices.copy(), indptr.copy()), shape=(m, m))

    def jacobian_reference(self, nxt: StateSnapshot, u) -> sp.csc_matrix:
        """Block-by-block assembly of the same Jacobian; slow, kept as a cross-check."""
        p, tau, L = self.params, self.tau, self.L
        _, phi, sig = nxt
        I = sp.identity(self.n, format="csr")
        h, dh = h_eval(phi), h_eval(phi, 1)
        d2F = potential_eval(self.potential, phi, 2)
        diag = sp.diags
        return sp.bmat([
            [p.alpha / tau * I - L, I / tau - diag((p.P * sig - p.A - u) * dh), -diag(p.P * h)],
            [-I, p.beta / tau * I - L + diag(d2F), -p.chi * I],
            [None, p.chi * L + diag(p.D * sig * dh), (1.0 / tau + p.B) * I - L + diag(p.D * h)],
        ], format="csc")

    def control_jacobian(self, nxt: StateSnapshot):
        """Diagonals of dR/du (mu rows) and dR/dw (sigma rows)."""
        return h_eval(nxt.phi), -np.ones(self.n)

    def residual_scale(self, prev: StateSnapshot, initial_residual: float) -> float:
        """Reference size for the relative Newton test.

        The initial residual, floored at 1 and at the level below which the
        residual evaluation itself is roundoff (so tol * scale stays attainable).
        """
        x = prev.stack()
        ex = np.abs(self.mass_matrix @ x).max() / self.tau
        roundoff = 16 * np.finfo(float).eps * (self._Lnorm * np.abs(x).max() + ex + 1.0)
        return float(max(1.0, initial_residual, roundoff / self.options.newton_tol))

    def _interior(self, phi):
        if not self.potential.singular:
            return True
        return bool(np.all(np.abs(phi) < 1.0 - self.options.separation_margin))

    def step(self, prev: StateSnapshot, u, w, step_index: int = 0):
        """Advance one step; returns (snapshot, StepRecord)."""
        opts = self.options
        x = prev.stack().copy()
        R = np.concatenate(self.residual(prev, prev, u, w))
        res = np.abs(R).max()
        scale = self.residual_scale(prev, res)
        for it in range(1, opts.max_iter + 2):
            J = self.jacobian(StateSnapshot.unstack(x), u)
            lu = splu(J)
            if res <= opts.newton_tol * scale:
                record = StepRecord(J, it, float(res), scale, lu if opts.keep_factorizations else None)
                return StateSnapshot.unstack(x), record
            if it > opts.max_iter:
                break
            dx = lu.solve(-R)
            x, R, res = self._damped_update(prev, x, dx, res, u, w, step_index)
        raise NewtonDivergence(step_index, float(res), opts.max_iter)

    def _damped_update(self, prev, x, dx, res, u, w, step_index):
        n = self.n
        lam = 1.0
        pulls = 0
        while not self._interior(x[n:2 * n] + lam * dx[n:2 * n]):
            lam *= 0.5
            pulls += 1
            if pulls > self.options.max_pullbacks:
                phi = x[n:2 * n] + dx[n:2 * n]
                cell = int(np.argmax(np.abs(phi)))
                raise SeparationViolation(step_index, cell, float(phi[cell]))
        best = None
        for _ in range(self.options.max_halvings + 1):
            x_try = x + lam * dx
            R_try = np.concatenate(self.residual(prev, StateSnapshot.unstack(x_try), u, w))
            res_try = np.abs(R_try).max()
            if best is None or res_try < best[2]:
                best = (x_try, R_try, res_try)
            if res_try < res:
                break
            lam *= 0.5
        return best


@dataclass
class StateTrajectory:
    domain: Domain
    params: ModelParams
    potential: PotentialSpec
    timegrid: TimeGrid
    controls: Controls
    mu: np.ndarray
    phi: np.ndarray
    sigma: np.ndarray
    records: list
    stepper: Stepper = field(repr=False)

    @property
    def steps(self) -> int:
        return self.timegrid.steps

    def snapshot(self, n: int) -> StateSnapshot:
        return StateSnapshot(self.mu[n], self.phi[n], self.sigma[n])

    def stacked(self) -> np.ndarray:
        """Array of shape (N+1, 3, cells)."""
        return np.stack([self.mu, self.phi, self.sigma], axis=1)

    @property
    def monitors(self) -> dict:
        d = self.domain
        return {
            "time": self.timegrid.times,
            "phi_min": self.phi.min(axis=1),
            "phi_max": self.phi.max(axis=1),
            "mass_mu": np.array([integrate(d, f) for f in self.mu]),
            "mass_phi": np.array([integrate(d, f) for f in self.phi]),
            "mass_sigma": np.array([integrate(d, f) for f in self.sigma]),
            "newton_iterations": np.array([0] + [r.iterations for r in self.records]),
            "newton_residual": np.array([0.0] + [r.residual for r in self.records]),
        }


def solve_state(params: ModelParams, potential: PotentialSpec, controls: Controls,
                initial: StateSnapshot, timegrid: TimeGrid, domain: Domain,
                options: SolverOptions | None = None) -> StateTrajectory:
    """March the state system from ``initial`` over ``timegrid``."""
    controls.check(domain, timegrid)
    initial = StateSnapshot(*(domain.check(f).copy() for f in initial))
    if potential.singular:
        bad = np.abs(initial.phi) >= 1.0
        if np.any(bad):
            cell = int(np.flatnonzero(bad)[0])
            raise SeparationViolation(0, cell, float(initial.phi[cell]))
    stepper = Stepper(domain, params, potential, timegrid.tau, options)
    N, n = timegrid.steps, domain.size
    mu, phi, sigma = (np.empty((N + 1, n)) for _ in range(3))
    mu[0], phi[0], sigma[0] = initial
    records = []
    prev = initial
    for k in range(N):
        nxt, rec = stepper.step(prev, controls.u[k], controls.w[k], step_index=k + 1)
        mu[k + 1], phi[k + 1], sigma[k + 1] = nxt
        records.append(rec)
        prev = nxt
    log.debug("state solve: %d steps, max newton its %d", N, max(r.iterations for r in records))
    return StateTrajectory(domain, params, potential, timegrid, controls, mu, phi, sigma, records, stepper)


def step_state(prev: StateSnapshot, u, w, stepper: Stepper, step_index: int = 0):
    return stepper.step(prev, u, w, step_index)


def state_residual(prev: StateSnapshot, nxt: StateSnapshot, u, w, stepper: Stepper) -> StateSnapshot:
    for f in (*prev, *nxt):
        stepper.domain.check(f)
    return stepper.residual(prev, nxt, u, w)
