"""Double-well potentials F = F1 + F2, the Yosida-regularized logarithmic
potential, and the proliferation switch h.

All evaluators are vectorized over numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, xlogy

VARIANTS = ("regular", "logarithmic", "yosida_logarithmic")

# h is the quintic smoothstep on (-1, 1); sup |h| = 1, sup |h'| = h'(0) = 15/16.
H_SUP = 1.0
H_PRIME_SUP = 15.0 / 16.0

RESOLVENT_TOL = 1e-14


class PotentialDomainError(ValueError):
    """Evaluation point lies outside the effective domain of a singular potential."""

    def __init__(self, message, index=None, value=None):
        super().__init__(message)
        self.index = index
        self.value = value


@dataclass(frozen=True)
class PotentialSpec:
    variant: str = "regular"
    k: float = 2.0
    eps: float = 0.01

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown potential variant {self.variant!r}; expected one of {VARIANTS}")
        if self.variant != "regular" and not self.k > 1:
            raise ValueError(f"potential: k must be > 1 for the logarithmic family, got {self.k}")
        if self.variant == "yosida_logarithmic" and not 0 < self.eps < 1:
            raise ValueError(f"potential: eps must lie in (0, 1), got {self.eps}")

    @property
    def singular(self) -> bool:
        return self.variant == "logarithmic"

    @property
    def effective_domain(self) -> tuple[float, float]:
        if self.singular:
            return (-1.0, 1.0)
        return (-np.inf, np.inf)


def _check_interior(r, closed=False):
    bad = ~((np.abs(r) <= 1.0) if closed else (np.abs(r) < 1.0))
    if np.any(bad):
        idx = int(np.flatnonzero(np.atleast_1d(bad))[0])
        val = float(np.atleast_1d(r)[idx])
        raise PotentialDomainError(
            f"domain-violation: r={val!r} outside (-1, 1) at index {idx}", index=idx, value=val
        )


def _log_convex_part(r, order):
    if order == 0:
        _check_interior(r, closed=True)
        return xlogy(1 + r, 1 + r) + xlogy(1 - r, 1 - r)
    _check_interior(r)
    if order == 1:
        return np.log1p(r) - np.log1p(-r)
    if order == 2:
        return 2.0 / (1.0 - r * r)
    return 4.0 * r / (1.0 - r * r) ** 2


def _sech2(t):
    return 4.0 * expit(2 * t) * expit(-2 * t)


def _resolvent_t(r, eps):
    """Solve tanh(t) + 2*eps*t = r for t; the resolvent is s = tanh(t).

    Writing s = tanh(t) turns F1'(s) into 2t, so the scalar equation is smooth
    and strictly monotone on the whole line.
    """
    r = np.asarray(r, dtype=float)
    lo = (r - 1.0) / (2 * eps)
    hi = (r + 1.0) / (2 * eps)
    t = r / (1.0 + 2 * eps)
    for _ in range(200):
        g = np.tanh(t) + 2 * eps * t - r
        done = np.abs(g) <= RESOLVENT_TOL * np.maximum(1.0, np.abs(r))
        if np.all(done):
            break
        lo = np.where(g < 0, np.maximum(lo, t), lo)
        hi = np.where(g > 0, np.minimum(hi, t), hi)
        dg = _sech2(t) + 2 * eps
        t_new = t - g / dg
        outside = (t_new <= lo) | (t_new >= hi)
        t_new = np.where(outside, 0.5 * (lo + hi), t_new)
        t = np.where(done, t, t_new)
    return t


def yosida_resolvent(r, eps):
    """Unique s in (-1, 1) with s + eps*F1'(s) = r, F1 the convex logarithmic part."""
    return np.tanh(_resolvent_t(r, eps))


def yosida_prime(r, eps):
    """Derivative of the Moreau envelope of F1: (r - resolvent(r)) / eps."""
    # r - s = 2*eps*t exactly, so this avoids the cancellation in (r - s)/eps
    return 2.0 * _resolvent_t(r, eps)


def yosida_envelope(r, eps):
    """Moreau envelope F1_eps(r) = (r - s)^2 / (2 eps) + F1(s)."""
    t = _resolvent_t(r, eps)
    # (1 +/- s) and log(1 +/- s) written in t to stay accurate as |s| -> 1
    one_p = 2.0 * expit(2 * t)
    one_m = 2.0 * expit(-2 * t)
    f1 = one_p * (np.log(2.0) - np.logaddexp(0.0, -2 * t)) + one_m * (np.log(2.0) - np.logaddexp(0.0, 2 * t))
    return 2.0 * eps * t**2 + f1


def _yosida_second(r, eps):
    t = _resolvent_t(r, eps)
    return 2.0 / (_sech2(t) + 2 * eps)


def potential_eval(spec: PotentialSpec, r, order: int = 0):
    """Value or derivative (order 0..3) of the double-well potential."""
    if order not in (0, 1, 2, 3):
        raise ValueError(f"order must be 0..3, got {order}")
    scalar = np.ndim(r) == 0
    r = np.asarray(r, dtype=float)
    if spec.variant == "regular":
        out = (0.25 * (r * r - 1.0) ** 2, r**3 - r, 3 * r * r - 1.0, 6 * r)[order]
    else:
        k = spec.k
        quad = (-k * r * r, -2 * k * r, np.full_like(r, -2 * k), np.zeros_like(r))[order]
        if spec.variant == "logarithmic":
            out = _log_convex_part(r, order) + quad
        else:
            eps = spec.eps
            if order == 3:
                raise ValueError("third derivative is not available for the Yosida-regularized potential")
            convex = (yosida_envelope, yosida_prime, _yosida_second)[order](r, eps)
            out = convex + quad
    return float(out) if scalar else out


def h_eval(r, order: int = 0):
    """Quintic smoothstep switch from h(-1) = 0 to h(1) = 1, C2 on the line."""
    scalar = np.ndim(r) == 0
    s = np.clip((np.asarray(r, dtype=float) + 1.0) / 2.0, 0.0, 1.0)
    if order == 0:
        out = s**3 * (10.0 + s * (-15.0 + 6.0 * s))
    elif order == 1:
        out = 15.0 * s**2 * (1.0 - s) ** 2
    elif order == 2:
        out = 15.0 * s * (1.0 - s) * (1.0 - 2.0 * s)
    else:
        raise ValueError(f"order must be 0..2, got {order}")
    return float(out) if scalar else out
