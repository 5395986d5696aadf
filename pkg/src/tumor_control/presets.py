"""Named profiles for initial data and cost targets."""
from __future__ import annotations

import numpy as np

from .grid import Domain

PRESETS = ("constant", "cosine", "gaussian")


def profile(domain: Domain, name: str, a: float = 0.0, b: float = 0.0, width: float = 0.1) -> np.ndarray:
    """Evaluate a preset at cell centers.

    constant: a
    cosine:   a * prod_i cos(pi x_i / L_i) + b
    gaussian: a * exp(-|x - center|^2 / (2 width^2)) + b
    """
    xs = domain.centers()
    if name == "constant":
        return domain.full(a)
    if name == "cosine":
        out = np.ones(domain.size)
        for x, length in zip(xs, domain.lengths):
            out = out * np.cos(np.pi * x / length)
        return a * out + b
    if name == "gaussian":
        r2 = sum((x - 0.5 * length) ** 2 for x, length in zip(xs, domain.lengths))
        return a * np.exp(-r2 / (2 * width**2)) + b
    raise ValueError(f"unknown preset {name!r}; expected one of {PRESETS}")
