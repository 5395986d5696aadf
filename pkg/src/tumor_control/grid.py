"""Uniform cell-centered grids on rectangles with homogeneous Neumann boundaries.

Fields are plain 1-D numpy arrays holding one value per cell, stored
row-major (the last axis varies fastest, as with ``numpy.ravel``).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class GridError(ValueError):
    """Invalid domain description or mismatched field."""


@dataclass(frozen=True)
class Domain:
    dim: int
    lengths: tuple[float, ...]
    cells: tuple[int, ...]

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise GridError(f"invalid-dimension: dim must be 1 or 2, got {self.dim}")
        if len(self.lengths) != self.dim or len(self.cells) != self.dim:
            raise GridError("invalid-dimension: lengths/cells must have one entry per axis")
        if any(not np.isfinite(a) or a <= 0 for a in self.lengths):
            raise GridError(f"nonpositive-length: {self.lengths}")
        if any(int(n) != n or n < 2 for n in self.cells):
            raise GridError(f"cell-count-too-small: need >= 2 cells per axis, got {self.cells}")

    @property
    def cell_size(self) -> tuple[float, ...]:
        return tuple(a / n for a, n in zip(self.lengths, self.cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.cell_size))

    @property
    def size(self) -> int:
        return int(np.prod(self.cells))

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(int(n) for n in self.cells)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def centers(self) -> list[np.ndarray]:
        """Cell-center coordinates, one flattened array per axis."""
        axes = [(np.arange(n) + 0.5) * h for n, h in zip(self.cells, self.cell_size)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return [m.ravel() for m in mesh]

    def zeros(self) -> np.ndarray:
        return np.zeros(self.size)

    def full(self, value: float) -> np.ndarray:
        return np.full(self.size, float(value))

    def check(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape != (self.size,):
            raise GridError(f"domain-mismatch: field of shape {f.shape}, expected ({self.size},)")
        return f

    @cached_property
    def laplacian(self) -> sp.csr_matrix:
        return assemble_neumann_laplacian(self)


def build_domain(dim: int, lengths, cells) -> Domain:
    lengths = tuple(float(a) for a in np.atleast_1d(lengths))
    cells = tuple(int(n) if float(n).is_integer() else n for n in np.atleast_1d(cells))
    return Domain(int(dim), lengths, cells)


def _neumann_1d(n: int, h: float) -> sp.csr_matrix:
    # ghost-cell reflection: f_{-1} = f_0, f_n = f_{n-1}
    main = np.full(n, -2.0)
    main[0] = main[-1] = -1.0
    off = np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") / h**2


def assemble_neumann_laplacian(domain: Domain) -> sp.csr_matrix:
    """Cell-centered 5-point (3-point in 1-D) Laplacian with zero-flux walls.

    The result is exactly symmetric, negative semidefinite, and every row and
    column sums to zero.
    """
    ops = [_neumann_1d(n, h) for n, h in zip(domain.cells, domain.cell_size)]
    if domain.dim == 1:
        L = ops[0]
    else:
        nx, ny = domain.cells
        L = sp.kron(ops[0], sp.identity(ny)) + sp.kron(sp.identity(nx), ops[1])
    L = sp.csr_matrix(L)
    L.sort_indices()
    return L


def inner_product(domain: Domain, f, g) -> float:
    """Lumped L2 inner product: sum over cells of f*g times the cell volume."""
    f = domain.check(f)
    g = domain.check(g)
    return float(np.dot(f, g) * domain.cell_volume)


def integrate(domain: Domain, f) -> float:
    return float(np.sum(domain.check(f)) * domain.cell_volume)


def norm(domain: Domain, f) -> float:
    return float(np.sqrt(inner_product(domain, f, f)))


def grad_norm_sq(domain: Domain, f) -> float:
    """Discrete squared H1 seminorm, -<Lf, f>."""
    f = domain.check(f)
    return max(0.0, -inner_product(domain, domain.laplacian @ f, f))
