"""Clamped B-spline grids, spline edges, and least-squares fitting.

Everything here is univariate. A grid fixes a clamped open-uniform knot
vector on a closed interval; an edge is a coefficient vector over the
grid's basis. Basis evaluation uses the Cox-de Boor recursion vectorized
over evaluation points, so a design matrix for a whole batch costs a
handful of numpy passes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DomainError

# Points this far outside the domain are snapped to the boundary; farther
# out is an error.
CLAMP_TOL = 1e-12


@dataclass(frozen=True)
class KnotGrid:
    """Clamped open-uniform knot grid of a given degree.

    ``intervals`` is the number of uniform spans of the domain, so the
    basis has ``intervals + degree`` functions (cubic over 20 spans gives
    the default 23 coefficients per edge).
    """

    degree: int = 3
    intervals: int = 20
    domain: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 1:
            raise ConfigError(f"spline degree must be an integer >= 1, got {self.degree}")
        if int(self.intervals) != self.intervals or self.intervals < 1:
            raise ConfigError(f"grid intervals must be an integer >= 1, got {self.intervals}")
        a, b = self.domain
        if not (np.isfinite(a) and np.isfinite(b) and a < b):
            raise ConfigError(f"grid domain must satisfy a < b, got {self.domain}")

    @property
    def basis_count(self) -> int:
        return self.intervals + self.degree

    @property
    def knots(self) -> np.ndarray:
        return _knot_vector(self)


@lru_cache(maxsize=None)
def _knot_vector(grid: KnotGrid) -> np.ndarray:
    a, b = grid.domain
    k, p = grid.degree, grid.intervals
    interior = a + (b - a) * np.arange(1, p) / p
    t = np.concatenate([np.full(k + 1, a), interior, np.full(k + 1, b)])
    t.flags.writeable = False
    return t


def _clamp_to_domain(grid: KnotGrid, x: np.ndarray, label: str) -> np.ndarray:
    a, b = grid.domain
    if np.any(x < a - CLAMP_TOL) or np.any(x > b + CLAMP_TOL):
        bad = x[(x < a - CLAMP_TOL) | (x > b + CLAMP_TOL)]
        raise DomainError(
            f"{label}: point {bad.flat[0]!r} outside domain [{a}, {b}]"
        )
    return np.clip(x, a, b)


def _degree_zero(grid: KnotGrid, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Degree-0 indicator table, with x == b assigned to the last span."""
    t = grid.knots
    k = grid.degree
    m = x.shape[0]
    nfun = len(t) - 1
    span = np.searchsorted(t, x, side="right") - 1
    span = np.clip(span, k, k + grid.intervals - 1)
    B = np.zeros((m, nfun))
    B[np.arange(m), span] = 1.0
    return B, t


def _raise_degree(B: np.ndarray, t: np.ndarray, x: np.ndarray, d: int) -> np.ndarray:
    """One Cox-de Boor step: degree d-1 table -> degree d table."""
    nd = B.shape[1] - 1
    den1 = t[d : d + nd] - t[:nd]
    den2 = t[d + 1 : d + 1 + nd] - t[1 : 1 + nd]
    xc = x[:, None]
    w1 = np.where(den1 > 0, (xc - t[:nd]) / np.where(den1 > 0, den1, 1.0), 0.0)
    w2 = np.where(den2 > 0, (t[d + 1 : d + 1 + nd] - xc) / np.where(den2 > 0, den2, 1.0), 0.0)
    return w1 * B[:, :nd] + w2 * B[:, 1 : 1 + nd]


def design_matrix(grid: KnotGrid, x, label: str = "spline") -> np.ndarray:
    """All basis values at each point: shape (len(x), basis_count).

    Rows are nonnegative and sum to one (partition of unity). Points
    within ``CLAMP_TOL`` outside the domain are snapped to the boundary;
    anything farther raises ``DomainError``.
    """
    x = _clamp_to_domain(grid, np.atleast_1d(np.asarray(x, dtype=float)), label)
    B, t = _degree_zero(grid, x)
    for d in range(1, grid.degree + 1):
        B = _raise_degree(B, t, x, d)
    return B


def design_and_derivative(grid: KnotGrid, x, label: str = "spline"):
    """Basis values and their x-derivatives at each point.

    Returns (B, dB), both of shape (len(x), basis_count). The derivative
    uses the standard degree-lowering identity on the degree k-1 table.
    """
    x = _clamp_to_domain(grid, np.atleast_1d(np.asarray(x, dtype=float)), label)
    k = grid.degree
    B, t = _degree_zero(grid, x)
    for d in range(1, k):
        B = _raise_degree(B, t, x, d)
    lower = B  # degree k-1 table, basis_count + 1 columns
    B = _raise_degree(lower, t, x, k)
    nb = B.shape[1]
    den1 = t[k : k + nb] - t[:nb]
    den2 = t[k + 1 : k + 1 + nb] - t[1 : 1 + nb]
    term1 = np.where(den1 > 0, lower[:, :nb] / np.where(den1 > 0, den1, 1.0), 0.0)
    term2 = np.where(den2 > 0, lower[:, 1 : 1 + nb] / np.where(den2 > 0, den2, 1.0), 0.0)
    return B, k * (term1 - term2)


def basis_eval(grid: KnotGrid, x: float, label: str = "spline") -> np.ndarray:
    """Basis vector at a single point."""
    return design_matrix(grid, x, label)[0]


@dataclass
class SplineEdge:
    """A univariate spline: coefficients over a grid's basis."""

    grid: KnotGrid
    coefficients: np.ndarray
    trainable: bool = True

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.grid.basis_count,):
            raise ConfigError(
                f"edge needs {self.grid.basis_count} coefficients, "
                f"got shape {self.coefficients.shape}"
            )

    def copy(self) -> "SplineEdge":
        return SplineEdge(self.grid, self.coefficients.copy(), self.trainable)


def edge_eval(edge: SplineEdge, x: float, label: str = "spline") -> float:
    """Spline value at one point."""
    return float(design_matrix(edge.grid, x, label)[0] @ edge.coefficients)


def edge_eval_many(edge: SplineEdge, x, label: str = "spline") -> np.ndarray:
    return design_matrix(edge.grid, x, label) @ edge.coefficients


def uniform_grid_points(grid: KnotGrid, n: int) -> np.ndarray:
    """n uniform points spanning [a, b), including a, excluding b."""
    a, b = grid.domain
    return a + (b - a) * np.arange(n) / n


def _check_grid_size(n: int):
    if n < 8 or (n & (n - 1)) != 0:
        raise ConfigError(f"evaluation grid size must be a power of two >= 8, got {n}")


@lru_cache(maxsize=None)
def grid_design_matrix(grid: KnotGrid, n: int) -> np.ndarray:
    """Cached design matrix on the n-point uniform evaluation grid."""
    _check_grid_size(n)
    B = design_matrix(grid, uniform_grid_points(grid, n))
    B.flags.writeable = False
    return B


def edge_eval_grid(edge: SplineEdge, n: int) -> np.ndarray:
    """Edge values at n uniform points over [a, b); n a power of two >= 8.

    This is the sampling every discrete transform operates on.
    """
    return grid_design_matrix(edge.grid, n) @ edge.coefficients


def fit_spline(samples, grid: KnotGrid, ridge: float = 0.0) -> SplineEdge:
    """Least-squares spline through (x, y) samples.

    Minimizes sum (y - s(x))^2 + ridge * ||c||^2. With ridge = 0 the
    design must have full column rank; otherwise a singularity error
    suggests passing ridge > 0.
    """
    pts = np.asarray(samples, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ConfigError("samples must be an iterable of (x, y) pairs")
    if ridge < 0:
        raise ConfigError(f"ridge must be >= 0, got {ridge}")
    nb = grid.basis_count
    if pts.shape[0] < nb:
        raise ConfigError(f"need at least {nb} samples to fit, got {pts.shape[0]}")
    B = design_matrix(grid, pts[:, 0], label="fit_spline")
    y = pts[:, 1]
    if ridge == 0.0:
        if np.linalg.matrix_rank(B) < nb:
            raise np.linalg.LinAlgError(
                "normal equations are rank deficient; pass ridge > 0 to stabilize"
            )
        coeffs, *_ = np.linalg.lstsq(B, y, rcond=None)
    else:
        A = B.T @ B + ridge * np.eye(nb)
        coeffs = np.linalg.solve(A, B.T @ y)
    return SplineEdge(grid, coeffs)
