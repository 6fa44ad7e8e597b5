"""Orthonormal functional spaces and entropy-based projection machinery.

Three candidate spaces are supported: Fourier (complex spectrum on a
uniform grid), Chebyshev (orthonormal DCT-II coefficients at Chebyshev
nodes, with cubic resampling from the uniform grid), and a Bessel family
(constant plus J0 scaled by its successive zeros, Gram-Schmidt
orthonormalized on the uniform grid).

Each space knows three coordinate systems for the same function:

* discrete coefficients in an orthonormal basis on the space's native
  sampling grid (used for projection, truncation, and entropy),
* a continuous formula per basis element (used once an edge is frozen to
  a truncated series, and for derivatives),
* magnitudes feeding the representation entropy. For Fourier these are
  the moduli of the two-sided complex spectrum, so a real sinusoid
  occupies exactly two equal bins and scores entropy ln 2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.fft import dct
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_triangular
from scipy.special import j0, j1, jn_zeros

from .errors import ConfigError, DomainError, NumericError

SPACE_KINDS = ("fourier", "chebyshev", "bessel")

# Deterministic tie-break priority when truncated fits score identically.
_PRIORITY = {kind: rank for rank, kind in enumerate(SPACE_KINDS)}

_CLAMP_TOL = 1e-12


# ---------------------------------------------------------------------------
# entropy and softmin


def coeff_entropy(coefficients) -> float:
    """Shannon entropy of normalized absolute coefficients.

    Magnitudes are normalized to sum to one; zero entries contribute
    zero. An all-zero vector returns 0 (degenerate input, flagged by the
    projection report rather than here).
    """
    mags = np.abs(np.asarray(coefficients))
    if mags.size == 0:
        raise ConfigError("entropy of an empty coefficient vector is undefined")
    total = mags.sum()
    if total == 0.0:
        return 0.0
    p = mags / total
    return float(-np.sum(np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)))


def entropy_from_magnitudes(mags: np.ndarray) -> tuple[float, bool]:
    """(entropy, degenerate flag) from a nonnegative magnitude vector."""
    total = mags.sum()
    if total == 0.0:
        return 0.0, True
    p = mags / total
    ent = float(-np.sum(np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)))
    return ent, False


def entropy_grad_magnitudes(mags: np.ndarray) -> np.ndarray:
    """d entropy / d magnitudes, with subgradient 0 at zero magnitudes."""
    total = mags.sum()
    if total == 0.0:
        return np.zeros_like(mags)
    p = mags / total
    ent = -np.sum(np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0))
    grad = np.where(p > 0, -(np.log(np.where(p > 0, p, 1.0)) + ent) / total, 0.0)
    return grad


def coeff_entropy_grad(coefficients) -> np.ndarray:
    """Gradient of ``coeff_entropy`` for real coefficient vectors."""
    c = np.asarray(coefficients, dtype=float)
    return np.sign(c) * entropy_grad_magnitudes(np.abs(c))


def softmin_entropy(entropies, lam: float) -> float:
    """Smooth minimum: sum_g E_g exp(-lam E_g) / sum_k exp(-lam E_k)."""
    e = np.asarray(entropies, dtype=float)
    if e.size == 0:
        raise ConfigError("softmin of an empty entropy vector is undefined")
    if lam < 0:
        raise ConfigError(f"softmin temperature must be >= 0, got {lam}")
    w = np.exp(-lam * (e - e.min()))
    w /= w.sum()
    return float(w @ e)


def softmin_entropy_grad(entropies, lam: float):
    """(d softmin / d entropies, d softmin / d lam)."""
    e = np.asarray(entropies, dtype=float)
    w = np.exp(-lam * (e - e.min()))
    w /= w.sum()
    star = w @ e
    grad_e = w * (1.0 - lam * (e - star))
    grad_lam = float(star * star - w @ (e * e))
    return grad_e, grad_lam


def lambda_schedule(round_index: int, lam_min: float, lam_max: float, rounds: int) -> float:
    """Linear ramp of the softmin temperature across training rounds."""
    if lam_min > lam_max:
        raise ConfigError(f"lambda schedule needs lam_min <= lam_max, got {lam_min} > {lam_max}")
    if round_index < 0:
        raise ConfigError(f"round index must be >= 0, got {round_index}")
    if rounds < 1:
        raise ConfigError(f"rounds must be >= 1, got {rounds}")
    frac = min(round_index, rounds) / rounds
    return lam_min + (lam_max - lam_min) * frac


# ---------------------------------------------------------------------------
# spaces


class Space:
    """Common interface over the three orthonormal families."""

    kind: str

    def __init__(self, grid_size: int, domain: tuple[float, float], basis_count: int):
        if grid_size < 8 or (grid_size & (grid_size - 1)) != 0:
            raise ConfigError(f"space grid size must be a power of two >= 8, got {grid_size}")
        if not (1 <= basis_count <= grid_size):
            raise ConfigError(
                f"basis_count must lie in [1, grid size={grid_size}], got {basis_count}"
            )
        a, b = domain
        if not a < b:
            raise ConfigError(f"space domain must satisfy a < b, got {domain}")
        self.n = grid_size
        self.domain = (float(a), float(b))
        self.basis_count = basis_count

    # -- grids ------------------------------------------------------------

    def uniform_points(self) -> np.ndarray:
        a, b = self.domain
        return a + (b - a) * np.arange(self.n) / self.n

    def native_points(self) -> np.ndarray:
        return self.uniform_points()

    def phase(self, x) -> np.ndarray:
        """Map domain points to the unit parameter the basis formulas use."""
        a, b = self.domain
        return (np.asarray(x, dtype=float) - a) / (b - a)

    def _clamp(self, x) -> np.ndarray:
        a, b = self.domain
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any(x < a - _CLAMP_TOL) or np.any(x > b + _CLAMP_TOL):
            bad = x[(x < a - _CLAMP_TOL) | (x > b + _CLAMP_TOL)]
            raise DomainError(f"{self.kind}: point {bad.flat[0]!r} outside [{a}, {b}]")
        return np.clip(x, a, b)

    # -- to be provided by each family -------------------------------------

    def discrete_basis(self) -> np.ndarray:
        """Orthonormal rows on the native grid (complex for Fourier)."""
        raise NotImplementedError

    def project_uniform(self, values: np.ndarray) -> np.ndarray:
        """Real coefficients of uniform-grid samples in the working basis."""
        raise NotImplementedError

    def project_native(self, values: np.ndarray) -> np.ndarray:
        """Coefficients of native-grid samples (no resampling)."""
        return self.project_uniform(values)

    def reconstruct_native(self, coeffs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def spectrum(self, values: np.ndarray):
        """Coefficient vector reported to callers (complex for Fourier)."""
        return self.project_uniform(values)

    def entropy_magnitudes(self, values: np.ndarray) -> np.ndarray:
        return np.abs(self.project_uniform(values))

    def entropy_and_grad(self, values: np.ndarray):
        """(entropy, d entropy / d uniform values, degenerate flag)."""
        raise NotImplementedError

    def continuous_rows(self, indices, x, deriv: bool = False):
        """Continuous basis functions at points x: shape (len(indices), len(x)).

        With deriv=True returns (rows, drows/dx).
        """
        raise NotImplementedError

    def continuous_coeffs(self, indices, coeffs: np.ndarray) -> np.ndarray:
        """Convert working-basis coefficients to the continuous convention."""
        raise NotImplementedError

    # -- shared helpers -----------------------------------------------------

    def reconstruct_uniform(self, coeffs: np.ndarray, indices=None) -> np.ndarray:
        """Truncated reconstruction evaluated on the uniform grid."""
        if indices is None:
            indices = np.arange(self.basis_count)
        indices = np.asarray(indices, dtype=int)
        cont = self.continuous_coeffs(indices, coeffs[indices])
        rows = self.continuous_rows(indices, self.uniform_points())
        return cont @ rows

    def eval_continuous(self, indices, cont_coeffs, x, deriv: bool = False):
        x = self._clamp(x)
        if deriv:
            rows, drows = self.continuous_rows(indices, x, deriv=True)
            return cont_coeffs @ rows, cont_coeffs @ drows
        return cont_coeffs @ self.continuous_rows(indices, x)


class FourierSpace(Space):
    kind = "fourier"

    def __init__(self, grid_size=64, domain=(-1.0, 1.0), basis_count=None):
        super().__init__(grid_size, domain, basis_count or grid_size)
        n = self.n
        t = np.arange(n) / n
        # Real orthonormal trigonometric basis: DC, cos/sin pairs, Nyquist.
        rows = np.empty((n, n))
        freqs = np.empty(n, dtype=int)
        is_sin = np.zeros(n, dtype=bool)
        rows[0] = 1.0 / np.sqrt(n)
        freqs[0] = 0
        amp = np.sqrt(2.0 / n)
        for q in range(1, n // 2):
            rows[2 * q - 1] = amp * np.cos(2 * np.pi * q * t)
            rows[2 * q] = amp * np.sin(2 * np.pi * q * t)
            freqs[2 * q - 1] = q
            freqs[2 * q] = q
            is_sin[2 * q] = True
        rows[n - 1] = np.cos(np.pi * n * t) / np.sqrt(n)
        freqs[n - 1] = n // 2
        self._real_basis = rows
        self._freqs = freqs
        self._is_sin = is_sin
        # Continuous amplitude = discrete coefficient * this scale.
        self._cont_scale = np.where(
            (freqs == 0) | (freqs == n // 2), 1.0 / np.sqrt(n), amp
        )

    def discrete_basis(self) -> np.ndarray:
        k = np.arange(self.basis_count)
        j = np.arange(self.n)
        return np.exp(-2j * np.pi * np.outer(k, j) / self.n) / np.sqrt(self.n)

    def project_uniform(self, values: np.ndarray) -> np.ndarray:
        return self._real_basis[: self.basis_count] @ values

    def reconstruct_native(self, coeffs: np.ndarray) -> np.ndarray:
        return coeffs @ self._real_basis[: self.basis_count]

    def spectrum(self, values: np.ndarray) -> np.ndarray:
        return np.fft.fft(values) / np.sqrt(self.n)

    def entropy_magnitudes(self, values: np.ndarray) -> np.ndarray:
        return np.abs(self.spectrum(values))

    def entropy_and_grad(self, values: np.ndarray):
        c = self.spectrum(values)
        mags = np.abs(c)
        ent, degenerate = entropy_from_magnitudes(mags)
        if degenerate:
            return ent, np.zeros_like(values), True
        g = entropy_grad_magnitudes(mags)
        # d|c_q|/dv through the unitary transform; zero-modulus bins get
        # the zero subgradient.
        u = np.where(mags > 0, g * np.conj(c) / np.where(mags > 0, mags, 1.0), 0.0)
        grad = np.fft.fft(u).real / np.sqrt(self.n)
        return ent, grad, False

    def continuous_rows(self, indices, x, deriv: bool = False):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        u = self.phase(x)
        a, b = self.domain
        rows = np.empty((len(indices), len(u)))
        drows = np.empty_like(rows) if deriv else None
        for r, idx in enumerate(np.asarray(indices, dtype=int)):
            q = self._freqs[idx]
            ang = 2 * np.pi * q * u
            if self._is_sin[idx]:
                rows[r] = np.sin(ang)
                if deriv:
                    drows[r] = 2 * np.pi * q * np.cos(ang) / (b - a)
            else:
                rows[r] = np.cos(ang)
                if deriv:
                    drows[r] = -2 * np.pi * q * np.sin(ang) / (b - a)
        return (rows, drows) if deriv else rows

    def continuous_coeffs(self, indices, coeffs: np.ndarray) -> np.ndarray:
        return coeffs * self._cont_scale[np.asarray(indices, dtype=int)]

    def term_label(self, idx: int) -> str:
        q = self._freqs[idx]
        if q == 0:
            return "1"
        fn = "sin" if self._is_sin[idx] else "cos"
        return f"{fn}(2*pi*{q}*u)"


class ChebyshevSpace(Space):
    kind = "chebyshev"

    def __init__(self, grid_size=64, domain=(-1.0, 1.0), basis_count=None):
        super().__init__(grid_size, domain, basis_count or grid_size)
        n = self.n
        j = np.arange(n)
        self._nodes_unit = np.cos(np.pi * (j + 0.5) / n)  # descending in [-1, 1]
        k = np.arange(n)
        D = np.cos(np.pi * np.outer(k, j + 0.5) / n) * np.sqrt(2.0 / n)
        D[0] /= np.sqrt(2.0)
        self._dct = D  # orthonormal DCT-II rows at the nodes
        self._scale = np.full(n, np.sqrt(2.0 / n))
        self._scale[0] = np.sqrt(1.0 / n)
        # Cubic resampling operator: uniform-grid samples -> node samples.
        xu = np.arange(n) / n
        xc = (self._nodes_unit + 1.0) / 2.0
        M = np.empty((n, n))
        eye = np.eye(n)
        for col in range(n):
            M[:, col] = CubicSpline(xu, eye[col])(xc)
        self._resample = M

    def native_points(self) -> np.ndarray:
        a, b = self.domain
        return a + (b - a) * (self._nodes_unit + 1.0) / 2.0

    def discrete_basis(self) -> np.ndarray:
        return self._dct[: self.basis_count]

    def project_uniform(self, values: np.ndarray) -> np.ndarray:
        return self._dct[: self.basis_count] @ (self._resample @ values)

    def project_native(self, values: np.ndarray) -> np.ndarray:
        return self._dct[: self.basis_count] @ values

    def reconstruct_native(self, coeffs: np.ndarray) -> np.ndarray:
        return coeffs @ self._dct[: self.basis_count]

    def entropy_and_grad(self, values: np.ndarray):
        c = self.project_uniform(values)
        mags = np.abs(c)
        ent, degenerate = entropy_from_magnitudes(mags)
        if degenerate:
            return ent, np.zeros_like(values), True
        g = np.sign(c) * entropy_grad_magnitudes(mags)
        grad = self._resample.T @ (self._dct[: self.basis_count].T @ g)
        return ent, grad, False

    def _unit(self, x) -> np.ndarray:
        a, b = self.domain
        return 2.0 * (np.asarray(x, dtype=float) - a) / (b - a) - 1.0

    def continuous_rows(self, indices, x, deriv: bool = False):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        w = self._unit(x)
        indices = np.asarray(indices, dtype=int)
        kmax = int(indices.max()) if len(indices) else 0
        # Chebyshev recurrence for values and derivatives up to kmax.
        T = np.empty((kmax + 1, len(w)))
        T[0] = 1.0
        if kmax >= 1:
            T[1] = w
        for k in range(2, kmax + 1):
            T[k] = 2 * w * T[k - 1] - T[k - 2]
        rows = T[indices]
        if not deriv:
            return rows
        dT = np.zeros_like(T)
        if kmax >= 1:
            dT[1] = 1.0
        for k in range(2, kmax + 1):
            dT[k] = 2 * T[k - 1] + 2 * w * dT[k - 1] - dT[k - 2]
        a, b = self.domain
        return rows, dT[indices] * (2.0 / (b - a))

    def continuous_coeffs(self, indices, coeffs: np.ndarray) -> np.ndarray:
        return coeffs * self._scale[np.asarray(indices, dtype=int)]

    def term_label(self, idx: int) -> str:
        return "1" if idx == 0 else f"T{idx}(u)"


class BesselSpace(Space):
    """Constant plus J0 scaled by its successive zeros, orthonormalized.

    The raw family is sampled on the uniform grid and orthonormalized by
    QR; the triangular factor's inverse expresses each orthonormal column
    as a combination of the raw continuous functions, which is what a
    frozen edge evaluates.
    """

    kind = "bessel"

    def __init__(self, grid_size=64, domain=(-1.0, 1.0), basis_count=None):
        super().__init__(grid_size, domain, basis_count or grid_size)
        n = self.n
        u = np.arange(n) / n
        self._zeros = jn_zeros(0, n - 1)
        A = np.empty((n, n))
        A[:, 0] = 1.0
        A[:, 1:] = j0(np.outer(u, self._zeros))
        Q, R = np.linalg.qr(A)
        signs = np.sign(np.diag(R))
        signs[signs == 0] = 1.0
        Q = Q * signs
        R = R * signs[:, None]
        self._Q = Q
        self._Rinv = solve_triangular(R, np.eye(n))

    def discrete_basis(self) -> np.ndarray:
        return self._Q[:, : self.basis_count].T

    def project_uniform(self, values: np.ndarray) -> np.ndarray:
        return self._Q[:, : self.basis_count].T @ values

    def reconstruct_native(self, coeffs: np.ndarray) -> np.ndarray:
        return self._Q[:, : self.basis_count] @ coeffs

    def entropy_and_grad(self, values: np.ndarray):
        c = self.project_uniform(values)
        mags = np.abs(c)
        ent, degenerate = entropy_from_magnitudes(mags)
        if degenerate:
            return ent, np.zeros_like(values), True
        g = np.sign(c) * entropy_grad_magnitudes(mags)
        return ent, self._Q[:, : self.basis_count] @ g, False

    def _raw(self, u: np.ndarray, deriv: bool = False):
        cols = np.empty((len(u), self.n))
        cols[:, 0] = 1.0
        cols[:, 1:] = j0(np.outer(u, self._zeros))
        if not deriv:
            return cols
        dcols = np.zeros_like(cols)
        dcols[:, 1:] = -j1(np.outer(u, self._zeros)) * self._zeros
        return cols, dcols

    def continuous_rows(self, indices, x, deriv: bool = False):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        u = self.phase(x)
        indices = np.asarray(indices, dtype=int)
        comb = self._Rinv[:, indices]
        if deriv:
            raw, draw = self._raw(u, deriv=True)
            a, b = self.domain
            return (raw @ comb).T, (draw @ comb).T / (b - a)
        return (self._raw(u) @ comb).T

    def continuous_coeffs(self, indices, coeffs: np.ndarray) -> np.ndarray:
        return np.asarray(coeffs, dtype=float)

    def term_label(self, idx: int) -> str:
        return f"phi{idx}(u)"


_SPACE_CLASSES = {
    "fourier": FourierSpace,
    "chebyshev": ChebyshevSpace,
    "bessel": BesselSpace,
}

_space_cache: dict = {}


def get_space(kind: str, grid_size: int = 64, domain=(-1.0, 1.0), basis_count=None) -> Space:
    """Cached space instance for (kind, grid size, domain, basis count)."""
    if kind not in _SPACE_CLASSES:
        raise ConfigError(f"unknown functional space {kind!r}; expected one of {SPACE_KINDS}")
    key = (kind, grid_size, tuple(float(v) for v in domain), basis_count)
    if key not in _space_cache:
        _space_cache[key] = _SPACE_CLASSES[kind](grid_size, domain, basis_count)
    return _space_cache[key]


def default_spaces(grid_size: int = 64, domain=(-1.0, 1.0)) -> list[Space]:
    return [get_space(kind, grid_size, domain) for kind in SPACE_KINDS]


# ---------------------------------------------------------------------------
# projection reports and truncated fits


@dataclass
class ProjectionReport:
    """Projection of one sampled function into one space."""

    space_kind: str
    coefficients: np.ndarray
    normalized: np.ndarray
    entropy: float
    degenerate: bool
    truncation_r2: float
    truncation_indices: tuple[int, ...]


@dataclass
class FixedParametric:
    """A frozen edge: a few retained basis terms of one space.

    Coefficients are stored in the continuous convention (the numbers a
    human would read off the rendered formula).
    """

    kind: str
    domain: tuple[float, float]
    indices: tuple[int, ...]
    coefficients: np.ndarray
    grid_size: int = 64

    def __post_init__(self):
        self.indices = tuple(int(i) for i in self.indices)
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if len(self.indices) < 1:
            raise ConfigError("a fixed edge must retain at least one term")
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise ConfigError(f"retained indices must be strictly increasing, got {self.indices}")
        space = get_space(self.kind, self.grid_size, self.domain)
        if self.indices[0] < 0 or self.indices[-1] >= space.basis_count:
            raise ConfigError(
                f"retained indices must lie in [0, {space.basis_count}), got {self.indices}"
            )
        if self.coefficients.shape != (len(self.indices),):
            raise ConfigError("one coefficient per retained index is required")

    def space(self) -> Space:
        return get_space(self.kind, self.grid_size, self.domain)

    def copy(self) -> "FixedParametric":
        return FixedParametric(
            self.kind, self.domain, self.indices, self.coefficients.copy(), self.grid_size
        )


def eval_fixed(fp: FixedParametric, x) -> float:
    """Truncated series value at a point, by the continuous formulas."""
    out = fp.space().eval_continuous(fp.indices, fp.coefficients, x)
    return float(out[0]) if np.ndim(x) == 0 else out


def _truncation_r2(values: np.ndarray, recon: np.ndarray) -> float:
    """R-squared of a reconstruction; constant inputs score 1 when matched."""
    ss_tot = float(np.sum((values - values.mean()) ** 2))
    ss_res = float(np.sum((values - recon) ** 2))
    scale = max(1.0, float(np.sum(values**2)))
    if ss_tot <= 1e-20 * scale:
        # numerically constant input: score by absolute residual instead
        # of a ratio of rounding noise
        return 1.0 if ss_res <= 1e-16 * scale else 0.0
    return 1.0 - ss_res / ss_tot


def _top_indices(coeffs: np.ndarray, n_keep: int) -> np.ndarray:
    order = np.argsort(-np.abs(coeffs), kind="stable")
    return np.sort(order[:n_keep])


def project(values, space: Space, n_keep: int = 4, label: str = "edge") -> ProjectionReport:
    """Project uniform-grid samples into one space.

    Produces the space's coefficient spectrum, normalized magnitudes, the
    representation entropy, and the R-squared of the best n_keep-term
    reconstruction against the input samples.
    """
    values = np.asarray(values, dtype=float)
    if values.shape != (space.n,):
        raise ConfigError(f"expected {space.n} samples for {space.kind}, got {values.shape}")
    if not np.all(np.isfinite(values)):
        raise NumericError(f"{label}: non-finite sample values reached projection")
    spectrum = space.spectrum(values)
    mags = np.abs(spectrum)
    ent, degenerate = entropy_from_magnitudes(mags)
    normalized = mags / mags.sum() if not degenerate else np.zeros_like(mags)
    coeffs = space.project_uniform(values)
    idx = _top_indices(coeffs, n_keep)
    recon = space.reconstruct_uniform(coeffs, idx)
    r2 = _truncation_r2(values, recon)
    return ProjectionReport(
        space_kind=space.kind,
        coefficients=spectrum,
        normalized=normalized,
        entropy=ent,
        degenerate=degenerate,
        truncation_r2=r2,
        truncation_indices=tuple(int(i) for i in idx),
    )


def best_fit(values, spaces, n_keep: int = 4, label: str = "edge"):
    """Best truncated fit across candidate spaces.

    Keeps the n_keep largest-magnitude coefficients per space, scores the
    reconstruction R-squared on the uniform grid, and returns the winning
    frozen representation. Exact ties fall back to the fixed priority
    Fourier, Chebyshev, Bessel.
    """
    if n_keep < 1:
        raise ConfigError(f"n_keep must be >= 1, got {n_keep}")
    values = np.asarray(values, dtype=float)
    candidates = []
    for space in spaces:
        coeffs = space.project_uniform(values)
        idx = _top_indices(coeffs, n_keep)
        recon = space.reconstruct_uniform(coeffs, idx)
        r2 = _truncation_r2(values, recon)
        fp = FixedParametric(
            kind=space.kind,
            domain=space.domain,
            indices=tuple(int(i) for i in idx),
            coefficients=space.continuous_coeffs(idx, coeffs[idx]),
            grid_size=space.n,
        )
        candidates.append((r2, _PRIORITY[space.kind], fp))
    candidates.sort(key=lambda item: (-item[0], item[1]))
    r2, _, fp = candidates[0]
    return fp, r2
