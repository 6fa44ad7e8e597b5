"""Fit metrics, Jacobian redundancy observables, and symbolic rendering."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .network import Network, jacobian
from .spaces import FixedParametric, get_space


def r2_score(predictions, targets) -> float:
    """1 - SS_res / SS_tot; may be negative for fits worse than the mean."""
    predictions = np.asarray(predictions, dtype=float).ravel()
    targets = np.asarray(targets, dtype=float).ravel()
    if predictions.shape != targets.shape or targets.size < 2:
        raise ConfigError("r2_score needs two equal-length vectors of size >= 2")
    ss_tot = float(np.sum((targets - targets.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("r2_score is undefined for constant targets (zero variance)")
    ss_res = float(np.sum((targets - predictions) ** 2))
    return 1.0 - ss_res / ss_tot


# ---------------------------------------------------------------------------
# Jacobian spectral observables


@dataclass
class SpectralReport:
    round_index: int
    jac_std: float
    singular_values: np.ndarray
    param_count: int
    empty: bool = False


def spectral_spread(net: Network, inputs, round_index: int = 0) -> SpectralReport:
    """Standard deviation of Jacobian entries plus its singular values.

    The entry standard deviation is the redundancy proxy; the singular
    values expose the same structure spectrally. Both are reported.
    """
    total, _ = net.parameter_count()
    if total == 0:
        return SpectralReport(round_index, float("nan"), np.array([]), 0, empty=True)
    J = jacobian(net, inputs)
    sv = np.linalg.svd(J, compute_uv=False)
    return SpectralReport(
        round_index=round_index,
        jac_std=float(J.std()),
        singular_values=np.sort(sv)[::-1],
        param_count=total,
    )


_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29)


def halton_points(count: int, dim: int, seed: int = 0) -> np.ndarray:
    """Deterministic low-discrepancy points in [0, 1]^dim.

    The seed offsets the sequence start so distinct runs can use distinct
    but reproducible point sets; within a run the same points are reused
    at every round so spreads stay comparable.
    """
    if dim > len(_PRIMES):
        raise ConfigError(f"halton_points supports up to {len(_PRIMES)} dimensions")
    start = 1 + (seed % 1000) * count
    pts = np.empty((count, dim))
    for d in range(dim):
        base = _PRIMES[d]
        for i in range(count):
            n, f, x = start + i, 1.0, 0.0
            while n > 0:
                f /= base
                x += f * (n % base)
                n //= base
            pts[i, d] = x
    return pts


# ---------------------------------------------------------------------------
# symbolic rendering


@dataclass
class SymbolicEdge:
    key: tuple
    kind: str
    expression: str


def _format_terms(terms: list[tuple[float, str]]) -> str:
    """Sign-aware join of (coefficient, basis label) pairs."""
    parts = []
    for coeff, label in terms:
        mag = f"{abs(coeff):.6g}"
        body = mag if label == "1" else f"{mag}*{label}"
        if not parts:
            parts.append(body if coeff >= 0 else f"-{body}")
        else:
            parts.append(f"{'+' if coeff >= 0 else '-'} {body}")
    return " ".join(parts) if parts else "0"


def render_fixed(fp: FixedParametric) -> str:
    space = fp.space()
    terms = [(float(c), space.term_label(idx)) for idx, c in zip(fp.indices, fp.coefficients)]
    return _format_terms(terms)


def render_symbolic(net: Network) -> list[SymbolicEdge]:
    """Human-readable formulas for every edge.

    Frozen edges render their truncated series with coefficients at six
    significant digits; spline edges render as a placeholder carrying the
    degree and grid size. ``u`` is the space's normalized input (phase in
    [0, 1] for Fourier and Bessel, [-1, 1] for Chebyshev).
    """
    out = []
    for key in net.edge_keys():
        state = net.edges[key].state
        if state.is_fixed:
            out.append(SymbolicEdge(key, state.fixed.kind, render_fixed(state.fixed)))
        else:
            grid = state.spline.grid
            out.append(
                SymbolicEdge(key, "spline", f"spline(k={grid.degree}, p={grid.intervals})")
            )
    return out


def normalized_input(fp: FixedParametric, x):
    """Map a domain point to the u convention the rendered formula uses."""
    a, b = fp.domain
    x = np.asarray(x, dtype=float)
    if fp.kind == "chebyshev":
        return 2.0 * (x - a) / (b - a) - 1.0
    return (x - a) / (b - a)


def symbolic_namespace(fp: FixedParametric) -> dict:
    """Names needed to evaluate a rendered expression with ``eval``.

    Chebyshev polynomials and the orthonormalized Bessel family are bound
    as T<k>(u) and phi<k>(u); the caller supplies u via
    ``normalized_input``.
    """
    ns = {"sin": np.sin, "cos": np.cos, "pi": np.pi}
    space = fp.space()
    a, b = fp.domain
    if fp.kind == "chebyshev":
        for k in range(space.basis_count):
            ns[f"T{k}"] = (lambda kk: lambda u: np.cos(kk * np.arccos(np.clip(u, -1, 1))))(k)
    elif fp.kind == "bessel":
        for k in fp.indices:
            def make(kk):
                def phi(u):
                    x = a + (b - a) * np.asarray(u, dtype=float)
                    return space.continuous_rows([kk], np.atleast_1d(x))[0]
                return phi
            ns[f"phi{k}"] = make(k)
    return ns


# ---------------------------------------------------------------------------
# CSV assembly

DIAGNOSTICS_SCHEMA = "# pkan.diagnostics.v1"


def diagnostics_rows(run_result, space_kinds) -> tuple[list[str], list[list]]:
    """(header, rows) for the per-round diagnostics table.

    Singular-value columns are sized to the round-0 report; later rounds
    (fewer parameters) leave the tail columns empty.
    """
    n_sv = max(len(rep.singular_values) for rep in run_result.spectral)
    header = ["round", "param_count", "jac_std"]
    header += [f"sv_{i + 1}" for i in range(n_sv)]
    header += ["train_r2", "val_r2"]
    header += [f"mean_entropy_{kind}" for kind in space_kinds]
    rows = []
    for log, rep in zip(run_result.rounds, run_result.spectral):
        row = [log.round_index, rep.param_count, rep.jac_std]
        svs = list(rep.singular_values)
        row += svs + [""] * (n_sv - len(svs))
        row.append(log.metrics.get("train_r2"))
        row.append(log.metrics.get("val_r2"))
        for kind in space_kinds:
            row.append(log.metrics.get(f"mean_entropy_{kind}"))
        rows.append(row)
    return header, rows


def format_csv(header: list[str], rows: list[list], schema: str) -> str:
    """Render a CSV document with a leading schema comment line.

    Floats are rendered with ``repr`` so equal runs produce
    byte-identical files.
    """
    lines = [schema, ",".join(header)]
    for row in rows:
        cells = []
        for cell in row:
            if cell is None or cell == "":
                cells.append("")
            elif isinstance(cell, float):
                cells.append(repr(cell))
            else:
                cells.append(str(cell))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
