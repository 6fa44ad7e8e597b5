"""KAN assembly: spline/frozen edges, biases, normalizers, reverse mode.

A network is a stack of layers; each layer output is the sum of its
incoming edge functions plus a bias. Edge inputs are kept inside the
spline domain by per-layer affine normalizers followed by a hard clamp
to [-1, 1]; the input normalizer is calibrated from the data range, the
hidden ones from observed activations with a 10% margin.

The gradient engine is layer-structured reverse mode: the forward pass
records post-normalizer activations, the backward pass replays each
layer with basis/derivative matrices and accumulates adjoints. No
general tape is needed because the composition is fixed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import splines
from .errors import ConfigError, NumericError, ProtocolError
from .spaces import FixedParametric, get_space
from .splines import KnotGrid, SplineEdge

EdgeKey = tuple[int, int, int]  # (layer, source, target)

MODEL_FORMAT = "pkan-model/1"


@dataclass
class EdgeState:
    """Lifecycle of one edge: trainable spline or frozen truncated series.

    The prior spline is snapshotted while frozen so a reversion can
    restore it exactly.
    """

    spline: SplineEdge | None = None
    fixed: FixedParametric | None = None
    snapshot: SplineEdge | None = None

    def __post_init__(self):
        if (self.fixed is None) == (self.spline is None):
            raise ConfigError("edge state must hold exactly one of spline / fixed")
        if (self.snapshot is not None) != (self.fixed is not None):
            raise ConfigError("a spline snapshot exists iff the edge is fixed")

    @property
    def is_fixed(self) -> bool:
        return self.fixed is not None

    def parameter_count(self) -> int:
        if self.is_fixed:
            return len(self.fixed.indices)
        return self.spline.grid.basis_count

    def coefficients(self) -> np.ndarray:
        return self.fixed.coefficients if self.is_fixed else self.spline.coefficients

    def fix(self, fp: FixedParametric):
        if self.is_fixed:
            raise ProtocolError("edge is already fixed")
        self.snapshot = self.spline
        self.spline = None
        self.fixed = fp

    def revert(self):
        if not self.is_fixed:
            raise ProtocolError("cannot revert an edge that is not fixed")
        self.spline = self.snapshot
        self.snapshot = None
        self.fixed = None


@dataclass
class Edge:
    layer: int
    src: int
    dst: int
    state: EdgeState

    @property
    def key(self) -> EdgeKey:
        return (self.layer, self.src, self.dst)


def _validate_widths(widths):
    widths = [int(w) for w in widths]
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise ConfigError(f"architecture needs >= 2 layers of width >= 1, got {widths}")
    return widths


class Network:
    """Widths, edges keyed by (layer, source, target), biases, normalizers."""

    def __init__(self, widths, edges: dict[EdgeKey, Edge], biases, norm_scale, norm_shift):
        self.widths = _validate_widths(widths)
        self.edges = edges
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        # norm l maps raw layer-l inputs into the edge domain: u = s*z + c.
        self.norm_scale = [np.asarray(s, dtype=float) for s in norm_scale]
        self.norm_shift = [np.asarray(c, dtype=float) for c in norm_shift]
        domains = {
            (e.state.fixed.domain if e.state.is_fixed else e.state.spline.grid.domain)
            for e in edges.values()
        }
        if len(domains) != 1:
            raise ConfigError(f"all edges must share one domain, found {sorted(domains)}")
        self.edge_domain = next(iter(domains))
        self._cache = None

    # -- structure ----------------------------------------------------------

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def edge_keys(self) -> list[EdgeKey]:
        """Canonical edge order: by layer, then source, then target."""
        return sorted(self.edges.keys())

    def spline_edge_keys(self) -> list[EdgeKey]:
        return [k for k in self.edge_keys() if not self.edges[k].state.is_fixed]

    def fixed_edge_keys(self) -> list[EdgeKey]:
        return [k for k in self.edge_keys() if self.edges[k].state.is_fixed]

    def parameter_entries(self):
        """(key, array) pairs in canonical order: per layer, edges then bias."""
        for layer in range(self.n_layers):
            for key in self.edge_keys():
                if key[0] == layer:
                    yield ("edge",) + key, self.edges[key].state.coefficients()
            yield ("bias", layer), self.biases[layer]

    def parameter_vector(self) -> np.ndarray:
        return np.concatenate([arr for _, arr in self.parameter_entries()])

    def parameter_count(self):
        """(total parameters, per-edge counts in canonical edge order)."""
        per_edge = [(key, self.edges[key].state.parameter_count()) for key in self.edge_keys()]
        total = sum(c for _, c in per_edge) + sum(b.size for b in self.biases)
        return total, per_edge

    def copy(self) -> "Network":
        return network_from_doc(network_to_doc(self))

    # -- evaluation -----------------------------------------------------------

    def _edge_values(self, edge: Edge, u: np.ndarray) -> np.ndarray:
        state = edge.state
        if state.is_fixed:
            fp = state.fixed
            rows = fp.space().continuous_rows(fp.indices, u)
            return fp.coefficients @ rows
        return splines.design_matrix(
            state.spline.grid, u, label=f"edge{edge.key}"
        ) @ state.spline.coefficients

    def forward_batch(self, x: np.ndarray) -> np.ndarray:
        """Forward pass on a (batch, n_inputs) array; records activations."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.widths[0]:
            raise ConfigError(f"expected inputs of shape (batch, {self.widths[0]})")
        if not np.all(np.isfinite(x)):
            raise NumericError("non-finite network input")
        lo, hi = self.edge_domain
        inputs = []  # post-normalizer edge inputs per layer
        masks = []  # 1 where the normalized activation was inside the domain
        z = x
        for layer in range(self.n_layers):
            raw = self.norm_scale[layer] * z + self.norm_shift[layer]
            mask = (raw >= lo) & (raw <= hi)
            u = np.clip(raw, lo, hi)
            inputs.append(u)
            masks.append(mask)
            out = np.tile(self.biases[layer], (x.shape[0], 1))
            for key in self.edge_keys():
                if key[0] != layer:
                    continue
                edge = self.edges[key]
                out[:, key[2]] += self._edge_values(edge, u[:, key[1]])
            if not np.all(np.isfinite(out)):
                bad = int(np.argwhere(~np.isfinite(out))[0][1])
                raise NumericError(f"non-finite activation at layer {layer}, neuron {bad}")
            z = out
        self._cache = {"x": x, "inputs": inputs, "masks": masks, "output": z}
        return z

    def forward(self, x) -> np.ndarray:
        """Forward pass on a single input vector."""
        return self.forward_batch(np.asarray(x, dtype=float)[None, :])[0]

    def backward_batch(self, x: np.ndarray, upstream: np.ndarray) -> dict:
        """Gradients of sum_b upstream[b] . output[b] for every parameter.

        Requires a recorded forward pass for the same inputs.
        """
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if self._cache is None or not np.array_equal(self._cache["x"], x):
            raise ProtocolError("backward requires a forward pass on the same inputs")
        upstream = np.asarray(upstream, dtype=float)
        if upstream.ndim == 1:
            upstream = upstream[None, :]
        grads: dict = {}
        adjoint = upstream  # d objective / d layer output
        for layer in reversed(range(self.n_layers)):
            u = self._cache["inputs"][layer]
            mask = self._cache["masks"][layer]
            grads[("bias", layer)] = adjoint.sum(axis=0)
            adj_u = np.zeros_like(u)
            for key in self.edge_keys():
                if key[0] != layer:
                    continue
                edge = self.edges[key]
                col = u[:, key[1]]
                adj_out = adjoint[:, key[2]]
                state = edge.state
                if state.is_fixed:
                    fp = state.fixed
                    rows, drows = fp.space().continuous_rows(fp.indices, col, deriv=True)
                    grads[("edge",) + key] = rows @ adj_out
                    adj_u[:, key[1]] += adj_out * (fp.coefficients @ drows)
                else:
                    B, dB = splines.design_and_derivative(
                        state.spline.grid, col, label=f"edge{key}"
                    )
                    grads[("edge",) + key] = B.T @ adj_out
                    adj_u[:, key[1]] += adj_out * (dB @ state.spline.coefficients)
            adjoint = adj_u * mask * self.norm_scale[layer]
        return grads

    def backward(self, x, upstream) -> dict:
        """Single-sample reverse pass; see ``backward_batch``."""
        return self.backward_batch(
            np.asarray(x, dtype=float)[None, :], np.asarray(upstream, dtype=float)[None, :]
        )


def jacobian(net: Network, inputs) -> np.ndarray:
    """Output-by-parameter Jacobian over a list of inputs.

    One row per (input, output component), one column per trainable
    parameter in the network's canonical order; each row is one reverse
    pass with a one-hot upstream vector.
    """
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim == 1:
        inputs = inputs[:, None]
    if inputs.shape[0] < 1:
        raise ConfigError("jacobian needs at least one input")
    n_out = net.widths[-1]
    layout = [(key, arr.size) for key, arr in net.parameter_entries()]
    rows = []
    for x in inputs:
        net.forward_batch(x[None, :])
        for comp in range(n_out):
            one_hot = np.zeros((1, n_out))
            one_hot[0, comp] = 1.0
            grads = net.backward_batch(x[None, :], one_hot)
            rows.append(np.concatenate([grads[key] for key, _ in layout]))
    return np.vstack(rows)


def build_network(
    widths,
    degree: int = 3,
    intervals: int = 20,
    domain=(-1.0, 1.0),
    seed: int = 0,
    init_scale: float = 0.1,
) -> Network:
    """All-spline network with small random coefficients and zero biases."""
    widths = _validate_widths(widths)
    grid = KnotGrid(degree=degree, intervals=intervals, domain=tuple(domain))
    rng = np.random.default_rng(seed)
    edges = {}
    for layer in range(len(widths) - 1):
        for i in range(widths[layer]):
            for j in range(widths[layer + 1]):
                coeffs = rng.uniform(-init_scale, init_scale, grid.basis_count)
                edges[(layer, i, j)] = Edge(layer, i, j, EdgeState(spline=SplineEdge(grid, coeffs)))
    biases = [np.zeros(w) for w in widths[1:]]
    scale = [np.ones(w) for w in widths[:-1]]
    shift = [np.zeros(w) for w in widths[:-1]]
    return Network(widths, edges, biases, scale, shift)


# ---------------------------------------------------------------------------
# normalizer calibration


def calibrate_input(net: Network, x: np.ndarray):
    """Map the observed input range of each dimension onto the edge domain."""
    x = np.asarray(x, dtype=float)
    a, b = net.edge_domain
    lo, hi = x.min(axis=0), x.max(axis=0)
    width = np.maximum(hi - lo, 1e-12)
    net.norm_scale[0] = (b - a) / width
    net.norm_shift[0] = a - (b - a) * lo / width


def calibrate_hidden(net: Network, x: np.ndarray, margin: float = 0.1):
    """Recalibrate hidden normalizers from current activations.

    Each hidden layer's observed activation range, padded by the margin,
    is mapped onto the edge domain. Layers are processed front to back so
    each calibration sees activations produced under the maps already
    set.
    """
    x = np.asarray(x, dtype=float)
    a, b = net.edge_domain
    z = x
    for layer in range(net.n_layers):
        if layer > 0:
            lo, hi = z.min(axis=0), z.max(axis=0)
            pad = margin * np.maximum(hi - lo, 1e-6) / 2.0
            lo, hi = lo - pad, hi + pad
            width = hi - lo
            net.norm_scale[layer] = (b - a) / width
            net.norm_shift[layer] = a - (b - a) * lo / width
        raw = net.norm_scale[layer] * z + net.norm_shift[layer]
        u = np.clip(raw, a, b)
        out = np.tile(net.biases[layer], (x.shape[0], 1))
        for key in net.edge_keys():
            if key[0] != layer:
                continue
            edge = net.edges[key]
            out[:, key[2]] += net._edge_values(edge, u[:, key[1]])
        z = out


# ---------------------------------------------------------------------------
# serialization


def _grid_doc(grid: KnotGrid) -> dict:
    return {"degree": grid.degree, "intervals": grid.intervals, "domain": list(grid.domain)}


def _grid_from_doc(doc: dict) -> KnotGrid:
    return KnotGrid(doc["degree"], doc["intervals"], tuple(doc["domain"]))


def _spline_doc(s: SplineEdge) -> dict:
    return {
        "grid": _grid_doc(s.grid),
        "coefficients": s.coefficients.tolist(),
        "trainable": s.trainable,
    }


def _spline_from_doc(doc: dict) -> SplineEdge:
    return SplineEdge(_grid_from_doc(doc["grid"]), np.array(doc["coefficients"]), doc["trainable"])


def network_to_doc(net: Network) -> dict:
    edges = []
    for key in net.edge_keys():
        state = net.edges[key].state
        entry = {"key": list(key)}
        if state.is_fixed:
            fp = state.fixed
            entry["state"] = "fixed"
            entry["fixed"] = {
                "kind": fp.kind,
                "domain": list(fp.domain),
                "indices": list(fp.indices),
                "coefficients": fp.coefficients.tolist(),
                "grid_size": fp.grid_size,
            }
            entry["snapshot"] = _spline_doc(state.snapshot)
        else:
            entry["state"] = "spline"
            entry["spline"] = _spline_doc(state.spline)
        edges.append(entry)
    return {
        "format": MODEL_FORMAT,
        "widths": list(net.widths),
        "edges": edges,
        "biases": [b.tolist() for b in net.biases],
        "norm_scale": [s.tolist() for s in net.norm_scale],
        "norm_shift": [s.tolist() for s in net.norm_shift],
    }


def network_from_doc(doc: dict) -> Network:
    if doc.get("format") != MODEL_FORMAT:
        raise ConfigError(f"unsupported model format {doc.get('format')!r}")
    edges = {}
    for entry in doc["edges"]:
        key = tuple(entry["key"])
        if entry["state"] == "fixed":
            f = entry["fixed"]
            fp = FixedParametric(
                f["kind"], tuple(f["domain"]), tuple(f["indices"]),
                np.array(f["coefficients"]), f["grid_size"],
            )
            state = EdgeState(fixed=fp, snapshot=_spline_from_doc(entry["snapshot"]))
        else:
            state = EdgeState(spline=_spline_from_doc(entry["spline"]))
        edges[key] = Edge(key[0], key[1], key[2], state)
    return Network(
        doc["widths"],
        edges,
        [np.array(b) for b in doc["biases"]],
        [np.array(s) for s in doc["norm_scale"]],
        [np.array(s) for s in doc["norm_shift"]],
    )


def save_network(net: Network, path):
    with open(path, "w") as fh:
        json.dump(network_to_doc(net), fh)


def load_network(path) -> Network:
    with open(path) as fh:
        return network_from_doc(json.load(fh))
