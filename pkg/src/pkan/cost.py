"""The unified training cost: reconstruction + entropy pull + edge size.

Q = alpha * MSE + beta * mean softmin-entropy over spline edges
  + gamma * mean over all edges of the mean m-th power magnitude on the
    transform grid.

The entropy term samples every trainable spline edge on the transform
grid, projects the samples into each candidate space, and aggregates the
per-space entropies with a softmin at temperature lambda. Frozen edges
have already chosen their space and contribute nothing to it. Gradients
flow to spline coefficients through the (linear) sampling + projection
and the smooth entropy/softmin chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .network import Network
from .spaces import Space, lambda_schedule, softmin_entropy_grad
from .splines import grid_design_matrix, uniform_grid_points


@dataclass
class CostWeights:
    """Weights and schedule constants governing the cost and the trainer."""

    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.25
    norm_order: int = 1
    lambda_min: float = 0.1
    lambda_max: float = 10.0
    r2_min: float = 0.6
    tau_regret: float = 0.2
    rounds: int = 5

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be finite and >= 0, got {v}")
        if self.alpha + self.beta + self.gamma <= 0:
            raise ConfigError("at least one of alpha, beta, gamma must be positive")
        if int(self.norm_order) != self.norm_order or self.norm_order < 1:
            raise ConfigError(f"norm_order must be an integer >= 1, got {self.norm_order}")
        if self.lambda_min > self.lambda_max:
            raise ConfigError("lambda_min must not exceed lambda_max")
        if self.r2_min <= 0:
            raise ConfigError(f"r2_min must be positive, got {self.r2_min}")
        if self.tau_regret <= 0:
            raise ConfigError(f"tau_regret must be positive, got {self.tau_regret}")
        if int(self.rounds) != self.rounds or self.rounds < 1:
            raise ConfigError(f"rounds must be an integer >= 1, got {self.rounds}")

    def lam(self, round_index: int) -> float:
        return lambda_schedule(round_index, self.lambda_min, self.lambda_max, self.rounds)


@dataclass
class EdgeEntropyRecord:
    key: tuple
    entropies: dict[str, float]
    winner: str | None
    degenerate: bool


@dataclass
class CostBreakdown:
    total: float
    reconstruction: float
    entropy: float
    regularization: float
    per_edge: list[EdgeEntropyRecord] = field(default_factory=list)

    def summary(self) -> tuple[float, float, float, float]:
        return (self.total, self.reconstruction, self.entropy, self.regularization)


def _accumulate(store: dict, key, value: np.ndarray):
    if key in store:
        store[key] = store[key] + value
    else:
        store[key] = np.asarray(value, dtype=float).copy()


def reconstruction_loss(net: Network, x: np.ndarray, y: np.ndarray) -> float:
    """Mean squared error over every batch entry and output component."""
    x, y = _as_batch(net, x, y)
    pred = net.forward_batch(x)
    return float(np.mean((pred - y) ** 2))


def reconstruction_loss_and_grad(net: Network, x: np.ndarray, y: np.ndarray):
    x, y = _as_batch(net, x, y)
    pred = net.forward_batch(x)
    err = pred - y
    grads = net.backward_batch(x, 2.0 * err / err.size)
    return float(np.mean(err**2)), grads


def _as_batch(net: Network, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if y.ndim == 1:
        y = y[:, None]
    if x.shape[0] == 0:
        raise ConfigError("empty batch")
    if y.shape != (x.shape[0], net.widths[-1]):
        raise ConfigError(f"targets must have shape ({x.shape[0]}, {net.widths[-1]})")
    return x, y


def _fixed_grid_rows(fp, n: int) -> np.ndarray:
    """Continuous basis of a frozen edge on the n-point transform grid."""
    a, b = fp.domain
    pts = a + (b - a) * np.arange(n) / n
    return fp.space().continuous_rows(fp.indices, pts)


def entropy_term(net: Network, spaces: list[Space], lam: float):
    """Mean softmin entropy over trainable spline edges.

    Returns (value, per-edge records). Degenerate all-zero edges are
    flagged and excluded from the mean; with no contributing edges the
    term is zero.
    """
    value, records, _ = _entropy_term_impl(net, spaces, lam, want_grad=False)
    return value, records


def entropy_term_and_grad(net: Network, spaces: list[Space], lam: float):
    return _entropy_term_impl(net, spaces, lam, want_grad=True)


def _entropy_term_impl(net: Network, spaces: list[Space], lam: float, want_grad: bool):
    if not spaces:
        raise ConfigError("at least one candidate space is required")
    n = spaces[0].n
    records = []
    contributions = []
    edge_grads = {}
    for key in net.spline_edge_keys():
        spline = net.edges[key].state.spline
        B = grid_design_matrix(spline.grid, n)
        values = B @ spline.coefficients
        ents = np.empty(len(spaces))
        grads_v = []
        degenerate = False
        for s_idx, space in enumerate(spaces):
            ent, grad_v, degen = space.entropy_and_grad(values)
            ents[s_idx] = ent
            grads_v.append(grad_v)
            degenerate = degenerate or degen
        if degenerate:
            records.append(EdgeEntropyRecord(key, {}, None, True))
            continue
        w = np.exp(-lam * (ents - ents.min()))
        w /= w.sum()
        e_star = float(w @ ents)
        contributions.append(e_star)
        winner = spaces[int(np.argmin(ents))].kind
        records.append(
            EdgeEntropyRecord(key, {sp.kind: float(e) for sp, e in zip(spaces, ents)}, winner, False)
        )
        if want_grad:
            de_dents, _ = softmin_entropy_grad(ents, lam)
            dv = sum(g * gv for g, gv in zip(de_dents, grads_v))
            edge_grads[("edge",) + key] = B.T @ dv
    count = len(contributions)
    value = float(np.sum(contributions) / count) if count else 0.0
    if not want_grad:
        return value, records, None
    grads = {k: g / count for k, g in edge_grads.items()} if count else {}
    return value, records, grads


def regularization_term(net: Network, norm_order: int = 1, grid_size: int = 64) -> float:
    """Mean over edges of the mean |s(x)|^m over the transform grid."""
    value, _ = _regularization_impl(net, False, norm_order, grid_size)
    return value


def regularization_term_and_grad(net: Network, norm_order: int = 1, grid_size: int = 64):
    return _regularization_impl(net, True, norm_order, grid_size)


def _regularization_impl(net: Network, want_grad: bool, norm_order: int, grid_size: int):
    m = norm_order
    n = grid_size
    keys = net.edge_keys()
    total = 0.0
    grads = {}
    for key in keys:
        state = net.edges[key].state
        if state.is_fixed:
            rows = _fixed_grid_rows(state.fixed, n)
            values = state.fixed.coefficients @ rows
            basis_t = rows
        else:
            B = grid_design_matrix(state.spline.grid, n)
            values = B @ state.spline.coefficients
            basis_t = B.T
        total += float(np.mean(np.abs(values) ** m))
        if want_grad:
            if m == 1:
                dv = np.sign(values) / n
            else:
                dv = m * np.abs(values) ** (m - 1) * np.sign(values) / n
            grads[("edge",) + key] = basis_t @ dv
    n_edges = len(keys)
    value = total / n_edges
    if not want_grad:
        return value, None
    return value, {k: g / n_edges for k, g in grads.items()}


def total_cost(
    net: Network,
    batch,
    weights: CostWeights,
    round_index: int,
    spaces: list[Space],
) -> CostBreakdown:
    """Evaluate Q = alpha*rec + beta*entropy(lambda(round)) + gamma*reg."""
    breakdown, _ = _total_cost_impl(net, batch, weights, round_index, spaces, want_grad=False)
    return breakdown


def total_cost_and_grad(
    net: Network,
    batch,
    weights: CostWeights,
    round_index: int,
    spaces: list[Space],
):
    return _total_cost_impl(net, batch, weights, round_index, spaces, want_grad=True)


def _total_cost_impl(net, batch, weights, round_index, spaces, want_grad):
    x, y = batch
    grid_size = spaces[0].n if spaces else 64
    lam = weights.lam(round_index)
    grads: dict = {}
    if want_grad:
        rec, rec_grads = reconstruction_loss_and_grad(net, x, y)
        ent, records, ent_grads = entropy_term_and_grad(net, spaces, lam)
        reg, reg_grads = regularization_term_and_grad(net, weights.norm_order, grid_size)
        for key, g in rec_grads.items():
            _accumulate(grads, key, weights.alpha * g)
        for key, g in ent_grads.items():
            _accumulate(grads, key, weights.beta * g)
        for key, g in reg_grads.items():
            _accumulate(grads, key, weights.gamma * g)
        # every parameter gets an entry, even if only one term touches it
        for key, arr in net.parameter_entries():
            if key not in grads:
                grads[key] = np.zeros_like(arr)
    else:
        rec = reconstruction_loss(net, x, y)
        ent, records = entropy_term(net, spaces, lam)
        reg = regularization_term(net, weights.norm_order, grid_size)
    total = weights.alpha * rec + weights.beta * ent + weights.gamma * reg
    breakdown = CostBreakdown(
        total=float(total),
        reconstruction=float(rec),
        entropy=float(ent),
        regularization=float(reg),
        per_edge=records,
    )
    return breakdown, (grads if want_grad else None)
