"""End-to-end training: pretrain, project-and-freeze rounds, regret.

The loop is: train everything in spline space, then for each round
project every remaining spline edge into the candidate spaces, freeze
the ones whose best truncated fit clears the (slowly relaxing) R-squared
gate, fine-tune the mixed network, and revert any frozen edge whose
validation cost regressed past the regret tolerance. The optimizer is
reset whenever the parameter set changes, since its moment accumulators
are keyed to the parameter layout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics
from .cost import CostWeights, total_cost, total_cost_and_grad
from .errors import ConfigError, ProtocolError, TrainingDiverged
from .network import Network, network_from_doc, network_to_doc
from .spaces import Space, best_fit, get_space
from .splines import grid_design_matrix

DIVERGENCE_LIMIT = 1e12
CHECKPOINT_FORMAT = "pkan-checkpoint/1"
# fraction of fine-tune epochs whose validation costs form the regret window
REGRET_WINDOW_FRACTION = 0.2


class Adam:
    """Adaptive-moment gradient descent with bias correction.

    Moment accumulators are keyed by parameter path; a step against a
    different parameter set than the accumulators were built for is a
    protocol error (reset first).
    """

    def __init__(self, lr: float = 1e-2, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0
        self.reset_count = 0
        self._keys = None

    def reset(self):
        self.m.clear()
        self.v.clear()
        self.t = 0
        self._keys = None
        self.reset_count += 1

    def step(self, params: dict, grads: dict):
        keys = frozenset(params)
        if self._keys is None:
            self._keys = keys
            for key, arr in params.items():
                self.m[key] = np.zeros_like(arr)
                self.v[key] = np.zeros_like(arr)
        elif self._keys != keys:
            raise ProtocolError("parameter set changed since last optimizer reset")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for key, arr in params.items():
            g = grads[key]
            self.m[key] = self.beta1 * self.m[key] + (1 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1 - self.beta2) * g * g
            arr -= self.lr * (self.m[key] / c1) / (np.sqrt(self.v[key] / c2) + self.eps)

    def to_doc(self) -> dict:
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "t": self.t,
            "m": {json.dumps(k): v.tolist() for k, v in self.m.items()},
            "v": {json.dumps(k): v.tolist() for k, v in self.v.items()},
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Adam":
        opt = cls(doc["lr"], doc["beta1"], doc["beta2"], doc["eps"])
        opt.t = doc["t"]
        opt.m = {_param_key(json.loads(k)): np.array(v) for k, v in doc["m"].items()}
        opt.v = {_param_key(json.loads(k)): np.array(v) for k, v in doc["v"].items()}
        if opt.m:
            opt._keys = frozenset(opt.m)
        return opt


def _param_key(raw) -> tuple:
    return tuple(raw)


@dataclass
class TrainingData:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray

    def __post_init__(self):
        self.x_train = np.atleast_2d(np.asarray(self.x_train, dtype=float).T).T
        self.y_train = np.atleast_2d(np.asarray(self.y_train, dtype=float).T).T
        self.x_val = np.atleast_2d(np.asarray(self.x_val, dtype=float).T).T
        self.y_val = np.atleast_2d(np.asarray(self.y_val, dtype=float).T).T
        if self.x_train.shape[0] == 0:
            raise ConfigError("training split is empty")
        if self.x_val.shape[0] == 0:
            # regret needs some held-out signal; degrade to the train batch
            self.x_val = self.x_train
            self.y_val = self.y_train

    @classmethod
    def from_dataset(cls, ds) -> "TrainingData":
        return cls(
            ds.inputs[ds.train_idx],
            ds.noisy[ds.train_idx],
            ds.inputs[ds.val_idx],
            ds.noisy[ds.val_idx],
        )


@dataclass
class FixEvent:
    key: tuple
    kind: str
    r2: float
    indices: tuple[int, ...]

    def to_dict(self) -> dict:
        return {"edge": list(self.key), "space": self.kind, "r2": self.r2,
                "indices": list(self.indices)}


@dataclass
class RegretEntry:
    loss_before_fix: float
    window: list = field(default_factory=list)
    regret: float | None = None


@dataclass
class RoundLog:
    round_index: int
    lam: float
    r2_gate: float | None
    fixed: list[FixEvent]
    reverted: list[tuple]
    trajectory: list[tuple]  # (total, reconstruction, entropy, regularization)
    jac_spread_before: float | None
    jac_spread_after: float | None
    n_edges: int
    n_fixed_after: int
    metrics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "round": self.round_index,
            "lambda": self.lam,
            "r2_gate": self.r2_gate,
            "fixed": [e.to_dict() for e in self.fixed],
            "reverted": [list(k) for k in self.reverted],
            "trajectory": [list(t) for t in self.trajectory],
            "jac_spread_before": self.jac_spread_before,
            "jac_spread_after": self.jac_spread_after,
            "n_edges": self.n_edges,
            "n_fixed_after": self.n_fixed_after,
            "metrics": self.metrics,
        }

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class RunResult:
    net: Network
    optimizer: Adam
    rounds: list[RoundLog]
    spectral: list
    symbolic: list

    @property
    def round_logs_jsonl(self) -> str:
        return "".join(log.to_json_line() + "\n" for log in self.rounds)


# ---------------------------------------------------------------------------
# epoch loops


def _epochs(
    net: Network,
    data: TrainingData,
    weights: CostWeights,
    spaces: list[Space],
    epochs: int,
    round_index: int,
    opt: Adam,
    recalibrate: bool = False,
    track_validation: bool = False,
):
    """Adam steps on the unified cost; returns (trajectory, validation costs)."""
    if epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {epochs}")
    from .network import calibrate_hidden

    trajectory = []
    val_costs = []
    batch = (data.x_train, data.y_train)
    for _ in range(epochs):
        if recalibrate and net.n_layers > 1:
            calibrate_hidden(net, data.x_train)
        breakdown, grads = total_cost_and_grad(net, batch, weights, round_index, spaces)
        if not np.isfinite(breakdown.total) or breakdown.total > DIVERGENCE_LIMIT:
            raise TrainingDiverged(
                f"cost {breakdown.total!r} exceeded the divergence limit",
                snapshot={
                    "round": round_index,
                    "epoch": len(trajectory),
                    "breakdown": list(breakdown.summary()),
                    "model": network_to_doc(net),
                },
            )
        params = dict(net.parameter_entries())
        opt.step(params, grads)
        trajectory.append(breakdown)
        if track_validation:
            val_costs.append(
                total_cost(net, (data.x_val, data.y_val), weights, round_index, spaces).total
            )
    return trajectory, val_costs


def pretrain(
    net: Network,
    data: TrainingData,
    weights: CostWeights,
    epochs: int,
    spaces: list[Space],
    opt: Adam | None = None,
):
    """Train the all-spline network on Q at the schedule's initial lambda.

    Hidden normalizers are recalibrated every epoch here: activations
    drift too much early in training for a one-shot calibration, and no
    edges are frozen yet, so nothing depends on the maps staying put.
    """
    opt = opt or Adam()
    trajectory, _ = _epochs(net, data, weights, spaces, epochs, 0, opt, recalibrate=True)
    return trajectory


def finetune(
    net: Network,
    data: TrainingData,
    weights: CostWeights,
    epochs: int,
    round_index: int,
    spaces: list[Space],
    opt: Adam,
):
    """Gradient steps with the current mixed spline/frozen parameter set.

    Frozen structure (which indices are retained) never changes here;
    only coefficient values move. Tracks per-epoch validation cost for
    the regret windows.
    """
    return _epochs(
        net, data, weights, spaces, epochs, round_index, opt, track_validation=True
    )


# ---------------------------------------------------------------------------
# freezing, regret, reversion


def fix_round(net: Network, spaces: list[Space], r2_min: float, n_keep: int = 4):
    """Project every spline edge; freeze those whose best fit clears the gate."""
    if not net.spline_edge_keys() and not net.fixed_edge_keys():
        raise ConfigError("network has no edges")
    events = []
    n = spaces[0].n
    for key in net.spline_edge_keys():
        state = net.edges[key].state
        values = grid_design_matrix(state.spline.grid, n) @ state.spline.coefficients
        fp, r2 = best_fit(values, spaces, n_keep, label=f"edge{key}")
        if r2 > r2_min:
            state.fix(fp)
            events.append(FixEvent(key, fp.kind, float(r2), fp.indices))
    return events


def force_fix(net: Network, key, space: Space, n_keep: int = 4) -> FixEvent:
    """Freeze one edge into a specific space regardless of fit quality."""
    state = net.edges[tuple(key)].state
    if state.is_fixed:
        raise ProtocolError(f"edge {key} is already fixed")
    values = grid_design_matrix(state.spline.grid, space.n) @ state.spline.coefficients
    fp, r2 = best_fit(values, [space], n_keep, label=f"edge{key}")
    state.fix(fp)
    return FixEvent(tuple(key), fp.kind, float(r2), fp.indices)


def regret_check(ledger: dict, tau_regret: float) -> list:
    """Edges whose relative post-fix cost increase exceeds the tolerance."""
    to_revert = []
    for key, entry in ledger.items():
        if not entry.window:
            continue
        mean_after = float(np.mean(entry.window))
        entry.regret = (mean_after - entry.loss_before_fix) / max(entry.loss_before_fix, 1e-12)
        if entry.regret > tau_regret:
            to_revert.append(key)
    return to_revert


def revert_edges(net: Network, keys, ledger: dict):
    """Restore the stored spline snapshot for each edge, bit-exactly."""
    for key in keys:
        net.edges[tuple(key)].state.revert()
        ledger.pop(tuple(key), None)


# ---------------------------------------------------------------------------
# the full loop


def _round_gate(r2_min: float, round_index: int) -> float:
    # gate relaxes multiplicatively after the first round
    return r2_min * 0.95 ** (round_index - 1)


def _round_metrics(net: Network, data: TrainingData, spaces: list[Space]) -> dict:
    metrics = {}
    for name, x, y in (
        ("train_r2", data.x_train, data.y_train),
        ("val_r2", data.x_val, data.y_val),
    ):
        pred = net.forward_batch(x)
        try:
            metrics[name] = diagnostics.r2_score(pred.ravel(), y.ravel())
        except ValueError:
            metrics[name] = None
    ent_by_space: dict[str, list] = {s.kind: [] for s in spaces}
    n = spaces[0].n
    for key in net.spline_edge_keys():
        state = net.edges[key].state
        values = grid_design_matrix(state.spline.grid, n) @ state.spline.coefficients
        for space in spaces:
            mags = space.entropy_magnitudes(values)
            from .spaces import entropy_from_magnitudes

            ent, degen = entropy_from_magnitudes(mags)
            if not degen:
                ent_by_space[space.kind].append(ent)
    for kind, vals in ent_by_space.items():
        metrics[f"mean_entropy_{kind}"] = float(np.mean(vals)) if vals else None
    return metrics


def run(
    net: Network,
    data: TrainingData,
    weights: CostWeights,
    spaces: list[Space],
    epochs_pretrain: int = 2000,
    epochs_finetune: int = 500,
    n_keep: int = 4,
    fixing: bool = True,
    learning_rate: float = 1e-2,
    spectral_points: int = 32,
    spectral_seed: int = 0,
) -> RunResult:
    """Full training loop; returns the trained net, round logs, and symbolic edges.

    Emits one RoundLog per round (round 0 is the spline-space pretraining)
    plus a spectral report per round boundary so redundancy trends can be
    read off the logs alone. On divergence, the partial logs are attached
    to the raised error.
    """
    from .network import calibrate_hidden, calibrate_input

    opt = Adam(lr=learning_rate)
    rounds: list[RoundLog] = []
    spectral = []
    jac_inputs = diagnostics.halton_points(
        spectral_points, data.x_train.shape[1], seed=spectral_seed
    )
    lo, hi = data.x_train.min(axis=0), data.x_train.max(axis=0)
    jac_inputs = lo + (hi - lo) * jac_inputs

    calibrate_input(net, data.x_train)
    if net.n_layers > 1:
        calibrate_hidden(net, data.x_train)

    def spectral_report(round_index):
        report = diagnostics.spectral_spread(net, jac_inputs, round_index=round_index)
        spectral.append(report)
        return report

    try:
        trajectory = pretrain(net, data, weights, epochs_pretrain, spaces, opt)
        report = spectral_report(0)
        rounds.append(
            RoundLog(
                round_index=0,
                lam=weights.lam(0),
                r2_gate=None,
                fixed=[],
                reverted=[],
                trajectory=[b.summary() for b in trajectory],
                jac_spread_before=None,
                jac_spread_after=report.jac_std,
                n_edges=len(net.edge_keys()),
                n_fixed_after=len(net.fixed_edge_keys()),
                metrics=_round_metrics(net, data, spaces),
            )
        )

        ledger: dict = {}
        for t in range(1, weights.rounds + 1):
            if net.n_layers > 1:
                calibrate_hidden(net, data.x_train)
            lam_round = weights.lam(t)
            gate = _round_gate(weights.r2_min, t)
            spread_before = spectral[-1].jac_std
            q_before = total_cost(net, (data.x_val, data.y_val), weights, t, spaces).total

            events = fix_round(net, spaces, gate, n_keep) if fixing else []
            for event in events:
                ledger[event.key] = RegretEntry(loss_before_fix=q_before)
            if events:
                opt.reset()

            trajectory, val_costs = finetune(net, data, weights, epochs_finetune, t, spaces, opt)
            window = val_costs[-max(1, int(np.ceil(REGRET_WINDOW_FRACTION * len(val_costs)))):]
            for entry in ledger.values():
                entry.window = list(window)

            to_revert = regret_check(ledger, weights.tau_regret)
            revert_edges(net, to_revert, ledger)
            if to_revert:
                opt.reset()

            report = spectral_report(t)
            rounds.append(
                RoundLog(
                    round_index=t,
                    lam=lam_round,
                    r2_gate=gate,
                    fixed=events,
                    reverted=to_revert,
                    trajectory=[b.summary() for b in trajectory],
                    jac_spread_before=spread_before,
                    jac_spread_after=report.jac_std,
                    n_edges=len(net.edge_keys()),
                    n_fixed_after=len(net.fixed_edge_keys()),
                    metrics=_round_metrics(net, data, spaces),
                )
            )
    except TrainingDiverged as err:
        err.partial_logs = [log.to_dict() for log in rounds]
        raise

    return RunResult(
        net=net,
        optimizer=opt,
        rounds=rounds,
        spectral=spectral,
        symbolic=diagnostics.render_symbolic(net),
    )


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, net: Network, opt: Adam | None = None):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "model": network_to_doc(net),
        "optimizer": opt.to_doc() if opt is not None else None,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"unsupported checkpoint format {doc.get('format')!r}")
    net = network_from_doc(doc["model"])
    opt = Adam.from_doc(doc["optimizer"]) if doc.get("optimizer") else None
    return net, opt
