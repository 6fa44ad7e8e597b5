"""Command-line front end: train, ablate, noise-sweep, inspect.

All commands read a JSON config, write tidy CSV / JSONL artifacts into
an output directory, and use exit codes 0 (ok), 2 (bad config),
3 (numeric divergence, snapshot written), 4 (corrupt checkpoint).
Plotting is out of scope: the outputs are meant for external tooling.
"""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import diagnostics
from .benchmarks import make_function, sample_dataset
from .config import (
    RunConfig,
    build_dataset,
    build_net,
    build_spaces,
    load_run_config,
    run_config_from_dict,
    run_config_to_dict,
)
from .errors import ConfigError, TrainingDiverged
from .network import network_to_doc
from .spaces import SPACE_KINDS
from .training import CHECKPOINT_FORMAT, TrainingData, load_checkpoint, run
from .util import atomic_write_text

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_CORRUPT = 4

OUT_ROOT_ENV = "PKAN_OUT"

ABLATION_SCHEMA = "# pkan.ablation.v1"
NOISE_SWEEP_SCHEMA = "# pkan.noise_sweep.v1"


def _default_out() -> str:
    return os.environ.get(OUT_ROOT_ENV, "pkan-out")


def _load_json(path) -> dict:
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigError(f"not valid JSON: {err}") from err


def execute_run(cfg: RunConfig):
    """Build everything from a validated config and train."""
    cfg.validate()
    dataset = build_dataset(cfg)
    net = build_net(cfg)
    spaces = build_spaces(cfg)
    result = run(
        net,
        TrainingData.from_dataset(dataset),
        cfg.weights.to_cost_weights(),
        spaces,
        epochs_pretrain=cfg.epochs.pretrain,
        epochs_finetune=cfg.epochs.finetune,
        n_keep=cfg.n_keep,
        fixing=cfg.fixing,
        learning_rate=cfg.learning_rate,
        spectral_seed=cfg.seed,
    )
    return result, dataset


def _write_train_outputs(out_dir: str, cfg: RunConfig, result) -> dict:
    paths = {
        "checkpoint": os.path.join(out_dir, "checkpoint.json"),
        "rounds": os.path.join(out_dir, "rounds.jsonl"),
        "diagnostics": os.path.join(out_dir, "diagnostics.csv"),
        "symbolic": os.path.join(out_dir, "symbolic_edges.txt"),
    }
    os.makedirs(out_dir, exist_ok=True)
    checkpoint_doc = {
        "format": CHECKPOINT_FORMAT,
        "model": network_to_doc(result.net),
        "optimizer": result.optimizer.to_doc(),
    }
    atomic_write_text(paths["checkpoint"], json.dumps(checkpoint_doc))
    atomic_write_text(paths["rounds"], result.round_logs_jsonl)
    header, rows = diagnostics.diagnostics_rows(result, cfg.spaces)
    atomic_write_text(
        paths["diagnostics"],
        diagnostics.format_csv(header, rows, diagnostics.DIAGNOSTICS_SCHEMA),
    )
    lines = [
        f"edge {edge.key} [{edge.kind}]: {edge.expression}" for edge in result.symbolic
    ]
    atomic_write_text(paths["symbolic"], "\n".join(lines) + "\n")
    return paths


def cmd_train(args) -> int:
    try:
        cfg = load_run_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        cfg.validate()
    except (ConfigError, OSError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = args.out or _default_out()
    try:
        result, _ = execute_run(cfg)
    except TrainingDiverged as err:
        os.makedirs(out_dir, exist_ok=True)
        snapshot_path = os.path.join(out_dir, "divergence_snapshot.json")
        atomic_write_text(
            snapshot_path,
            json.dumps({"error": str(err), "snapshot": err.snapshot,
                        "partial_logs": err.partial_logs}),
        )
        print(f"training diverged: {err}; snapshot at {snapshot_path}", file=sys.stderr)
        return EXIT_DIVERGED
    paths = _write_train_outputs(out_dir, cfg, result)
    n_fixed = len(result.net.fixed_edge_keys())
    print(f"trained: {n_fixed} fixed edges; outputs in {out_dir}")
    for name, path in paths.items():
        print(f"  {name}: {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# ablation suites


def _apply_overrides(base: dict, **updates) -> RunConfig:
    doc = dict(base)
    for key, value in updates.items():
        doc[key] = value
    return run_config_from_dict(doc)


def _ablate_cell(cell: dict) -> dict:
    """Worker for one ablation cell; returns a CSV row dict."""
    base = dict(cell["base"])
    weights = dict(base.get("weights", {}))
    weights.update(cell["weights"])
    dataset = dict(base.get("dataset", {}))
    dataset["function"] = cell["function"]
    fn_dim = make_function(cell["function"]).dim
    arch = base.get("architecture", [1, 1])
    if arch[0] != fn_dim:
        arch = [fn_dim] + list(arch[1:])
    cfg = _apply_overrides(
        base,
        weights=weights,
        dataset=dataset,
        spaces=list(cell["spaces"]),
        seed=cell["seed"],
        architecture=arch,
    )
    row = {
        "function": cell["function"],
        "spaces": "+".join(cell["spaces"]),
        "alpha": cfg.weights.alpha,
        "beta": cfg.weights.beta,
        "gamma": cfg.weights.gamma,
        "seed": cell["seed"],
    }
    try:
        result, dataset_obj = execute_run(cfg)
    except (TrainingDiverged, ConfigError, FloatingPointError) as err:
        row.update(status=f"failed: {err}")
        return row
    final = result.rounds[-1]
    n_edges = final.n_edges
    final_mse = result.rounds[-1].trajectory[-1][1]
    row.update(
        status="ok",
        train_r2=final.metrics.get("train_r2"),
        val_r2=final.metrics.get("val_r2"),
        final_mse=final_mse,
        log10_final_mse=math.log10(final_mse) if final_mse > 0 else None,
        unfixed_fraction=1.0 - final.n_fixed_after / n_edges,
        n_fixed=final.n_fixed_after,
        jac_std_round0=result.spectral[0].jac_std,
        jac_std_final=result.spectral[-1].jac_std,
    )
    return row


ABLATION_COLUMNS = [
    "function", "spaces", "alpha", "beta", "gamma", "seed", "status",
    "train_r2", "val_r2", "final_mse", "log10_final_mse",
    "unfixed_fraction", "n_fixed", "jac_std_round0", "jac_std_final",
]


def ablation_cells(suite: dict) -> list[dict]:
    allowed = {"base", "functions", "space_sets", "weight_grid", "seeds"}
    unknown = set(suite) - allowed
    if unknown:
        raise ConfigError(f"suite: unknown key(s) {sorted(unknown)}")
    functions = suite.get("functions", [])
    space_sets = suite.get("space_sets", [list(SPACE_KINDS)])
    weight_grid = suite.get("weight_grid", [{}])
    seeds = suite.get("seeds", [0])
    if not functions or not space_sets or not weight_grid or not seeds:
        raise ConfigError("suite: functions, space_sets, weight_grid, seeds must be nonempty")
    base = suite.get("base", {})
    # validate the base config once before fanning out
    _apply_overrides(base).validate()
    cells = []
    for fn, spaces, weights, seed in itertools.product(
        functions, space_sets, weight_grid, seeds
    ):
        cells.append(
            {"base": base, "function": fn, "spaces": spaces, "weights": weights, "seed": seed}
        )
    return cells


def _run_cells(cells, worker, parallelism: int):
    if parallelism > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            return list(pool.map(worker, cells))
    return [worker(cell) for cell in cells]


def cmd_ablate(args) -> int:
    try:
        suite = _load_json(args.config)
        cells = ablation_cells(suite)
    except (ConfigError, OSError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    rows = _run_cells(cells, _ablate_cell, args.parallelism)
    out_dir = args.out or _default_out()
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "ablation_summary.csv")
    table = [[row.get(col, "") for col in ABLATION_COLUMNS] for row in rows]
    atomic_write_text(path, diagnostics.format_csv(ABLATION_COLUMNS, table, ABLATION_SCHEMA))
    n_failed = sum(1 for row in rows if str(row.get("status", "")).startswith("failed"))
    print(f"ablation: {len(rows)} cells ({n_failed} failed); summary at {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# noise sweeps


def _noise_cell(cell: dict) -> list[dict]:
    """One (noise kind, snr, architecture) cell: both models, all repeats."""
    base = dict(cell["base"])
    rows = []
    for model in ("pkan", "baseline"):
        per_run = {"train_mse": [], "val_mse_noisy": [], "val_mse_clean": [], "seconds": []}
        status = "ok"
        for rep in range(cell["repeats"]):
            seed = cell.get("seed0", 0) + rep
            weights = dict(base.get("weights", {}))
            fixing = True
            if model == "baseline":
                weights["beta"] = 0.0
                fixing = False
            dataset = dict(base.get("dataset", {}))
            dataset["function"] = cell["benchmark"]
            dataset["noise"] = {"kind": cell["noise_kind"], "snr_db": cell["snr_db"]}
            cfg = _apply_overrides(
                base,
                weights=weights,
                dataset=dataset,
                architecture=list(cell["architecture"]),
                seed=seed,
                fixing=fixing,
            )
            try:
                started = time.perf_counter()
                result, ds = execute_run(cfg)
                elapsed = time.perf_counter() - started
            except (TrainingDiverged, ConfigError, FloatingPointError) as err:
                status = f"failed: {err}"
                continue
            net = result.net
            pred_train = net.forward_batch(np.atleast_2d(ds.inputs[ds.train_idx]))
            pred_val = net.forward_batch(np.atleast_2d(ds.inputs[ds.val_idx]))
            per_run["train_mse"].append(
                float(np.mean((pred_train.ravel() - ds.noisy[ds.train_idx]) ** 2))
            )
            per_run["val_mse_noisy"].append(
                float(np.mean((pred_val.ravel() - ds.noisy[ds.val_idx]) ** 2))
            )
            per_run["val_mse_clean"].append(
                float(np.mean((pred_val.ravel() - ds.clean[ds.val_idx]) ** 2))
            )
            per_run["seconds"].append(elapsed)
        row = {
            "benchmark": cell["benchmark"],
            "noise_kind": cell["noise_kind"],
            "snr_db": cell["snr_db"],
            "architecture": "x".join(str(w) for w in cell["architecture"]),
            "model": model,
            "repeats": cell["repeats"],
            "status": status,
        }
        if per_run["train_mse"]:
            row.update(
                median_train_mse=float(np.median(per_run["train_mse"])),
                median_val_mse_noisy=float(np.median(per_run["val_mse_noisy"])),
                median_val_mse_clean=float(np.median(per_run["val_mse_clean"])),
                median_train_seconds=float(np.median(per_run["seconds"])),
            )
        rows.append(row)
    return rows


NOISE_SWEEP_COLUMNS = [
    "benchmark", "noise_kind", "snr_db", "architecture", "model", "repeats", "status",
    "median_train_mse", "median_val_mse_noisy", "median_val_mse_clean",
    "median_train_seconds",
]


def noise_sweep_cells(sweep: dict) -> list[dict]:
    allowed = {"base", "benchmark", "noise_kinds", "snr_db", "architectures", "repeats", "seed0"}
    unknown = set(sweep) - allowed
    if unknown:
        raise ConfigError(f"sweep: unknown key(s) {sorted(unknown)}")
    kinds = sweep.get("noise_kinds", [])
    snrs = sweep.get("snr_db", [])
    archs = sweep.get("architectures", [])
    repeats = sweep.get("repeats", 1)
    if not kinds or not snrs or not archs:
        raise ConfigError("sweep: noise_kinds, snr_db, architectures must be nonempty")
    if repeats < 1:
        raise ConfigError(f"sweep: repeats must be >= 1, got {repeats}")
    benchmark = sweep.get("benchmark", "wave1d")
    base = sweep.get("base", {})
    dataset = dict(base.get("dataset", {}))
    dataset["function"] = benchmark
    fn_dim = make_function(benchmark).dim
    _apply_overrides(base, dataset=dataset, architecture=[fn_dim, 1]).validate()
    cells = []
    for kind, snr, arch in itertools.product(kinds, snrs, archs):
        cells.append(
            {
                "base": base,
                "benchmark": benchmark,
                "noise_kind": kind,
                "snr_db": snr,
                "architecture": arch,
                "repeats": repeats,
                "seed0": sweep.get("seed0", 0),
            }
        )
    return cells


def cmd_noise_sweep(args) -> int:
    try:
        sweep = _load_json(args.config)
        cells = noise_sweep_cells(sweep)
    except (ConfigError, OSError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    nested = _run_cells(cells, _noise_cell, args.parallelism)
    rows = [row for group in nested for row in group]
    out_dir = args.out or _default_out()
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "noise_sweep.csv")
    table = [[row.get(col, "") for col in NOISE_SWEEP_COLUMNS] for row in rows]
    atomic_write_text(path, diagnostics.format_csv(NOISE_SWEEP_COLUMNS, table, NOISE_SWEEP_SCHEMA))
    print(f"noise sweep: {len(rows)} rows; summary at {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# inspection


def cmd_inspect(args) -> int:
    try:
        net, _ = load_checkpoint(args.checkpoint)
    except (OSError, ValueError, KeyError, TypeError) as err:
        print(f"corrupt checkpoint: {err}", file=sys.stderr)
        return EXIT_CORRUPT
    total, per_edge = net.parameter_count()
    print(f"architecture: {net.widths}")
    print(f"parameters: {total} total")
    for key, count in per_edge:
        state = net.edges[key].state
        tag = f"fixed[{state.fixed.kind}]" if state.is_fixed else "spline"
        print(f"  edge {key}: {tag}, {count} parameters")
    spline_keys = net.spline_edge_keys()
    if spline_keys:
        from .spaces import default_spaces, entropy_from_magnitudes
        from .splines import grid_design_matrix

        spaces = default_spaces()
        print("per-space entropies of spline edges:")
        for key in spline_keys:
            spline = net.edges[key].state.spline
            values = grid_design_matrix(spline.grid, spaces[0].n) @ spline.coefficients
            ents = []
            for space in spaces:
                ent, degen = entropy_from_magnitudes(space.entropy_magnitudes(values))
                ents.append(f"{space.kind}={'degenerate' if degen else f'{ent:.4f}'}")
            print(f"  edge {key}: " + ", ".join(ents))
    print("symbolic edges:")
    for edge in diagnostics.render_symbolic(net):
        print(f"  edge {edge.key} [{edge.kind}]: {edge.expression}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pkan",
        description="Train spline-edged KANs with entropy-driven projection "
        "onto Fourier/Chebyshev/Bessel edge representations.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="path to a JSON config")
        p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ROOT_ENV} or ./pkan-out)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--parallelism", type=int, default=1, help="worker pool size for suites")
        p.add_argument("--format", choices=["csv"], default="csv", help="tabular output format")

    p_train = sub.add_parser("train", help="run one training configuration")
    common(p_train)
    p_train.set_defaults(fn=cmd_train)

    p_ablate = sub.add_parser("ablate", help="run a function x space x weight suite")
    common(p_ablate)
    p_ablate.set_defaults(fn=cmd_ablate)

    p_noise = sub.add_parser("noise-sweep", help="noise kind x SNR x architecture sweep")
    common(p_noise)
    p_noise.set_defaults(fn=cmd_noise_sweep)

    p_inspect = sub.add_parser("inspect", help="describe a saved checkpoint")
    p_inspect.add_argument("checkpoint", help="path to a checkpoint JSON")
    p_inspect.set_defaults(fn=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
