"""Run configuration: strict JSON parsing, validation, and builders.

Configs are plain JSON documents mirroring a small tree of dataclasses.
Unknown keys anywhere in the tree are rejected, and every cross-field
constraint of the underlying modules is checked up front so a bad config
fails before any work starts.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

from .benchmarks import (
    FUNCTION_KINDS,
    NOISE_KINDS,
    Dataset,
    NoiseSpec,
    make_function,
    sample_dataset,
)
from .cost import CostWeights
from .errors import ConfigError
from .network import Network, build_network
from .spaces import SPACE_KINDS, get_space
from .splines import KnotGrid


@dataclass
class SplineConfig:
    degree: int = 3
    intervals: int = 20


@dataclass
class NoiseConfig:
    kind: str = "none"
    snr_db: float | None = None
    seed: int | None = None  # defaults to the run seed

    def to_spec(self, run_seed: int) -> NoiseSpec:
        snr = math.inf if self.snr_db is None else float(self.snr_db)
        seed = self.seed if self.seed is not None else run_seed
        return NoiseSpec(kind=self.kind, snr_db=snr, seed=seed)


@dataclass
class DatasetConfig:
    function: str = "simple_sinusoid"
    n: int = 256
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    split: float = 0.8
    seed: int | None = None  # defaults to the run seed


@dataclass
class EpochConfig:
    pretrain: int = 2000
    finetune: int = 500


@dataclass
class WeightConfig:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.25
    norm_order: int = 1
    lambda_min: float = 0.1
    lambda_max: float = 10.0
    r2_min: float = 0.6
    tau_regret: float = 0.2
    rounds: int = 5

    def to_cost_weights(self) -> CostWeights:
        return CostWeights(**dataclasses.asdict(self))


@dataclass
class RunConfig:
    architecture: list = field(default_factory=lambda: [1, 1])
    spline: SplineConfig = field(default_factory=SplineConfig)
    grid_points: int = 64
    spaces: list = field(default_factory=lambda: list(SPACE_KINDS))
    weights: WeightConfig = field(default_factory=WeightConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    epochs: EpochConfig = field(default_factory=EpochConfig)
    n_keep: int = 4
    fixing: bool = True
    learning_rate: float = 0.01
    seed: int = 0

    def validate(self):
        """Raise ConfigError listing every violated constraint."""
        problems = []
        arch = self.architecture
        if not isinstance(arch, list) or len(arch) < 2 or any(
            not isinstance(w, int) or w < 1 for w in arch
        ):
            problems.append("architecture: need >= 2 integer widths, all >= 1")
        try:
            KnotGrid(self.spline.degree, self.spline.intervals)
        except ConfigError as err:
            problems.append(f"spline: {err}")
        if self.grid_points < 8 or (self.grid_points & (self.grid_points - 1)) != 0:
            problems.append(f"grid_points: must be a power of two >= 8, got {self.grid_points}")
        if not self.spaces:
            problems.append("spaces: at least one candidate space is required")
        for kind in self.spaces:
            if kind not in SPACE_KINDS:
                problems.append(f"spaces: unknown space {kind!r} (choices: {SPACE_KINDS})")
        try:
            self.weights.to_cost_weights()
        except ConfigError as err:
            problems.append(f"weights: {err}")
        if self.weights.r2_min > 1.0:
            # legal but suspicious: the freezing gate can never open
            pass
        if self.dataset.function not in FUNCTION_KINDS:
            problems.append(
                f"dataset.function: unknown kind {self.dataset.function!r} "
                f"(choices: {FUNCTION_KINDS})"
            )
        else:
            fn = make_function(self.dataset.function)
            if isinstance(arch, list) and arch and arch[0] != fn.dim:
                problems.append(
                    f"architecture: first width {arch[0]} does not match "
                    f"{self.dataset.function} input dimension {fn.dim}"
                )
        if self.dataset.n < 10:
            problems.append(f"dataset.n: must be >= 10, got {self.dataset.n}")
        if not (0.0 < self.dataset.split < 1.0):
            problems.append(f"dataset.split: must lie in (0, 1), got {self.dataset.split}")
        if self.dataset.noise.kind not in NOISE_KINDS:
            problems.append(f"dataset.noise.kind: unknown kind {self.dataset.noise.kind!r}")
        else:
            try:
                self.dataset.noise.to_spec(self.seed)
            except ConfigError as err:
                problems.append(f"dataset.noise: {err}")
        if self.epochs.pretrain < 1 or self.epochs.finetune < 1:
            problems.append("epochs: pretrain and finetune must both be >= 1")
        if not (1 <= self.n_keep <= self.grid_points):
            problems.append(f"n_keep: must lie in [1, grid_points], got {self.n_keep}")
        if self.learning_rate <= 0:
            problems.append(f"learning_rate: must be positive, got {self.learning_rate}")
        if problems:
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))
        return self


_NESTED = {
    "spline": SplineConfig,
    "noise": NoiseConfig,
    "dataset": DatasetConfig,
    "epochs": EpochConfig,
    "weights": WeightConfig,
}


def _strict_from_dict(cls, raw: dict, path: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(raw).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(
            f"{path or 'config'}: unknown key(s) {sorted(unknown)}; allowed: {sorted(names)}"
        )
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in raw:
            continue
        value = raw[f.name]
        sub = f"{path}.{f.name}" if path else f.name
        if f.name in _NESTED and isinstance(value, dict):
            kwargs[f.name] = _strict_from_dict(_NESTED[f.name], value, sub)
        else:
            kwargs[f.name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ConfigError) as err:
        raise ConfigError(f"{path or 'config'}: {err}") from err


def run_config_from_dict(raw: dict) -> RunConfig:
    return _strict_from_dict(RunConfig, raw, "")


def load_run_config(path) -> RunConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}") from err
    return run_config_from_dict(raw)


def run_config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


# ---------------------------------------------------------------------------
# builders


def build_dataset(cfg: RunConfig) -> Dataset:
    fn = make_function(cfg.dataset.function)
    seed = cfg.dataset.seed if cfg.dataset.seed is not None else cfg.seed
    return sample_dataset(
        fn,
        cfg.dataset.n,
        noise=cfg.dataset.noise.to_spec(cfg.seed),
        split=cfg.dataset.split,
        seed=seed,
    )


def build_net(cfg: RunConfig) -> Network:
    return build_network(
        cfg.architecture,
        degree=cfg.spline.degree,
        intervals=cfg.spline.intervals,
        seed=cfg.seed,
    )


def build_spaces(cfg: RunConfig):
    return [get_space(kind, cfg.grid_points, (-1.0, 1.0)) for kind in cfg.spaces]
