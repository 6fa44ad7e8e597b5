"""Synthetic regression benchmarks: test functions, noise, datasets.

Targets are sampled at random coordinates (never on a grid), noise is
injected into targets only, and every draw is reproducible from its
seed. Signal-to-noise ratios are specified in dB of mean-square power.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

FUNCTION_KINDS = (
    "simple_sinusoid",
    "gaussian",
    "discontinuous",
    "oscillatory",
    "polynomial",
    "wave1d",
    "heat2d",
)

NOISE_KINDS = ("none", "gaussian", "uniform", "salt_pepper")

# fixed time slice for the 1-D wave benchmark and fixed diffusion factor
# for the 2-D heat benchmark (single-mode separable solutions)
_WAVE_T = 0.25
_HEAT_FACTOR = math.exp(-2.0 * math.pi**2 * 0.05)


@dataclass(frozen=True)
class TestFunction:
    kind: str
    dim: int
    fn: callable
    domain: tuple  # ((lo, hi), ...) per input dimension

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.fn(x)


def make_function(kind: str) -> TestFunction:
    """Closed-form evaluator for a named benchmark target."""
    unit = ((0.0, 1.0),)
    if kind == "simple_sinusoid":
        return TestFunction(kind, 1, lambda x: np.sin(2 * np.pi * x[:, 0]), unit)
    if kind == "gaussian":
        return TestFunction(kind, 1, lambda x: np.exp(-8.0 * (x[:, 0] - 0.5) ** 2), unit)
    if kind == "discontinuous":
        # right-limit convention at the jump: the step takes its upper value
        return TestFunction(
            kind, 1,
            lambda x: np.where(x[:, 0] >= 0.5, 1.0, -1.0) + 0.3 * x[:, 0],
            unit,
        )
    if kind == "oscillatory":
        return TestFunction(
            kind, 1,
            lambda x: np.sin(4 * np.pi * x[:, 0]) + 0.5 * np.cos(10 * np.pi * x[:, 0]),
            unit,
        )
    if kind == "polynomial":
        return TestFunction(kind, 1, lambda x: 4.0 * x[:, 0] ** 3 - 3.0 * x[:, 0], unit)
    if kind == "wave1d":
        return TestFunction(
            kind, 1,
            lambda x: np.sin(np.pi * x[:, 0]) * math.cos(math.pi * _WAVE_T),
            unit,
        )
    if kind == "heat2d":
        return TestFunction(
            kind, 2,
            lambda x: _HEAT_FACTOR * np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]),
            ((0.0, 1.0), (0.0, 1.0)),
        )
    raise ConfigError(f"unknown test function {kind!r}; expected one of {FUNCTION_KINDS}")


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "none"
    snr_db: float = math.inf
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if self.kind == "none" and math.isfinite(self.snr_db):
            raise ConfigError("noise kind 'none' requires snr_db = inf")
        if self.kind != "none" and not math.isfinite(self.snr_db):
            raise ConfigError(f"noise kind {self.kind!r} requires a finite snr_db")


def _signal_power(values: np.ndarray) -> float:
    power = float(np.mean(values**2))
    if power <= 0.0:
        raise ValueError("signal power is zero; SNR-calibrated noise is undefined")
    return power


def apply_noise(values, spec: NoiseSpec) -> np.ndarray:
    """Additive or replacement noise calibrated to the requested SNR.

    Gaussian and uniform noise are zero-mean with variance equal to
    P_signal / 10^(snr/10); salt-and-pepper replaces a fraction of
    entries with the value range's min/max, the fraction solved
    numerically so the induced power matches the same target.
    """
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ConfigError("noise injection requires finite values")
    if spec.kind == "none":
        return values.copy()
    rng = np.random.default_rng(spec.seed)
    noise_power = _signal_power(values) / 10.0 ** (spec.snr_db / 10.0)
    if spec.kind == "gaussian":
        return values + rng.normal(0.0, math.sqrt(noise_power), values.shape)
    if spec.kind == "uniform":
        half_width = math.sqrt(3.0 * noise_power)
        return values + rng.uniform(-half_width, half_width, values.shape)
    # salt & pepper: expected induced power is linear in the corrupted
    # fraction, so the calibration is a one-step numeric solve
    lo, hi = values.min(), values.max()
    damage = 0.5 * np.mean((hi - values) ** 2 + (lo - values) ** 2)
    if damage <= 0.0:
        raise ValueError("value range is degenerate; salt-and-pepper noise is undefined")
    frac = noise_power / damage
    if frac > 1.0:
        raise ValueError(
            f"requested SNR {spec.snr_db} dB needs corruption fraction {frac:.3f} > 1"
        )
    n = values.size
    n_corrupt = int(round(frac * n))
    out = values.copy()
    idx = rng.choice(n, size=n_corrupt, replace=False)
    salt = rng.random(n_corrupt) < 0.5
    out.flat[idx] = np.where(salt, hi, lo)
    return out


def measure_snr_db(clean: np.ndarray, noisy: np.ndarray) -> float:
    """Empirical 10 log10(P_signal / P_noise)."""
    p_noise = float(np.mean((noisy - clean) ** 2))
    if p_noise == 0.0:
        return math.inf
    return 10.0 * math.log10(_signal_power(np.asarray(clean, dtype=float)) / p_noise)


@dataclass
class Dataset:
    """Random-coordinate samples of one target, with a train/val split."""

    function_kind: str
    inputs: np.ndarray  # (n, dim)
    clean: np.ndarray  # (n,)
    noisy: np.ndarray  # (n,)
    train_idx: np.ndarray
    val_idx: np.ndarray

    def __post_init__(self):
        n = self.inputs.shape[0]
        both = np.concatenate([self.train_idx, self.val_idx])
        if sorted(both.tolist()) != list(range(n)):
            raise ConfigError("train/val split must be disjoint and exhaustive")


def sample_dataset(
    f: TestFunction,
    n: int,
    noise: NoiseSpec = NoiseSpec(),
    split: float = 0.8,
    seed: int = 0,
) -> Dataset:
    """Draw n random coordinates, evaluate, inject noise, split.

    The training split size is floor(split * n); indices are a seeded
    permutation, so the same seed reproduces the dataset bit-exactly.
    """
    if n < 10:
        raise ConfigError(f"dataset size must be >= 10, got {n}")
    if not (0.0 < split < 1.0):
        raise ConfigError(f"split fraction must lie in (0, 1), got {split}")
    rng = np.random.default_rng(seed)
    lows = np.array([d[0] for d in f.domain])
    highs = np.array([d[1] for d in f.domain])
    inputs = rng.uniform(lows, highs, size=(n, f.dim))
    clean = f(inputs)
    noisy = apply_noise(clean, noise)
    perm = rng.permutation(n)
    n_train = int(math.floor(split * n))
    return Dataset(
        function_kind=f.kind,
        inputs=inputs,
        clean=clean,
        noisy=noisy,
        train_idx=np.sort(perm[:n_train]),
        val_idx=np.sort(perm[n_train:]),
    )


# ---------------------------------------------------------------------------
# CSV round trip

DATASET_SCHEMA = "# pkan.dataset.v1"


def dataset_to_csv(ds: Dataset) -> str:
    dim = ds.inputs.shape[1]
    buf = io.StringIO()
    buf.write(DATASET_SCHEMA + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"x{i + 1}" for i in range(dim)] + ["y_clean", "y_noisy", "split"])
    in_train = np.zeros(ds.inputs.shape[0], dtype=bool)
    in_train[ds.train_idx] = True
    for row in range(ds.inputs.shape[0]):
        cells = [repr(v) for v in ds.inputs[row]]
        cells += [repr(ds.clean[row]), repr(ds.noisy[row])]
        cells.append("train" if in_train[row] else "val")
        writer.writerow(cells)
    return buf.getvalue()


def dataset_from_csv(text: str, function_kind: str = "unknown") -> Dataset:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ConfigError("dataset CSV must start with a schema line")
    reader = csv.reader(lines[1:])
    header = next(reader)
    dim = len(header) - 3
    inputs, clean, noisy, split_col = [], [], [], []
    for cells in reader:
        inputs.append([float(v) for v in cells[:dim]])
        clean.append(float(cells[dim]))
        noisy.append(float(cells[dim + 1]))
        split_col.append(cells[dim + 2])
    split_arr = np.array(split_col)
    idx = np.arange(len(clean))
    return Dataset(
        function_kind=function_kind,
        inputs=np.array(inputs),
        clean=np.array(clean),
        noisy=np.array(noisy),
        train_idx=idx[split_arr == "train"],
        val_idx=idx[split_arr == "val"],
    )
