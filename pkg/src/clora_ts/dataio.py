"""Series loading, synthetic generation, windowing and dataset-level z-scoring."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

SPLITS = ("train", "val", "test")
STD_FLOOR = 1e-8


class DataError(ValueError):
    """Malformed or insufficient input data."""


@dataclass(frozen=True)
class TimeSeriesDataset:
    values: np.ndarray  # (T_total, C)
    channel_names: tuple[str, ...]
    split_fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] == 0 or values.shape[1] == 0:
            raise DataError(f"dataset must be a non-empty 2-D array, got shape {values.shape}")
        if len(self.channel_names) != values.shape[1]:
            raise DataError(f"{len(self.channel_names)} channel names for {values.shape[1]} channels")
        fr = tuple(float(f) for f in self.split_fractions)
        if len(fr) != 3 or min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise DataError(f"split fractions must be three positive numbers summing to 1, got {fr}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        object.__setattr__(self, "split_fractions", fr)

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    @property
    def length(self) -> int:
        return self.values.shape[0]

    def split_bounds(self, split: str) -> tuple[int, int]:
        """Half-open ``[start, end)`` row range of a split."""
        if split not in SPLITS:
            raise DataError(f"unknown split {split!r}; expected one of {SPLITS}")
        n = self.length
        n_train = int(n * self.split_fractions[0])
        n_val = int(n * self.split_fractions[1])
        bounds = {"train": (0, n_train), "val": (n_train, n_train + n_val), "test": (n_train + n_val, n)}
        return bounds[split]

    def region(self, split: str) -> np.ndarray:
        start, end = self.split_bounds(split)
        return self.values[start:end]

    def with_values(self, values: np.ndarray) -> "TimeSeriesDataset":
        return TimeSeriesDataset(values, self.channel_names, self.split_fractions)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(",".join(self.channel_names).encode())
        h.update(repr(self.split_fractions).encode())
        h.update(np.ascontiguousarray(self.values).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class WindowSample:
    x: np.ndarray  # (T, C)
    y: np.ndarray  # (H, C)
    origin_index: int


@dataclass(frozen=True)
class Windows:
    """Stacked windows: ``x`` is (N, T, C), ``y`` is (N, H, C)."""

    x: np.ndarray
    y: np.ndarray
    origins: np.ndarray

    def __len__(self) -> int:
        return self.x.shape[0]

    def samples(self) -> list[WindowSample]:
        return [WindowSample(self.x[i], self.y[i], int(self.origins[i])) for i in range(len(self))]

    def permute_channels(self, perm: Sequence[int]) -> "Windows":
        perm = np.asarray(perm)
        return Windows(self.x[:, :, perm], self.y[:, :, perm], self.origins)


# -- CSV ---------------------------------------------------------------------

def load_csv(path: str | Path, has_time_column: bool = False,
             split_fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)) -> TimeSeriesDataset:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = rows[0], [r for r in rows[1:] if r]
    if not body:
        raise DataError(f"{path}: no data rows")
    names = header[1:] if has_time_column else header
    if not names:
        raise DataError(f"{path}: no value columns")
    values = np.empty((len(body), len(names)))
    times: list[float] = []
    for i, row in enumerate(body):
        line = i + 2  # 1-based, header is line 1
        if len(row) != len(header):
            raise DataError(f"{path}: row {line} has {len(row)} fields, expected {len(header)}")
        cells = row[1:] if has_time_column else row
        for j, cell in enumerate(cells):
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise DataError(f"{path}: non-numeric value {cell!r} at row {line}, column {names[j]!r}") from None
        if has_time_column:
            try:
                times.append(float(row[0]))
            except ValueError:
                pass
    if has_time_column and len(times) == len(body) and np.any(np.diff(times) <= 0):
        raise DataError(f"{path}: time column is not strictly increasing")
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path}: non-finite values")
    return TimeSeriesDataset(values, tuple(n.strip() for n in names), split_fractions)


def write_csv(ds: TimeSeriesDataset, path: str | Path, time_column: str | None = None) -> None:
    """Write ``ds`` with ``repr`` floats so a reload is bit-exact."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(([time_column] if time_column else []) + list(ds.channel_names))
        for t, row in enumerate(ds.values):
            w.writerow(([t] if time_column else []) + [repr(float(v)) for v in row])


# -- synthetic data ----------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    C: int = 8
    T_total: int = 4096
    seed: int = 0
    hetero_amp: float = 1.0
    shared_amp: float = 0.5
    noise_sigma: float = 0.3
    period: float | None = None       # fix every channel's period instead of drawing it
    min_period: float = 8.0
    max_period: float = 64.0
    phase_shift: float = 0.0          # scale of an extra seeded per-channel phase offset
    ar_coef: float = 0.9

    def validate(self) -> None:
        if self.C < 2:
            raise DataError(f"synthetic data needs C >= 2, got {self.C}")
        if self.T_total < 64:
            raise DataError(f"synthetic data needs T_total >= 64, got {self.T_total}")
        if self.noise_sigma < 0 or self.hetero_amp < 0 or self.shared_amp < 0:
            raise DataError("amplitudes and noise_sigma must be non-negative")
        if not 0 < self.min_period <= self.max_period:
            raise DataError("need 0 < min_period <= max_period")
        if self.period is not None and self.period <= 0:
            raise DataError("period must be positive")


@dataclass(frozen=True)
class SynthTruth:
    frequencies: np.ndarray
    phases: np.ndarray
    latent: np.ndarray


def generate_synthetic(config: SynthConfig, return_truth: bool = False):
    """Sinusoid per channel + shared AR(1) latent + Gaussian noise.

    ``x[t, c] = hetero_amp*sin(2*pi*f_c*t + psi_c) + shared_amp*g[t] + noise_sigma*eps``.
    Per-channel frequencies are drawn log-uniformly between ``1/max_period`` and
    ``1/min_period`` (or fixed by ``period``).  The random draws happen in a fixed
    order, so ``phase_shift`` only moves phases and leaves every other draw alone.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    C, n = config.C, config.T_total
    periods = np.exp(rng.uniform(np.log(config.min_period), np.log(config.max_period), size=C))
    if config.period is not None:
        periods = np.full(C, float(config.period))
    freqs = 1.0 / periods
    phases = rng.uniform(0.0, 2.0 * np.pi, size=C)
    innovations = rng.standard_normal(n)
    noise = rng.standard_normal((n, C))
    shift = rng.uniform(0.0, 2.0 * np.pi, size=C)
    phases = phases + config.phase_shift * shift

    a = config.ar_coef
    g = np.empty(n)
    g[0] = innovations[0]
    for t in range(1, n):
        g[t] = a * g[t - 1] + np.sqrt(1.0 - a * a) * innovations[t]

    t = np.arange(n, dtype=np.float64)[:, None]
    values = (config.hetero_amp * np.sin(2.0 * np.pi * freqs[None, :] * t + phases[None, :])
              + config.shared_amp * g[:, None]
              + config.noise_sigma * noise)
    ds = TimeSeriesDataset(values, tuple(f"ch{c}" for c in range(C)))
    if return_truth:
        return ds, SynthTruth(freqs, phases, g)
    return ds


# -- windowing -----------------------------------------------------------------

def make_windows(ds: TimeSeriesDataset, T: int, H: int, split: str) -> Windows:
    """Stride-1 windows lying entirely inside one split region."""
    if T < 1 or H < 1:
        raise DataError(f"look-back and horizon must be positive, got T={T}, H={H}")
    start, end = ds.split_bounds(split)
    region_len = end - start
    if region_len < T + H:
        raise DataError(
            f"{split} region has {region_len} rows; need at least T + H = {T + H}"
        )
    n = region_len - T - H + 1
    view = np.lib.stride_tricks.sliding_window_view(ds.values[start:end], T + H, axis=0)
    # view: (n, C, T+H)
    stacked = np.ascontiguousarray(view.transpose(0, 2, 1))
    return Windows(stacked[:, :T].copy(), stacked[:, T:].copy(), np.arange(start, start + n))


# -- standardization -----------------------------------------------------------

@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, ds: TimeSeriesDataset) -> "Standardizer":
        train = ds.region("train")
        return cls(train.mean(axis=0), np.maximum(train.std(axis=0), STD_FLOOR))

    def _check(self, ds: TimeSeriesDataset) -> None:
        if ds.n_channels != self.mean.shape[0]:
            raise DataError(f"standardizer has {self.mean.shape[0]} channels, dataset has {ds.n_channels}")


def standardize(ds: TimeSeriesDataset, stats: Standardizer) -> TimeSeriesDataset:
    stats._check(ds)
    return ds.with_values((ds.values - stats.mean) / stats.std)


def inverse_standardize(ds: TimeSeriesDataset, stats: Standardizer) -> TimeSeriesDataset:
    stats._check(ds)
    return ds.with_values(ds.values * stats.std + stats.mean)


@dataclass
class PreparedData:
    """Standardized dataset plus its train/val/test windows."""

    dataset: TimeSeriesDataset
    stats: Standardizer
    train: Windows
    val: Windows
    test: Windows
    raw_fingerprint: str = field(default="")


def prepare(ds: TimeSeriesDataset, T: int, H: int) -> PreparedData:
    stats = Standardizer.fit(ds)
    z = standardize(ds, stats)
    return PreparedData(
        z, stats,
        make_windows(z, T, H, "train"),
        make_windows(z, T, H, "val"),
        make_windows(z, T, H, "test"),
        ds.fingerprint(),
    )
