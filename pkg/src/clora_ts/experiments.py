"""Metrics and the desk-scale diagnostic experiments.

Every experiment here is a pure function of its inputs and seeds, so reruns
reproduce every reported number bit for bit.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .adapters import extra_param_count
from .backbone import ModelConfig, ParamSet, total_param_count
from .dataio import TimeSeriesDataset, Windows, prepare
from .numkernel import ShapeError
from .training import TrainConfig, fit, predict


@dataclass(frozen=True)
class MetricsReport:
    mse: float
    mae: float
    per_horizon_mse: tuple[float, ...]
    n_samples: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def compute_metrics(predictions: np.ndarray, targets: np.ndarray) -> MetricsReport:
    """MSE/MAE over every element of (N, H, C) predictions vs targets."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ShapeError(f"predictions {predictions.shape} vs targets {targets.shape}")
    if predictions.size == 0:
        raise ValueError("no samples to score")
    if predictions.ndim == 2:
        predictions, targets = predictions[None], targets[None]
    err = predictions - targets
    sq = err * err
    # fsum is correctly rounded, hence independent of sample/channel order
    per_h = np.moveaxis(sq, 1, 0).reshape(sq.shape[1], -1)
    return MetricsReport(
        mse=math.fsum(sq.ravel()) / sq.size,
        mae=math.fsum(np.abs(err).ravel()) / err.size,
        per_horizon_mse=tuple(math.fsum(row) / row.size for row in per_h),
        n_samples=int(predictions.shape[0]),
    )


def evaluate(params: ParamSet, windows: Windows) -> MetricsReport:
    return compute_metrics(predict(params, windows.x), windows.y)


def improvement_report(base: MetricsReport, adapted: MetricsReport) -> dict[str, float]:
    """Percentage reduction of MSE and MAE going from ``base`` to ``adapted``.

    ``combined`` is the plain mean of the two percentages.
    """
    if base.mse == 0 or base.mae == 0:
        raise ZeroDivisionError("base metrics must be non-zero")
    imp_mse = 100.0 * (base.mse - adapted.mse) / base.mse
    imp_mae = 100.0 * (base.mae - adapted.mae) / base.mae
    return {"imp_mse": imp_mse, "imp_mae": imp_mae, "combined": 0.5 * (imp_mse + imp_mae)}


# -- parameter accounting -----------------------------------------------------------------

def strategy_configs(config: ModelConfig) -> dict[str, ModelConfig]:
    """The three compared strategies sharing every other hyperparameter."""
    return {
        "CD": config.replace(embedding_mode="shared", adapter_enabled=False),
        "CInd": config.replace(embedding_mode="per_channel", adapter_enabled=False),
        "C-LoRA": config.replace(embedding_mode="shared", adapter_enabled=True),
    }


def embedding_param_count(config: ModelConfig) -> int:
    """Token-embedding weights plus, when enabled, the adapter bank."""
    per_map = config.T * config.D + config.D
    n = per_map * (config.C if config.embedding_mode == "per_channel" else 1)
    if config.adapter_enabled:
        n += extra_param_count(config.C, config.r, config.D, config.d)
    return n


def param_comparison(config: ModelConfig) -> dict[str, dict[str, int]]:
    return {
        name: {"total": total_param_count(cfg), "embedding": embedding_param_count(cfg)}
        for name, cfg in strategy_configs(config).items()
    }


# -- channel shuffling --------------------------------------------------------------------

@dataclass
class ShuffleResult:
    baseline: MetricsReport
    shuffled: list[MetricsReport]
    permutations: list[list[int]]

    @property
    def deltas(self) -> list[float]:
        return [s.mse - self.baseline.mse for s in self.shuffled]

    @property
    def median_delta(self) -> float:
        return float(np.median(self.deltas))

    @property
    def mean_delta(self) -> float:
        return float(np.mean(self.deltas))

    def to_dict(self) -> dict:
        return {
            "baseline": self.baseline.to_dict(),
            "shuffled_mse": [s.mse for s in self.shuffled],
            "deltas": self.deltas,
            "median_delta": self.median_delta,
            "mean_delta": self.mean_delta,
            "permutations": self.permutations,
        }


def shuffle_test(params: ParamSet, windows: Windows, seed: int = 0, n_permutations: int = 20,
                 permutations: Sequence[Sequence[int]] | None = None) -> ShuffleResult:
    """Score the model after permuting the channel order of inputs and targets.

    The model's channel-indexed parameters stay where they are, so a model that
    relies on channel identity degrades.
    """
    C = windows.x.shape[2]
    if C < 2:
        raise ValueError("channel shuffling needs at least two channels")
    if permutations is None:
        rng = np.random.default_rng(seed)
        permutations = [rng.permutation(C).tolist() for _ in range(n_permutations)]
    baseline = evaluate(params, windows)
    shuffled = [evaluate(params, windows.permute_channels(p)) for p in permutations]
    return ShuffleResult(baseline, shuffled, [list(map(int, p)) for p in permutations])


# -- sweeps ----------------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepEntry:
    value: int
    test: MetricsReport
    train: MetricsReport
    param_count: int


@dataclass
class SweepResult:
    swept_parameter: str
    entries: list[SweepEntry] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["value", "train_mse", "test_mse", "mae", "params"])
        for e in self.entries:
            w.writerow([e.value, repr(e.train.mse), repr(e.test.mse), repr(e.test.mae), e.param_count])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"swept_parameter": self.swept_parameter,
                "entries": [{"value": e.value, "test": e.test.to_dict(), "train": e.train.to_dict(),
                             "param_count": e.param_count} for e in self.entries]}


SWEEP_AXES = ("rank", "lookback")


def run_single(ds: TimeSeriesDataset, model_config: ModelConfig,
               train_config: TrainConfig) -> tuple[ParamSet, MetricsReport, MetricsReport]:
    """Standardize, window, fit and score one configuration: (params, train, test)."""
    data = prepare(ds, model_config.T, model_config.H)
    params, _ = fit(data.train, data.val, model_config, train_config)
    return params, evaluate(params, data.train), evaluate(params, data.test)


def sweep(axis: str, values: Sequence[int], ds: TimeSeriesDataset, model_config: ModelConfig,
          train_config: TrainConfig) -> SweepResult:
    """One full training run per value, same seed and data pipeline throughout."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    values = [int(v) for v in values]
    if not values or any(b <= a for a, b in zip(values, values[1:])):
        raise ValueError("sweep values must be non-empty and strictly increasing")
    result = SweepResult(axis)
    for v in values:
        if axis == "rank":
            if not model_config.adapter_enabled:
                raise ValueError("rank sweep needs adapter_enabled")
            if not 1 <= v <= model_config.D:
                raise ValueError(f"rank {v} outside [1, D={model_config.D}]")
            cfg = model_config.replace(r=v)
        else:
            if v < 2:
                raise ValueError(f"look-back {v} must be at least 2")
            cfg = model_config.replace(T=v)
        _, train_rep, test_rep = run_single(ds, cfg, train_config)
        result.entries.append(SweepEntry(v, test_rep, train_rep, total_param_count(cfg)))
    return result


# -- capacity / generalization gap ---------------------------------------------------------

def capacity_gap_report(models: Mapping[str, ParamSet], train: Windows, test: Windows,
                        twin_field: str | None = "adapter_enabled") -> dict:
    """Train/test MSE and their gap for a set of models scored on the same data.

    With ``twin_field`` set, every config must agree on everything except that
    field (and, for the adapter flag, the adapter sizes ``d`` and ``r``).
    """
    if len(models) < 2:
        raise ValueError("need at least two models to compare")
    if twin_field is not None:
        ignore = {twin_field} | ({"d", "r"} if twin_field == "adapter_enabled" else set())
        stripped = [{k: v for k, v in p.config.to_dict().items() if k not in ignore} for p in models.values()]
        if any(s != stripped[0] for s in stripped):
            raise ValueError(f"models differ in more than {twin_field!r}")
    rows = {}
    for name, params in models.items():
        tr, te = evaluate(params, train).mse, evaluate(params, test).mse
        rows[name] = {"train_mse": tr, "test_mse": te, "gap": te - tr}
    report: dict = {"rows": rows}
    if twin_field == "adapter_enabled":
        on = [n for n, p in models.items() if p.config.adapter_enabled]
        off = [n for n, p in models.items() if not p.config.adapter_enabled]
        if len(on) == 1 and len(off) == 1:
            report["adapter_narrows_gap"] = bool(rows[on[0]]["gap"] < rows[off[0]]["gap"])
    return report


# -- report rendering ----------------------------------------------------------------------

def to_json(obj) -> str:
    if dataclasses.is_dataclass(obj):
        obj = obj.to_dict() if hasattr(obj, "to_dict") else dataclasses.asdict(obj)
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def format_table(rows: Mapping[str, Mapping[str, float]], columns: Sequence[str] | None = None) -> str:
    """Aligned plain-text table: one row per key of ``rows``."""
    names = list(rows)
    columns = list(columns or next(iter(rows.values())).keys())
    cells = [[n] + [_fmt(rows[n][c]) for c in columns] for n in names]
    header = [""] + columns
    widths = [max(len(r[i]) for r in cells + [header]) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) if i == 0 else h.rjust(w) for i, (h, w) in enumerate(zip(header, widths)))]
    for r in cells:
        lines.append("  ".join(v.ljust(w) if i == 0 else v.rjust(w) for i, (v, w) in enumerate(zip(r, widths))))
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


# -- multi-seed directional protocols ------------------------------------------------------

@dataclass
class TwinRun:
    seed: int
    adapter_off: ParamSet
    adapter_on: ParamSet
    test_off: MetricsReport
    test_on: MetricsReport
    data: "object" = field(repr=False, default=None)

    @property
    def improvement(self) -> float:
        return improvement_report(self.test_off, self.test_on)["imp_mse"]


def twin_runs(synth, model_config: ModelConfig, train_config: TrainConfig, seeds: Sequence[int]) -> list[TwinRun]:
    """Adapter-off and adapter-on twins trained per seed (data seed = train seed)."""
    from .dataio import generate_synthetic

    runs = []
    for s in seeds:
        ds = generate_synthetic(dataclasses.replace(synth, seed=s))
        data = prepare(ds, model_config.T, model_config.H)
        tc = train_config.replace(seed=s)
        off, _ = fit(data.train, data.val, model_config.replace(adapter_enabled=False), tc)
        on, _ = fit(data.train, data.val, model_config.replace(adapter_enabled=True), tc)
        runs.append(TwinRun(s, off, on, evaluate(off, data.test), evaluate(on, data.test), data))
    return runs


@dataclass(frozen=True)
class TransferOutcome:
    seed: int
    zero_shot_mse: float
    finetuned_mse: float
    retrain_mse: float
    backbone_frozen: bool

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def transfer_run(pretrained: ParamSet, target: TimeSeriesDataset, train_config: TrainConfig) -> TransferOutcome:
    """Zero-shot vs adapter-only fine-tuning vs full retraining on a target set.

    Zero-shot is the pretrained backbone with freshly initialized adapters,
    i.e. fine-tuning with zero epochs.
    """
    from .training import finetune_adapters, fresh_adapters, param_hash

    cfg = pretrained.config
    data = prepare(target, cfg.T, cfg.H)
    names = pretrained.backbone_names()
    before = param_hash(pretrained, names)
    zero_shot = evaluate(fresh_adapters(pretrained, train_config.seed, target.n_channels), data.test)
    tuned, _ = finetune_adapters(pretrained, data.train, data.val, train_config)
    retrained, _ = fit(data.train, data.val, tuned.config, train_config)
    frozen = param_hash(tuned, names) == before == param_hash(pretrained, names)
    return TransferOutcome(train_config.seed, zero_shot.mse, evaluate(tuned, data.test).mse,
                           evaluate(retrained, data.test).mse, frozen)
