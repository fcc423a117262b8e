"""Losses, the Adam training loop and adapter-only fine-tuning."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .backbone import ModelConfig, ParamSet, backward, forward, forward_cached, init_params
from .dataio import Windows
from .numkernel import AdamState, NumericError, ShapeError, adam_step


class DivergenceError(NumericError):
    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    freeze_backbone: bool = False
    early_stop_patience: int = 5

    def __post_init__(self) -> None:
        # epochs == 0 and learning_rate == 0 are allowed as explicit no-op runs
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate < 0 or self.early_stop_patience < 1:
            raise ValueError(f"invalid training configuration: {self}")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class TrainRecord:
    epochs: list[dict] = field(default_factory=list)
    n_params: int = 0
    n_trainable: int = 0
    best_epoch: int = 0
    stopped_early: bool = False

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e) + "\n" for e in self.epochs)

    @property
    def best_val_mse(self) -> float:
        if not self.epochs:
            return float("nan")
        return min(e["val_mse"] for e in self.epochs)


# -- losses ---------------------------------------------------------------------------

def _check_batch(x: np.ndarray, y: np.ndarray, cfg: ModelConfig) -> None:
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    if x.shape[1:] != (cfg.T, cfg.C) or y.shape[1:] != (cfg.H, cfg.C) or x.shape[0] != y.shape[0]:
        raise ShapeError(f"batch shapes {x.shape}, {y.shape} do not fit config (T, H, C) = {(cfg.T, cfg.H, cfg.C)}")


def cd_loss(x: np.ndarray, y: np.ndarray, params: ParamSet) -> float:
    """Global loss over all channels, as an element mean (i.e. an MSE)."""
    _check_batch(x, y, params.config)
    return float(np.mean((y - forward(x, params)) ** 2))


def channel_params(params: ParamSet, c: int) -> ParamSet:
    """Univariate predictor of channel ``c`` taken from a per-channel model."""
    cfg = params.config
    sub = {
        "embed.weight": params["embed.weight"][c:c + 1],
        "embed.bias": params["embed.bias"][c:c + 1],
    }
    if cfg.adapter_enabled:
        sub["adapter.phi"] = params["adapter.phi"][c:c + 1]
        sub["adapter.W"] = params["adapter.W"]
    sub["proj.weight"] = params["proj.weight"]
    sub["proj.bias"] = params["proj.bias"]
    return ParamSet(cfg.replace(C=1), sub)


def ci_loss(x: np.ndarray, y: np.ndarray, params: ParamSet) -> float:
    """Per-channel loss: each channel is forecast by its own univariate model.

    Computed channel by channel, independently of :func:`forward` on the full
    batch; with element-mean scaling it equals :func:`cd_loss` on the same
    predictions.
    """
    cfg = params.config
    if cfg.embedding_mode != "per_channel":
        raise ValueError("ci_loss needs embedding_mode='per_channel'")
    if cfg.depth != 0:
        raise ValueError("ci_loss needs a mixing-free model")
    _check_batch(x, y, cfg)
    total = 0.0
    for c in range(cfg.C):
        pred = forward(x[:, :, c:c + 1], channel_params(params, c))
        total += float(np.sum((y[:, :, c:c + 1] - pred) ** 2))
    return total / (x.shape[0] * cfg.H * cfg.C)


def loss_and_grad(params: ParamSet, x: np.ndarray, y: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    y_hat, cache = forward_cached(x, params)
    diff = y_hat - y
    loss = float(np.mean(diff * diff))
    return loss, backward(cache, (2.0 / diff.size) * diff, params)


def predict(params: ParamSet, x: np.ndarray, chunk: int = 1024) -> np.ndarray:
    return np.concatenate([forward(x[i:i + chunk], params) for i in range(0, x.shape[0], chunk)], axis=0)


def mse(params: ParamSet, windows: Windows) -> float:
    return float(np.mean((predict(params, windows.x) - windows.y) ** 2))


def param_hash(params: ParamSet, names: Iterable[str] | None = None) -> str:
    h = hashlib.sha256()
    for name in names if names is not None else params.tensors:
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name]).tobytes())
    return h.hexdigest()


# -- training loop ----------------------------------------------------------------------

def _train(params: ParamSet, trainable: list[str], train: Windows, val: Windows,
           tc: TrainConfig, log=None) -> tuple[ParamSet, TrainRecord]:
    cfg = params.config
    if len(train) == 0 or len(val) == 0:
        raise ValueError("training and validation windows must be non-empty")
    _check_batch(train.x, train.y, cfg)
    _check_batch(val.x, val.y, cfg)
    states = {k: AdamState.zeros_like(params[k], lr=tc.learning_rate) for k in trainable}
    rng = np.random.default_rng([tc.seed, 1])
    record = TrainRecord(n_params=params.n_params, n_trainable=int(sum(params[k].size for k in trainable)))
    best, best_val, since_best = params.copy(), np.inf, 0
    n = len(train)
    for epoch in range(1, tc.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, tc.batch_size)):
            idx = order[start:start + tc.batch_size]
            loss, grads = loss_and_grad(params, train.x[idx], train.y[idx])
            if not np.isfinite(loss):
                raise DivergenceError(epoch, b, loss)
            total += loss * len(idx)
            for k in trainable:
                params.tensors[k] = adam_step(params[k], grads[k], states[k])
        val_mse = mse(params, val)
        if not np.isfinite(val_mse):
            raise DivergenceError(epoch, -1, val_mse)
        entry = {"epoch": epoch, "train_mse": total / n, "val_mse": val_mse,
                 "seconds": time.perf_counter() - t0}
        record.epochs.append(entry)
        if log is not None:
            log(entry)
        if val_mse < best_val:
            best, best_val, since_best = params.copy(), val_mse, 0
            record.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= tc.early_stop_patience:
                record.stopped_early = True
                break
    return best, record


def fit(train: Windows, val: Windows, model_config: ModelConfig, train_config: TrainConfig,
        init: ParamSet | None = None, log=None) -> tuple[ParamSet, TrainRecord]:
    """Train every tensor (or only adapters with ``freeze_backbone``) with Adam.

    Returns the parameters of the best validation epoch.  Fully determined by
    the data, both configs and ``train_config.seed``.
    """
    params = init.copy() if init is not None else init_params(model_config, train_config.seed)
    if params.config != model_config:
        raise ValueError("initial parameters do not match model_config")
    trainable = params.adapter_names() if train_config.freeze_backbone else list(params.tensors)
    if train_config.freeze_backbone and not trainable:
        raise ValueError("freeze_backbone leaves nothing to train: adapter is disabled")
    return _train(params, trainable, train, val, train_config, log)


def fresh_adapters(pretrained: ParamSet, seed: int, C: int | None = None) -> ParamSet:
    """Pretrained backbone tensors with newly initialized adapters for ``C`` channels."""
    cfg = pretrained.config
    if not cfg.adapter_enabled:
        raise ValueError("pretrained model has no adapter to fine-tune")
    C = cfg.C if C is None else C
    if C != cfg.C and (cfg.embedding_mode != "shared" or cfg.depth and cfg.mixing_mode == "mlp_mix"):
        raise ValueError("only channel-count-agnostic backbones can transfer to a different C")
    new_cfg = cfg.replace(C=C)
    new = init_params(new_cfg, seed, only=["adapter.phi", "adapter.W"])
    tensors = {k: (new[k] if k in new else pretrained[k].copy()) for k in pretrained.tensors}
    return ParamSet(new_cfg, tensors)


def finetune_adapters(pretrained: ParamSet, train: Windows, val: Windows,
                      train_config: TrainConfig, log=None) -> tuple[ParamSet, TrainRecord]:
    """Re-initialize adapters for the target channels and train only them."""
    cfg = pretrained.config
    T, H, C = train.x.shape[1], train.y.shape[1], train.x.shape[2]
    if (T, H) != (cfg.T, cfg.H):
        raise ShapeError(f"target windows have (T, H) = {(T, H)}, model expects {(cfg.T, cfg.H)}")
    start = fresh_adapters(pretrained, train_config.seed, C)
    return fit(train, val, start.config, train_config.replace(freeze_backbone=True), init=start, log=log)
