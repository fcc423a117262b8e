import numpy as np
import pytest

from clora_ts.backbone import ModelConfig, ParamSet, forward, init_params
from clora_ts.dataio import SynthConfig, Windows, generate_synthetic, prepare
from clora_ts.numkernel import AdamState, adam_step
from clora_ts.training import (DivergenceError, TrainConfig, cd_loss, ci_loss, finetune_adapters, fit,
                               fresh_adapters, loss_and_grad, mse, param_hash)
from helpers import SMALL


def _cfg(**kw):
    return ModelConfig(**{**SMALL, **kw})


def _batch(seed=0, n=5, T=24, H=8, C=6):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, T, C)), rng.standard_normal((n, H, C))


def test_cd_loss_zero_for_perfect_prediction():
    p = init_params(_cfg(), 0)
    x, _ = _batch()
    assert cd_loss(x, forward(x, p), p) == 0.0


def test_cd_loss_unit_error():
    p = init_params(_cfg(L=0), 0)
    p.tensors["proj.weight"][:] = 0.0
    x, _ = _batch()
    x = x - x.mean(axis=1, keepdims=True)         # window mean 0 -> forecast exactly 0
    assert cd_loss(x, np.ones((5, 8, 6)), p) == pytest.approx(1.0, abs=1e-15)


def test_cd_loss_loop_oracle():
    p = init_params(_cfg(mixing_mode="mlp_mix", adapter_enabled=True), 1)
    x, y = _batch(1)
    pred = forward(x, p)
    total = 0.0
    for i in range(5):
        for h in range(8):
            for c in range(6):
                total += (y[i, h, c] - pred[i, h, c]) ** 2
    assert abs(cd_loss(x, y, p) - total / (5 * 8 * 6)) < 1e-12


def test_cd_loss_empty_batch():
    with pytest.raises(ValueError):
        cd_loss(np.zeros((0, 24, 6)), np.zeros((0, 8, 6)), init_params(_cfg(), 0))


def test_ci_loss_requires_per_channel():
    x, y = _batch()
    with pytest.raises(ValueError):
        ci_loss(x, y, init_params(_cfg(), 0))


def test_ci_loss_perfect_is_zero():
    p = init_params(_cfg(embedding_mode="per_channel"), 0)
    x, _ = _batch()
    assert ci_loss(x, forward(x, p), p) == pytest.approx(0.0, abs=1e-28)


def test_ci_loss_channel_averaging():
    p = init_params(_cfg(C=2, embedding_mode="per_channel"), 0)
    x, _ = _batch(C=2)
    y = forward(x, p)
    y[:, :, 1] += 1.0
    assert ci_loss(x, y, p) == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_ci_loss_tied_equals_cd_loss(seed):
    shared = init_params(_cfg(), seed)
    tensors = dict(shared.tensors)
    tensors["embed.weight"] = np.stack([shared["embed.weight"]] * 6)
    tensors["embed.bias"] = np.stack([shared["embed.bias"]] * 6)
    tied = ParamSet(_cfg(embedding_mode="per_channel"), tensors)
    x, y = _batch(seed)
    assert abs(ci_loss(x, y, tied) - cd_loss(x, y, shared)) < 1e-12


def test_loss_non_negative_and_zero_iff_exact():
    p = init_params(_cfg(), 0)
    x, y = _batch()
    assert cd_loss(x, y, p) > 0
    y2 = forward(x, p)
    y2[0, 0, 0] += 1e-6
    assert cd_loss(x, y2, p) > 0


@pytest.mark.parametrize("mixing", ["none", "mlp_mix", "attention"])
def test_tiny_adam_step_descends(mixing):
    p = init_params(_cfg(mixing_mode=mixing, adapter_enabled=True), 2)
    x, y = _batch(2)
    before, grads = loss_and_grad(p, x, y)
    for k in p.tensors:
        p.tensors[k] = adam_step(p[k], grads[k], AdamState.zeros_like(p[k], lr=1e-8))
    assert cd_loss(x, y, p) <= before + 1e-12


def _windows(seed=0, C=3, T=24, H=8, n=600):
    ds = generate_synthetic(SynthConfig(C=C, T_total=n, seed=seed))
    return prepare(ds, T, H)


def test_fit_zero_learning_rate_is_noop():
    data = _windows()
    cfg = _cfg(C=3)
    params, rec = fit(data.train, data.val, cfg, TrainConfig(epochs=1, learning_rate=0.0, seed=4))
    assert len(rec.epochs) == 1
    assert param_hash(params) == param_hash(init_params(cfg, 4))


def test_fit_deterministic():
    data = _windows()
    cfg = _cfg(C=3, mixing_mode="attention", adapter_enabled=True)
    tc = TrainConfig(epochs=3, seed=9)
    a, ra = fit(data.train, data.val, cfg, tc)
    b, rb = fit(data.train, data.val, cfg, tc)
    assert param_hash(a) == param_hash(b)
    assert [e["val_mse"] for e in ra.epochs] == [e["val_mse"] for e in rb.epochs]


def test_fit_learns_realizable_linear_map():
    rng = np.random.default_rng(0)
    T, H, C, n = 8, 2, 2, 256
    M = rng.uniform(0.0, 1.0, (H, T))
    M /= M.sum(axis=1, keepdims=True)    # rows sum to 1 so the window mean passes through RevIN
    x = rng.standard_normal((n, T, C))
    y = np.einsum("ht,ntc->nhc", M, x)
    train = Windows(x, y, np.arange(n))
    cfg = ModelConfig(T=T, H=H, C=C, D=32, L=0)
    params, rec = fit(train, train, cfg, TrainConfig(epochs=200, learning_rate=3e-3, early_stop_patience=200))
    assert mse(params, train) < 1e-3


def test_fit_best_validation_checkpoint_and_early_stop():
    data = _windows()
    params, rec = fit(data.train, data.val, _cfg(C=3), TrainConfig(epochs=40, learning_rate=0.05,
                                                                    early_stop_patience=2))
    assert mse(params, data.val) == pytest.approx(rec.best_val_mse, abs=1e-12)
    if rec.stopped_early:
        assert len(rec.epochs) == rec.best_epoch + 2


def test_fit_divergence_reports_position():
    data = _windows()
    x = data.train.x.copy()
    x[:] = np.nan
    bad = Windows(x, data.train.y, data.train.origins)
    with pytest.raises(DivergenceError) as err:
        fit(bad, data.val, _cfg(C=3), TrainConfig(epochs=1))
    assert err.value.epoch == 1 and err.value.batch == 0


def test_record_jsonl():
    data = _windows()
    _, rec = fit(data.train, data.val, _cfg(C=3), TrainConfig(epochs=2))
    lines = rec.to_jsonl().splitlines()
    assert len(lines) == 2 and '"train_mse"' in lines[0] and '"seconds"' in lines[0]


def test_finetune_zero_epochs_returns_fresh_adapters():
    data = _windows()
    cfg = _cfg(C=3, adapter_enabled=True)
    pre = init_params(cfg, 1)
    tuned, rec = finetune_adapters(pre, data.train, data.val, TrainConfig(epochs=0, seed=5))
    assert rec.epochs == []
    assert param_hash(tuned, pre.backbone_names()) == param_hash(pre, pre.backbone_names())
    assert param_hash(tuned) == param_hash(fresh_adapters(pre, 5))


@pytest.mark.parametrize("mixing", ["none", "attention"])
def test_finetune_freezes_backbone(mixing):
    data = _windows()
    cfg = _cfg(C=3, adapter_enabled=True, mixing_mode=mixing)
    pre, _ = fit(data.train, data.val, cfg, TrainConfig(epochs=2))
    names = pre.backbone_names()
    before = param_hash(pre, names)
    tuned, rec = finetune_adapters(pre, data.train, data.val, TrainConfig(epochs=3, learning_rate=1e-2))
    assert param_hash(tuned, names) == before
    assert param_hash(pre, names) == before
    start = fresh_adapters(pre, 0)
    assert not np.array_equal(tuned["adapter.phi"], start["adapter.phi"])
    assert rec.n_trainable == start["adapter.phi"].size + start["adapter.W"].size


def test_finetune_to_different_channel_count():
    pre = init_params(_cfg(C=3, adapter_enabled=True), 0)
    data = _windows(C=5)
    tuned, _ = finetune_adapters(pre, data.train, data.val, TrainConfig(epochs=1))
    assert tuned.config.C == 5 and tuned["adapter.phi"].shape[0] == 5


def test_finetune_rejects_incompatible_windows():
    pre = init_params(_cfg(C=3, adapter_enabled=True), 0)
    data = _windows(T=12)
    with pytest.raises(Exception, match="T, H"):
        finetune_adapters(pre, data.train, data.val, TrainConfig(epochs=1))


def test_finetune_requires_adapter():
    data = _windows()
    with pytest.raises(ValueError):
        finetune_adapters(init_params(_cfg(C=3), 0), data.train, data.val, TrainConfig(epochs=1))
