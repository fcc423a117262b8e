import numpy as np
import pytest
from hypothesis import given, strategies as st

from clora_ts.backbone import (ModelConfig, ParamSet, attention_maps, channel_mixing_block, forward, init_params,
                               param_shapes, project, revin_denormalize, revin_normalize, token_embed)
from clora_ts.dataio import SynthConfig, generate_synthetic, make_windows
from clora_ts.numkernel import ShapeError
from helpers import SMALL, STRATEGIES, check_point, model_grad_error, padded_adapter_twin


def _cfg(**kw):
    return ModelConfig(**{**SMALL, **kw})


# -- RevIN -----------------------------------------------------------------------------

def test_revin_fixed_point():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((40, 3))
    x = (x - x.mean(0)) / x.std(0)
    xbar, _ = revin_normalize(x)
    np.testing.assert_allclose(xbar, x, atol=1e-10)


def test_revin_constant_channel():
    x = np.column_stack([np.full(10, 5.0), np.arange(10.0)])
    xbar, state = revin_normalize(x)
    assert np.all(xbar[:, 0] == 0.0)
    assert state.mean[0, 0] == 5.0


def test_revin_moments():
    x = np.random.default_rng(1).standard_normal((5, 30, 4)) * 7 + 3
    xbar, _ = revin_normalize(x)
    np.testing.assert_allclose(xbar.mean(axis=1), 0.0, atol=1e-10)
    np.testing.assert_allclose(xbar.std(axis=1), 1.0, atol=1e-10)


def test_revin_denormalize_affine():
    _, state = revin_normalize(np.array([[1.0], [5.0]]))  # mean 3, std 2
    np.testing.assert_array_equal(revin_denormalize(np.zeros((4, 1)), state), np.full((4, 1), 3.0))


@given(st.integers(0, 10_000))
def test_revin_round_trip(seed):
    x = np.random.default_rng(seed).standard_normal((16, 3)) * 4 - 2
    xbar, state = revin_normalize(x)
    np.testing.assert_allclose(revin_denormalize(xbar, state), x, atol=1e-10, rtol=0)


def test_revin_channel_mismatch():
    _, state = revin_normalize(np.zeros((4, 2)))
    with pytest.raises(ShapeError):
        revin_denormalize(np.zeros((3, 3)), state)


def test_forward_output_in_data_units():
    ds = generate_synthetic(SynthConfig(C=4, T_total=512, seed=0))
    w = make_windows(ds.with_values(ds.values * 10 + 50), 24, 8, "train")
    p = init_params(_cfg(C=4), 0)
    y = forward(w.x, p)
    mean, std = w.x.mean(axis=1), w.x.std(axis=1)
    assert np.all(np.abs(y.mean(axis=1) - mean) <= std)


# -- embedding ----------------------------------------------------------------------------

def test_shared_embedding_identical_channels_identical_rows():
    p = init_params(_cfg(), 0)
    col = np.random.default_rng(2).standard_normal(24)
    xbar = np.tile(col[:, None], (1, 6))
    Z = token_embed(xbar, p)
    for c in range(1, 6):
        np.testing.assert_array_equal(Z[c], Z[0])


def test_per_channel_embedding_individual_rows():
    p = init_params(_cfg(embedding_mode="per_channel"), 0)
    col = np.random.default_rng(2).standard_normal(24)
    Z = token_embed(np.tile(col[:, None], (1, 6)), p)
    assert not np.allclose(Z[0], Z[1])


@pytest.mark.parametrize("mode", ["shared", "per_channel"])
def test_embedding_rows_match_single_channel_oracle(mode):
    p = init_params(_cfg(embedding_mode=mode), 1)
    p.tensors["embed.bias"] = p["embed.bias"] + 0.1
    xbar = np.random.default_rng(3).standard_normal((24, 6))
    Z = token_embed(xbar, p)
    for c in range(6):
        W = p["embed.weight"] if mode == "shared" else p["embed.weight"][c]
        b = p["embed.bias"] if mode == "shared" else p["embed.bias"][c]
        row = [max(0.0, sum(xbar[t, c] * W[t, j] for t in range(24)) + b[j]) for j in range(16)]
        np.testing.assert_allclose(Z[c], row, atol=1e-12)


def test_embedding_shape_mismatch():
    with pytest.raises(ShapeError):
        token_embed(np.zeros((23, 6)), init_params(_cfg(), 0))


def test_per_channel_stores_c_maps():
    shapes = param_shapes(_cfg(embedding_mode="per_channel"))
    assert shapes["embed.weight"] == (6, 24, 16)


# -- mixing ------------------------------------------------------------------------------------

@pytest.mark.parametrize("mode", ["mlp_mix", "attention"])
def test_mixing_zero_weights_is_identity(mode):
    p = init_params(_cfg(mixing_mode=mode), 0)
    block = {k: np.zeros_like(v) for k, v in p.block(0).items()}
    Z = np.random.default_rng(0).standard_normal((6, 16))
    np.testing.assert_array_equal(channel_mixing_block(Z, block, mode), Z)


def test_attention_uniform_scores_closed_form():
    p = init_params(_cfg(mixing_mode="attention"), 4)
    block = dict(p.block(0))
    block["q.weight"] = np.zeros_like(block["q.weight"])
    block["k.weight"] = np.zeros_like(block["k.weight"])
    block["q.bias"] = np.random.default_rng(0).standard_normal(16)
    block["v.bias"] = np.full(16, 0.2)
    block["o.bias"] = np.full(16, -0.1)
    Z = np.random.default_rng(1).standard_normal((6, 16))
    out, att = channel_mixing_block(Z, block, "attention", return_attention=True)
    np.testing.assert_allclose(att, 1.0 / 6, atol=1e-15)
    v_mean = (Z @ block["v.weight"] + block["v.bias"]).mean(axis=0)
    expected = Z + v_mean @ block["o.weight"] + block["o.bias"]
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_attention_rows_sum_to_one():
    p = init_params(_cfg(mixing_mode="attention", adapter_enabled=True), 5)
    x = np.random.default_rng(5).standard_normal((3, 24, 6))
    maps = attention_maps(x, p)
    assert len(maps) == 2
    for a in maps:
        assert a.shape == (3, 6, 6)
        np.testing.assert_allclose(a.sum(axis=-1), 1.0, atol=1e-12)


def test_mixing_block_requires_mode():
    with pytest.raises(ValueError):
        channel_mixing_block(np.zeros((6, 16)), {}, "none")


# -- projection ---------------------------------------------------------------------------------

def test_project_bias_only():
    p = init_params(_cfg(), 0)
    p.tensors["proj.weight"] = np.zeros_like(p["proj.weight"])
    p.tensors["proj.bias"] = np.arange(8.0)
    Y = project(np.random.default_rng(0).standard_normal((6, 16)), p)
    assert Y.shape == (8, 6)
    for c in range(6):
        np.testing.assert_array_equal(Y[:, c], np.arange(8.0))


def test_project_h1_dot_product():
    p = init_params(_cfg(H=1), 0)
    Z = np.random.default_rng(0).standard_normal((6, 16))
    Y = project(Z, p)
    for c in range(6):
        assert Y[0, c] == pytest.approx(float(np.dot(Z[c], p["proj.weight"][:, 0]) + p["proj.bias"][0]), abs=1e-12)


def test_project_row_oracle():
    p = init_params(_cfg(), 2)
    p.tensors["proj.bias"] = np.linspace(-1, 1, 8)
    Z = np.random.default_rng(3).standard_normal((6, 16))
    Y = project(Z, p)
    W = p["proj.weight"]
    for c in range(6):
        for h in range(8):
            assert Y[h, c] == pytest.approx(sum(Z[c, j] * W[j, h] for j in range(16)) + p["proj.bias"][h], abs=1e-12)


def test_project_shape_mismatch():
    with pytest.raises(ShapeError):
        project(np.zeros((6, 15)), init_params(_cfg(), 0))


# -- full forward ------------------------------------------------------------------------------------

def test_forward_constant_prediction():
    p = init_params(_cfg(L=0), 0)
    p.tensors["proj.weight"] = np.zeros_like(p["proj.weight"])
    p.tensors["proj.bias"] = np.full(8, 0.5)
    x = np.random.default_rng(0).standard_normal((24, 6)) * 2 + 1
    expected = 0.5 * x.std(axis=0) + x.mean(axis=0)
    np.testing.assert_allclose(forward(x, p), np.tile(expected, (8, 1)), atol=1e-12)


@pytest.mark.parametrize("mixing", ["none", "mlp_mix"])
def test_null_adapter_equivalence_bitwise(mixing):
    off = init_params(_cfg(mixing_mode=mixing), 3)
    for k, v in off.tensors.items():
        off.tensors[k] = v + 0.05
    on = padded_adapter_twin(off, d=4, r=2)
    x = np.random.default_rng(0).standard_normal((20, 24, 6))
    assert forward(x, on).tobytes() == forward(x, off).tobytes()


def test_forward_deterministic_and_batch_consistent():
    p = init_params(_cfg(mixing_mode="attention", adapter_enabled=True), 1)
    x = np.random.default_rng(0).standard_normal((4, 24, 6))
    assert forward(x, p).tobytes() == forward(x, p).tobytes()
    np.testing.assert_allclose(forward(x[2], p), forward(x, p)[2], atol=1e-12)


@given(st.permutations(range(6)), st.integers(0, 1000))
def test_shared_no_mixing_is_permutation_equivariant(perm, seed):
    p = init_params(_cfg(mixing_mode="none"), seed)
    x = np.random.default_rng(seed).standard_normal((3, 24, 6))
    perm = list(perm)
    assert forward(x[:, :, perm], p).tobytes() == forward(x, p)[:, :, perm].tobytes()


def test_adapter_breaks_equivariance():
    p = init_params(_cfg(adapter_enabled=True), 0)
    x = np.random.default_rng(0).standard_normal((3, 24, 6))
    perm = [1, 0, 2, 3, 4, 5]
    assert not np.allclose(forward(x[:, :, perm], p), forward(x, p)[:, :, perm])


@pytest.mark.parametrize("name", list(STRATEGIES))
def test_full_model_gradients(name):
    cfg = _cfg(**STRATEGIES[name])
    p, x, y = check_point(cfg, seed=0)
    assert model_grad_error(p, x, y) < 1e-4


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(adapter_enabled=True, r=0)
    with pytest.raises(ValueError):
        ModelConfig(adapter_enabled=True, r=65, D=64)
    with pytest.raises(ValueError):
        ModelConfig(mixing_mode="conv")
    assert ModelConfig(mixing_mode="none", L=3).depth == 0


def test_paramset_rejects_wrong_shape():
    p = init_params(_cfg(), 0)
    t = dict(p.tensors)
    t["proj.bias"] = np.zeros(3)
    with pytest.raises(ShapeError):
        ParamSet(p.config, t)
