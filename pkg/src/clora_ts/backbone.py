"""Forecasting backbone: RevIN -> token embedding -> [adapter] -> mixing -> projection.

All functions operate on a single window ``x`` of shape (T, C) or on a batch of
shape (N, T, C); outputs keep the leading axes.  Gradients are hand-derived in
:func:`backward` and checked against finite differences in the test-suite.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import adapters
from .adapters import AdapterBank
from .numkernel import ShapeError, relu

STD_FLOOR = 1e-8
EMBEDDING_MODES = ("shared", "per_channel")
MIXING_MODES = ("none", "mlp_mix", "attention")


@dataclass(frozen=True)
class ModelConfig:
    T: int = 96
    H: int = 24
    C: int = 8
    D: int = 64
    d: int = 16
    r: int = 4
    L: int = 2
    embedding_mode: str = "shared"
    mixing_mode: str = "none"
    adapter_enabled: bool = False

    def __post_init__(self) -> None:
        if min(self.T, self.H, self.C, self.D) < 1:
            raise ValueError(f"T, H, C, D must be positive: {self}")
        if self.T < 2:
            raise ValueError("look-back T must be at least 2 for per-window normalization")
        if self.embedding_mode not in EMBEDDING_MODES:
            raise ValueError(f"embedding_mode must be one of {EMBEDDING_MODES}")
        if self.mixing_mode not in MIXING_MODES:
            raise ValueError(f"mixing_mode must be one of {MIXING_MODES}")
        if self.L < 0:
            raise ValueError("L must be non-negative")
        if self.adapter_enabled and not (1 <= self.r <= self.D and self.d >= 1):
            raise ValueError(f"adapter needs 1 <= r <= D and d >= 1, got r={self.r}, D={self.D}, d={self.d}")

    @property
    def depth(self) -> int:
        return 0 if self.mixing_mode == "none" else self.L

    @property
    def D_eff(self) -> int:
        return self.D + self.d if self.adapter_enabled else self.D

    def replace(self, **changes: Any) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape of every trainable tensor, in canonical order."""
    T, H, C, D, De = config.T, config.H, config.C, config.D, config.D_eff
    shapes: dict[str, tuple[int, ...]] = {}
    if config.embedding_mode == "shared":
        shapes["embed.weight"] = (T, D)
        shapes["embed.bias"] = (D,)
    else:
        shapes["embed.weight"] = (C, T, D)
        shapes["embed.bias"] = (C, D)
    if config.adapter_enabled:
        shapes["adapter.phi"] = (C, config.r, D)
        shapes["adapter.W"] = (config.r, config.d)
    for l in range(config.depth):
        if config.mixing_mode == "mlp_mix":
            shapes[f"mix.{l}.chan.weight"] = (C, C)
            shapes[f"mix.{l}.chan.bias"] = (C,)
            shapes[f"mix.{l}.feat.weight"] = (De, De)
            shapes[f"mix.{l}.feat.bias"] = (De,)
        else:
            for p in ("q", "k", "v", "o"):
                shapes[f"mix.{l}.{p}.weight"] = (De, De)
                if p != "k":  # a key bias shifts every score in a row equally: softmax ignores it
                    shapes[f"mix.{l}.{p}.bias"] = (De,)
    shapes["proj.weight"] = (De, H)
    shapes["proj.bias"] = (H,)
    return shapes


def total_param_count(config: ModelConfig) -> int:
    return int(sum(np.prod(s) for s in param_shapes(config).values()))


def _init_std(name: str, shape: tuple[int, ...], config: ModelConfig) -> float:
    if name.endswith(".bias"):
        return 0.0
    if name == "adapter.phi":
        return 1.0 / np.sqrt(config.r)
    if name == "adapter.W":
        return 1.0 / np.sqrt(config.d)
    if name.startswith("mix.") and name.endswith((".chan.weight", ".feat.weight", ".o.weight")):
        # residual branches start small
        return 0.1 / np.sqrt(shape[-2])
    return 1.0 / np.sqrt(shape[-2])


@dataclass
class ParamSet:
    config: ModelConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        expected = param_shapes(self.config)
        if list(self.tensors) != list(expected):
            missing = set(expected) ^ set(self.tensors)
            if missing:
                raise ShapeError(f"parameter names do not match config: {sorted(missing)}")
            self.tensors = {k: self.tensors[k] for k in expected}
        for name, shape in expected.items():
            arr = np.asarray(self.tensors[name], dtype=np.float64)
            if arr.shape != shape:
                raise ShapeError(f"{name}: shape {arr.shape}, expected {shape}")
            self.tensors[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def copy(self) -> "ParamSet":
        return ParamSet(self.config, {k: v.copy() for k, v in self.tensors.items()})

    @property
    def n_params(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))

    @property
    def bank(self) -> AdapterBank | None:
        if not self.config.adapter_enabled:
            return None
        return AdapterBank(self.tensors["adapter.phi"], self.tensors["adapter.W"])

    def block(self, l: int) -> dict[str, np.ndarray]:
        prefix = f"mix.{l}."
        return {k[len(prefix):]: v for k, v in self.tensors.items() if k.startswith(prefix)}

    def backbone_names(self) -> list[str]:
        return [k for k in self.tensors if not k.startswith("adapter.")]

    def adapter_names(self) -> list[str]:
        return [k for k in self.tensors if k.startswith("adapter.")]


def init_params(config: ModelConfig, seed: int = 0, only: list[str] | None = None) -> ParamSet:
    """Gaussian weights, zero biases.  Draw order follows :func:`param_shapes`."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(config).items():
        draw = rng.standard_normal(shape)
        if only is None or name in only:
            std = _init_std(name, shape, config)
            tensors[name] = draw * std if std else np.zeros(shape)
    if only is not None:
        return tensors  # type: ignore[return-value]
    return ParamSet(config, tensors)


# -- reversible instance normalization ------------------------------------------

@dataclass(frozen=True)
class RevInState:
    mean: np.ndarray  # (..., 1, C)
    std: np.ndarray   # (..., 1, C)


def revin_normalize(x: np.ndarray) -> tuple[np.ndarray, RevInState]:
    """Z-score each channel of each window with its own statistics."""
    # C order fixes the reduction order per channel, whatever the channel position
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape[-2] < 2:
        raise ShapeError("per-window normalization needs at least two time steps")
    mean = x.mean(axis=-2, keepdims=True)
    std = np.maximum(x.std(axis=-2, keepdims=True), STD_FLOOR)
    return (x - mean) / std, RevInState(mean, std)


def revin_denormalize(y_norm: np.ndarray, state: RevInState) -> np.ndarray:
    if y_norm.shape[-1] != state.mean.shape[-1]:
        raise ShapeError(f"{y_norm.shape[-1]} channels to denormalize, state has {state.mean.shape[-1]}")
    return y_norm * state.std + state.mean


# -- template stages ---------------------------------------------------------------

def _embed_pre(xbar: np.ndarray, params: ParamSet) -> np.ndarray:
    cfg = params.config
    if xbar.shape[-2:] != (cfg.T, cfg.C):
        raise ShapeError(f"input window {xbar.shape[-2:]} does not match (T, C) = {(cfg.T, cfg.C)}")
    xt = np.swapaxes(xbar, -1, -2)  # (..., C, T)
    We, be = params["embed.weight"], params["embed.bias"]
    if cfg.embedding_mode == "shared":
        return xt @ We + be
    # per-channel: move C to the front so matmul pairs channel c with map c
    xc = np.moveaxis(xt, -2, 0)[..., None, :]          # (C, ..., 1, T)
    out = (xc @ We.reshape((cfg.C,) + (1,) * (xt.ndim - 2) + We.shape[1:]))[..., 0, :]
    return np.moveaxis(out, 0, -2) + be                 # (..., C, D)


def token_embed(xbar: np.ndarray, params: ParamSet) -> np.ndarray:
    """Per-channel tokens (..., C, D) from normalized windows (..., T, C)."""
    return relu(_embed_pre(xbar, params))


def _linear(z: np.ndarray, p: dict[str, np.ndarray], key: str) -> np.ndarray:
    out = z @ p[f"{key}.weight"]
    bias = p.get(f"{key}.bias")
    return out if bias is None else out + bias


def _softmax(s: np.ndarray) -> np.ndarray:
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _mlp_block(Z, p):
    A = np.swapaxes(Z, -1, -2) @ p["chan.weight"] + p["chan.bias"]      # (..., De, C)
    Z1 = Z + np.swapaxes(relu(A), -1, -2)
    B = _linear(Z1, p, "feat")
    return Z1 + relu(B), {"A": A, "Z1": Z1, "B": B}


def _attention_block(Z, p):
    De = Z.shape[-1]
    Q, K, V = _linear(Z, p, "q"), _linear(Z, p, "k"), _linear(Z, p, "v")
    att = _softmax(Q @ np.swapaxes(K, -1, -2) / np.sqrt(De))            # (..., C, C)
    O = att @ V
    return Z + _linear(O, p, "o"), {"Q": Q, "K": K, "V": V, "att": att, "O": O}


def channel_mixing_block(Z: np.ndarray, block_params: dict[str, np.ndarray], mode: str,
                         return_attention: bool = False):
    """One residual mixing block over the channel tokens ``Z`` (..., C, D_eff).

    ``mlp_mix`` mixes along the channel axis and then along the feature axis;
    ``attention`` is single-head softmax attention across channel tokens.  With
    ``return_attention`` the (..., C, C) attention matrix is returned as well
    (``None`` for ``mlp_mix``).
    """
    if mode == "mlp_mix":
        out, cache = _mlp_block(Z, block_params)
    elif mode == "attention":
        out, cache = _attention_block(Z, block_params)
    else:
        raise ValueError(f"no mixing block for mode {mode!r}")
    if return_attention:
        return out, cache.get("att")
    return out


def project(Z: np.ndarray, params: ParamSet) -> np.ndarray:
    """Map each channel row (D_eff) to the horizon; returns (..., H, C)."""
    Wp = params["proj.weight"]
    if Z.shape[-1] != Wp.shape[0]:
        raise ShapeError(f"token width {Z.shape[-1]} does not match projection {Wp.shape}")
    return np.swapaxes(Z @ Wp + params["proj.bias"], -1, -2)


# -- full model --------------------------------------------------------------------

def forward_cached(x: np.ndarray, params: ParamSet) -> tuple[np.ndarray, dict]:
    cfg = params.config
    xbar, state = revin_normalize(x)
    P = _embed_pre(xbar, params)
    Z_tok = relu(P)
    cache: dict[str, Any] = {"xbar": xbar, "state": state, "P": P, "Z_tok": Z_tok, "blocks": []}
    Z = Z_tok
    if cfg.adapter_enabled:
        pre = adapters.effective_adapter_pre(params["adapter.phi"], params["adapter.W"])
        tilde = relu(pre)
        Z = np.concatenate([Z_tok, adapters.adapt_tokens(Z_tok, tilde)], axis=-1)
        cache.update(adapter_pre=pre, adapter_tilde=tilde)
    for l in range(cfg.depth):
        block = params.block(l)
        Z_in = Z
        if cfg.mixing_mode == "mlp_mix":
            Z, bc = _mlp_block(Z, block)
        else:
            Z, bc = _attention_block(Z, block)
        bc["Z_in"] = Z_in
        cache["blocks"].append(bc)
    cache["Z_out"] = Z
    y_norm = project(Z, params)
    return revin_denormalize(y_norm, state), cache


def forward(x: np.ndarray, params: ParamSet) -> np.ndarray:
    """Forecast (..., H, C) in the same units as ``x``."""
    return forward_cached(x, params)[0]


def attention_maps(x: np.ndarray, params: ParamSet) -> list[np.ndarray]:
    """Channel-attention matrices of every mixing layer for input ``x``."""
    if params.config.mixing_mode != "attention":
        raise ValueError("attention maps exist only for mixing_mode='attention'")
    _, cache = forward_cached(x, params)
    return [b["att"] for b in cache["blocks"]]


def _sum_lead(a: np.ndarray, keep: int) -> np.ndarray:
    """Sum over all leading axes so that ``keep`` trailing axes remain."""
    return a.reshape((-1,) + a.shape[a.ndim - keep:]).sum(axis=0)


def _outer_sum(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """sum_{lead} a[..., i]^T b[..., j] for row-stacked a, b  -> (I, J)."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def backward(cache: dict, d_out: np.ndarray, params: ParamSet) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every tensor, given dLoss/dForecast."""
    cfg = params.config
    grads: dict[str, np.ndarray] = {}
    dYn = np.swapaxes(d_out * cache["state"].std, -1, -2)   # (..., C, H)
    Z = cache["Z_out"]
    grads["proj.weight"] = _outer_sum(Z, dYn)
    grads["proj.bias"] = _sum_lead(dYn, 1)
    dZ = dYn @ params["proj.weight"].T

    for l in reversed(range(cfg.depth)):
        bc = cache["blocks"][l]
        p = params.block(l)
        pre = f"mix.{l}."
        if cfg.mixing_mode == "mlp_mix":
            dB = dZ * (bc["B"] > 0)
            grads[pre + "feat.weight"] = _outer_sum(bc["Z1"], dB)
            grads[pre + "feat.bias"] = _sum_lead(dB, 1)
            dZ1 = dZ + dB @ p["feat.weight"].T
            dA = np.swapaxes(dZ1, -1, -2) * (bc["A"] > 0)                # (..., De, C)
            U = np.swapaxes(bc["Z_in"], -1, -2)
            grads[pre + "chan.weight"] = _outer_sum(U, dA)
            grads[pre + "chan.bias"] = _sum_lead(dA, 1)
            dZ = dZ1 + np.swapaxes(dA @ p["chan.weight"].T, -1, -2)
        else:
            Z_in, att, V, Q, K = bc["Z_in"], bc["att"], bc["V"], bc["Q"], bc["K"]
            scale = 1.0 / np.sqrt(Z_in.shape[-1])
            grads[pre + "o.weight"] = _outer_sum(bc["O"], dZ)
            grads[pre + "o.bias"] = _sum_lead(dZ, 1)
            dO = dZ @ p["o.weight"].T
            datt = dO @ np.swapaxes(V, -1, -2)
            dV = np.swapaxes(att, -1, -2) @ dO
            dS = att * (datt - (datt * att).sum(axis=-1, keepdims=True)) * scale
            dQ = dS @ K
            dK = np.swapaxes(dS, -1, -2) @ Q
            d_in = dZ.copy()
            for key, g in (("q", dQ), ("k", dK), ("v", dV)):
                grads[f"{pre}{key}.weight"] = _outer_sum(Z_in, g)
                if key != "k":
                    grads[f"{pre}{key}.bias"] = _sum_lead(g, 1)
                d_in += g @ p[f"{key}.weight"].T
            dZ = d_in

    D = cfg.D
    if cfg.adapter_enabled:
        dZa = dZ[..., D:]
        dZ_tok = dZ[..., :D] + adapters.adapt_tokens(dZa, np.swapaxes(cache["adapter_tilde"], -1, -2))
        # d tilde[c] = sum_lead Z_tok[..., c, :]^T dZa[..., c, :]
        Zt = np.moveaxis(cache["Z_tok"], -2, 0).reshape(cfg.C, -1, D)
        dA = np.moveaxis(dZa, -2, 0).reshape(cfg.C, -1, cfg.d)
        dtilde = np.swapaxes(Zt, -1, -2) @ dA                        # (C, D, d)
        dpre = dtilde * (cache["adapter_pre"] > 0)
        grads["adapter.phi"] = params["adapter.W"] @ np.swapaxes(dpre, -1, -2)   # (C, r, D)
        grads["adapter.W"] = (params["adapter.phi"] @ dpre).sum(axis=0)        # (r, d)
    else:
        dZ_tok = dZ

    dP = dZ_tok * (cache["P"] > 0)                                   # (..., C, D)
    xt = np.swapaxes(cache["xbar"], -1, -2)                          # (..., C, T)
    if cfg.embedding_mode == "shared":
        grads["embed.weight"] = _outer_sum(xt, dP)
        grads["embed.bias"] = _sum_lead(dP, 1)
    else:
        xc = np.moveaxis(xt, -2, 0).reshape(cfg.C, -1, cfg.T)
        dc = np.moveaxis(dP, -2, 0).reshape(cfg.C, -1, D)
        grads["embed.weight"] = np.swapaxes(xc, -1, -2) @ dc
        grads["embed.bias"] = dc.sum(axis=1)
    return {k: grads[k] for k in params.tensors}


def relu_margin(cache: dict) -> float:
    """Smallest |pre-activation| over every ReLU in a cached forward pass.

    Finite-difference checks are only meaningful when no perturbation can
    cross a kink; callers use this to reject unlucky evaluation points.
    """
    pres = [cache["P"]]
    if "adapter_pre" in cache:
        pres.append(cache["adapter_pre"])
    for bc in cache["blocks"]:
        pres.extend(bc[k] for k in ("A", "B") if k in bc)
    return float(min(np.abs(p).min() for p in pres))
