import numpy as np

from clora_ts.backbone import ModelConfig, ParamSet, backward, forward, forward_cached, init_params, relu_margin
from clora_ts.numkernel import grad_check

SMALL = dict(T=24, H=8, C=6, D=16, d=4, r=2, L=2)

STRATEGIES = {
    "none+adapter": dict(mixing_mode="none", adapter_enabled=True),
    "mlp+adapter": dict(mixing_mode="mlp_mix", adapter_enabled=True),
    "attention+adapter": dict(mixing_mode="attention", adapter_enabled=True),
    "per_channel": dict(embedding_mode="per_channel", mixing_mode="none", adapter_enabled=False),
}


def triple_loop_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for p in range(k):
                s += a[i, p] * b[p, j]
            out[i, j] = s
    return out


def check_point(cfg: ModelConfig, seed: int, n_samples: int = 2, margin: float = 5e-4):
    """Seeded (params, x, y) whose ReLU pre-activations all clear ``margin``.

    Params are shifted by +0.01 so that zero biases do not sit on kinks; points
    that still land within ``margin`` of a kink are redrawn from the next
    sub-seed.
    """
    for sub in range(1000):
        rng = np.random.default_rng([seed, sub])
        p = init_params(cfg, seed)
        for k, v in p.tensors.items():
            scale = 0.3 if v.ndim == 1 else 1.0 / np.sqrt(v.shape[-2])
            p.tensors[k] = 0.01 + rng.standard_normal(v.shape) * scale
        x = rng.standard_normal((n_samples, cfg.T, cfg.C))
        y = rng.standard_normal((n_samples, cfg.H, cfg.C))
        _, cache = forward_cached(x, p)
        if relu_margin(cache) >= margin:
            return p, x, y
    raise RuntimeError("no kink-free point found")


def model_grad_error(params: ParamSet, x, y, eps: float = 1e-4) -> float:
    cfg = params.config

    def loss(t):
        return float(np.mean((forward(x, ParamSet(cfg, t)) - y) ** 2))

    def grad(t):
        ps = ParamSet(cfg, t)
        y_hat, cache = forward_cached(x, ps)
        return backward(cache, 2.0 * (y_hat - y) / y_hat.size, ps)

    return grad_check(loss, grad, params.tensors, eps=eps)


def padded_adapter_twin(off: ParamSet, d: int, r: int) -> ParamSet:
    """Adapter-enabled copy of ``off`` with a zero bank and zero-padded widened weights."""
    from clora_ts.backbone import param_shapes

    cfg = off.config.replace(adapter_enabled=True, d=d, r=r)
    tensors = {}
    for name, shape in param_shapes(cfg).items():
        z = np.zeros(shape)
        if name in off.tensors:
            a = off[name]
            z[tuple(slice(0, s) for s in a.shape)] = a
        tensors[name] = z
    return ParamSet(cfg, tensors)
