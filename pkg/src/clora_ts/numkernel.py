"""Dense float64 kernel: matmul, ReLU, Adam and finite-difference gradient checks.

Matrices are plain ``numpy.ndarray`` objects of dtype float64.  Functions that
accept "a matrix" also accept stacks of matrices (leading batch axes) wherever
numpy broadcasting makes that meaningful; the model code relies on this.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

Matrix = np.ndarray
Params = dict[str, np.ndarray]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class NumericError(ArithmeticError):
    """Raised when a computation produces a non-finite value."""


def as_matrix(data, rows: int | None = None, cols: int | None = None) -> Matrix:
    a = np.asarray(data, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {a.shape}")
    if rows is not None and a.shape[0] != rows or cols is not None and a.shape[1] != cols:
        raise ShapeError(f"expected shape ({rows}, {cols}), got {a.shape}")
    return a


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product ``a @ b`` with an explicit shape check.

    The inner loop is delegated to numpy.  Against a plain triple loop that
    accumulates in ascending inner index the result agrees to ~1e-12 for
    O(1) operands; identical inputs always give bitwise identical outputs.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def relu(a: Matrix) -> Matrix:
    return np.maximum(np.asarray(a, dtype=np.float64), 0.0)


def relu_mask(pre: Matrix) -> Matrix:
    """Derivative of ReLU evaluated at ``pre`` (0 at the kink)."""
    return (pre > 0.0).astype(np.float64)


@dataclass
class AdamState:
    """Per-parameter Adam moments.  Mutated in place by :func:`adam_step`."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.eps <= 0.0:
            raise ValueError("eps must be positive")
        if self.first_moment.shape != self.second_moment.shape:
            raise ShapeError("moment arrays differ in shape")

    @classmethod
    def zeros_like(cls, param: np.ndarray, **hyper) -> "AdamState":
        return cls(np.zeros_like(param, dtype=np.float64), np.zeros_like(param, dtype=np.float64), **hyper)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState) -> np.ndarray:
    """One bias-corrected Adam update; returns the new parameter array.

    ``state`` is updated in place (moments and ``step_count``).
    """
    if param.shape != grad.shape or param.shape != state.first_moment.shape:
        raise ShapeError(
            f"param {param.shape}, grad {grad.shape} and state {state.first_moment.shape} must match"
        )
    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    state.first_moment = b1 * state.first_moment + (1.0 - b1) * grad
    state.second_moment = b2 * state.second_moment + (1.0 - b2) * grad * grad
    m_hat = state.first_moment / (1.0 - b1 ** state.step_count)
    v_hat = state.second_moment / (1.0 - b2 ** state.step_count)
    return param - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def grad_check(
    loss_fn: Callable[[Params], float],
    grad_fn: Callable[[Params], Mapping[str, np.ndarray]],
    params: Mapping[str, np.ndarray],
    eps: float = 1e-4,
    names: list[str] | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Every coordinate of every tensor in ``params`` (or only those in ``names``)
    is perturbed by ``±eps``.  The relative error per coordinate is
    ``|g - n| / max(1e-8, |g| + |n|)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    base = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    analytic = grad_fn(base)
    worst = 0.0
    for name in names if names is not None else list(base):
        tensor = base[name]
        g = np.asarray(analytic[name], dtype=np.float64)
        if g.shape != tensor.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, expected {tensor.shape}")
        flat = tensor.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn(base))
            flat[i] = orig - eps
            down = float(loss_fn(base))
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"non-finite loss while perturbing {name}[{i}]")
            numeric = (up - down) / (2.0 * eps)
            a = g.reshape(-1)[i]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst
