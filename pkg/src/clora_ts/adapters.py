"""Channel-aware low-rank adapters.

Each channel ``c`` owns a rank-``r`` factor ``phi[c]`` of shape (r, D).  A single
matrix ``W`` of shape (r, d) is shared by all channels.  The effective adapter
``relu(phi[c].T @ W)`` maps the shared D-dimensional token of channel ``c`` to
a d-dimensional channel-specific slice, which is appended to the token.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numkernel import ShapeError, matmul, relu


@dataclass
class AdapterBank:
    phi: np.ndarray  # (C, r, D)
    W: np.ndarray    # (r, d)

    def __post_init__(self) -> None:
        if self.phi.ndim != 3 or self.W.ndim != 2:
            raise ShapeError(f"phi must be (C, r, D) and W (r, d); got {self.phi.shape}, {self.W.shape}")
        if self.phi.shape[1] != self.W.shape[0]:
            raise ShapeError(f"rank mismatch: phi {self.phi.shape} vs W {self.W.shape}")

    @property
    def n_channels(self) -> int:
        return self.phi.shape[0]

    @property
    def rank(self) -> int:
        return self.W.shape[0]

    @property
    def n_params(self) -> int:
        return self.phi.size + self.W.size

    @classmethod
    def zeros(cls, C: int, r: int, D: int, d: int) -> "AdapterBank":
        return cls(np.zeros((C, r, D)), np.zeros((r, d)))


def effective_adapter_pre(phi: np.ndarray, W: np.ndarray) -> np.ndarray:
    """``phi.T @ W`` before the ReLU; ``phi`` may carry a leading channel axis."""
    if phi.shape[-2] != W.shape[0]:
        raise ShapeError(f"rank mismatch: phi {phi.shape} vs W {W.shape}")
    if phi.ndim == 3:
        # one product per channel, so a stack matches its channels bit for bit
        return np.stack([matmul(p.T, W) for p in phi])
    return matmul(np.swapaxes(phi, -1, -2), W)


def effective_adapter(phi: np.ndarray, W: np.ndarray) -> np.ndarray:
    """(D, d) effective adapter ``relu(phi.T @ W)`` (or a (C, D, d) stack)."""
    return relu(effective_adapter_pre(phi, W))


def apply_adapter(z: np.ndarray, phi_tilde: np.ndarray) -> np.ndarray:
    """Row vector(s) ``z`` (..., D) times the (D, d) effective adapter."""
    if z.shape[-1] != phi_tilde.shape[-2]:
        raise ShapeError(f"token width {z.shape[-1]} does not match adapter {phi_tilde.shape}")
    return z @ phi_tilde


def adapt_tokens(Z: np.ndarray, phi_tilde: np.ndarray) -> np.ndarray:
    """Channel-wise adaptation of tokens ``Z`` (..., C, D) with a (C, D, d) stack."""
    if Z.shape[-2] != phi_tilde.shape[0]:
        raise ShapeError(f"{Z.shape[-2]} token rows but {phi_tilde.shape[0]} channel adapters")
    # per-channel apply_adapter calls keep the slice contract exact
    return np.stack([apply_adapter(Z[..., c, :], phi_tilde[c]) for c in range(phi_tilde.shape[0])], axis=-2)


def assemble_embedding(Z_tok: np.ndarray, bank: AdapterBank) -> np.ndarray:
    """Concatenate shared tokens with their channel adaptations: (..., C, D + d)."""
    if Z_tok.shape[-2] != bank.n_channels:
        raise ShapeError(f"tokens have {Z_tok.shape[-2]} channels, adapter bank has {bank.n_channels}")
    return np.concatenate([Z_tok, adapt_tokens(Z_tok, effective_adapter(bank.phi, bank.W))], axis=-1)


def extra_param_count(C: int, r: int, D: int, d: int) -> int:
    """Parameters added by the adapter bank alone: ``C*r*D + r*d``."""
    if min(C, r, D, d) < 1:
        raise ValueError(f"C, r, D, d must all be >= 1, got {(C, r, D, d)}")
    return C * r * D + r * d
