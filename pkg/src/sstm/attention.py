"""Space-time attention: context supplies queries and keys, motion supplies values."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, getitem, matmul, reshape, softmax, stack, transpose
from .layers import Shapes, Weights


@dataclass
class AttentionWeights:
    wq: Tensor  # L_c x d_k
    wk: Tensor  # L_c x d_k
    wv: Tensor  # L_m x L_m
    alpha: Tensor  # single learnable gain

    def __post_init__(self) -> None:
        if self.wq.shape != self.wk.shape:
            raise ValueError(f"query and key projections differ: {self.wq.shape} vs {self.wk.shape}")
        if self.wv.ndim != 2 or self.wv.shape[0] != self.wv.shape[1]:
            raise ValueError(f"value projection must be square, got {self.wv.shape}")
        if self.alpha.size != 1:
            raise ValueError("alpha must be a single scalar")

    @classmethod
    def from_registry(cls, w: Weights, prefix: str = "attn") -> "AttentionWeights":
        return cls(w[f"{prefix}.wq"], w[f"{prefix}.wk"], w[f"{prefix}.wv"], w[f"{prefix}.alpha"])


def attention_shapes(context_dim: int, motion_dim: int, key_dim: int, prefix: str = "attn") -> Shapes:
    return {
        f"{prefix}.wq": (context_dim, key_dim),
        f"{prefix}.wk": (context_dim, key_dim),
        f"{prefix}.wv": (motion_dim, motion_dim),
        f"{prefix}.alpha": (1,),
    }


def _cols(x: Tensor, lo: int, hi: int) -> Tensor:
    return getitem(x, (slice(None), slice(lo, hi)))


def attention_matrix(context_t: Tensor, aw: AttentionWeights, heads: int = 1) -> list[Tensor]:
    """Row-stochastic ``N x N`` attention over flattened positions, one per head."""
    lc, h, w = context_t.shape
    c = transpose(reshape(context_t, (lc, h * w)), (1, 0))
    q = matmul(c, aw.wq)
    k = matmul(c, aw.wk)
    dk = aw.wq.shape[1]
    if dk % heads:
        raise ValueError(f"key dim {dk} not divisible by {heads} heads")
    step = dk // heads
    out = []
    for i in range(heads):
        qi, ki = (q, k) if heads == 1 else (_cols(q, i * step, (i + 1) * step), _cols(k, i * step, (i + 1) * step))
        logits = matmul(qi, transpose(ki, (1, 0))) * (1.0 / np.sqrt(step))
        out.append(softmax(logits, axis=1))
    return out


def attend(context_t: Tensor, motion_t: Tensor, aw: AttentionWeights, heads: int = 1) -> Tensor:
    """Aggregated motion ``Y = M + alpha * softmax(q k^T / sqrt(d_k)) (M W_v)`` for one window."""
    if context_t.shape[1:] != motion_t.shape[1:]:
        raise ValueError(f"spatial extents differ: {context_t.shape} vs {motion_t.shape}")
    if context_t.shape[0] != aw.wq.shape[0] or motion_t.shape[0] != aw.wv.shape[0]:
        raise ValueError("channel counts do not match the attention projections")
    lm, h, w = motion_t.shape
    m = transpose(reshape(motion_t, (lm, h * w)), (1, 0))
    v = matmul(m, aw.wv)
    attn = attention_matrix(context_t, aw, heads)
    if heads == 1:
        agg = matmul(attn[0], v)
    else:
        if lm % heads:
            raise ValueError(f"motion dim {lm} not divisible by {heads} heads")
        step = lm // heads
        agg = concat([matmul(a, _cols(v, i * step, (i + 1) * step)) for i, a in enumerate(attn)], axis=1)
    y = m + aw.alpha * agg
    return reshape(transpose(y, (1, 0)), (lm, h, w))


def attend_windows(context: Tensor, motion: Tensor, aw: AttentionWeights, heads: int = 1) -> Tensor:
    """Attend separately inside each time window of ``C x T x h x w`` inputs."""
    if context.shape[1] != motion.shape[1]:
        raise ValueError("context and motion must have the same number of windows")
    ys = [
        attend(getitem(context, (slice(None), t)), getitem(motion, (slice(None), t)), aw, heads)
        for t in range(context.shape[1])
    ]
    return stack(ys, axis=1)


def aggregate_gru_input(context: Tensor, y: Tensor, motion: Tensor) -> Tensor:
    """``[context | Y | M]`` per window, windows kept on the time axis."""
    if not (context.shape[1:] == y.shape[1:] == motion.shape[1:]):
        raise ValueError(f"shape mismatch: {context.shape}, {y.shape}, {motion.shape}")
    return concat([context, y, motion], axis=0)
