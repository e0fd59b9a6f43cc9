"""Pre-norm attention building blocks shared by the compressor and encoder."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, add, attention, gelu, layer_norm, matmul


def _linear_weight(rng: np.random.Generator, shape) -> Tensor:
    return Tensor(rng.normal(0.0, 0.02, shape), requires_grad=True)


def _ones(n: int) -> Tensor:
    return Tensor(np.ones(n), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class SelfAttentionBlock:
    """Pre-norm self-attention followed by a pre-norm 4x feed-forward."""

    def __init__(self, channels: int, heads: int, rng: np.random.Generator):
        self.channels = channels
        self.heads = heads
        c = channels
        self.ln1_g, self.ln1_b = _ones(c), _zeros(c)
        self.wq = _linear_weight(rng, (c, c))
        self.wk = _linear_weight(rng, (c, c))
        self.wv = _linear_weight(rng, (c, c))
        self.wo = _linear_weight(rng, (c, c))
        self.ln2_g, self.ln2_b = _ones(c), _zeros(c)
        self.w1 = _linear_weight(rng, (c, 4 * c))
        self.b1 = _zeros(4 * c)
        self.w2 = _linear_weight(rng, (4 * c, c))
        self.b2 = _zeros(c)

    def forward(self, x: Tensor) -> Tensor:
        h = layer_norm(x, self.ln1_g, self.ln1_b)
        x = add(x, attention(h, h, h, self.heads, self.wq, self.wk, self.wv, self.wo))
        h = layer_norm(x, self.ln2_g, self.ln2_b)
        h = add(matmul(gelu(add(matmul(h, self.w1), self.b1)), self.w2), self.b2)
        return add(x, h)

    def named_parameters(self, prefix: str = ""):
        for name in ("ln1_g", "ln1_b", "wq", "wk", "wv", "wo", "ln2_g", "ln2_b", "w1", "b1", "w2", "b2"):
            yield f"{prefix}{name}", getattr(self, name)


class CrossAttention:
    """Pre-norm cross-attention with a residual connection on the query side."""

    def __init__(self, channels: int, heads: int, rng: np.random.Generator):
        self.channels = channels
        self.heads = heads
        c = channels
        self.ln_q_g, self.ln_q_b = _ones(c), _zeros(c)
        self.ln_kv_g, self.ln_kv_b = _ones(c), _zeros(c)
        self.wq = _linear_weight(rng, (c, c))
        self.wk = _linear_weight(rng, (c, c))
        self.wv = _linear_weight(rng, (c, c))
        self.wo = _linear_weight(rng, (c, c))

    def forward(self, queries: Tensor, context: Tensor) -> Tensor:
        q = layer_norm(queries, self.ln_q_g, self.ln_q_b)
        kv = layer_norm(context, self.ln_kv_g, self.ln_kv_b)
        return add(queries, attention(q, kv, kv, self.heads, self.wq, self.wk, self.wv, self.wo))

    def named_parameters(self, prefix: str = ""):
        for name in ("ln_q_g", "ln_q_b", "ln_kv_g", "ln_kv_b", "wq", "wk", "wv", "wo"):
            yield f"{prefix}{name}", getattr(self, name)
