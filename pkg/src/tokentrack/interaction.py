"""Template/search interaction encoder.

Each interaction block runs four stages: template tokens query the search
tokens (cross-attention), a stack of joint self-attention blocks runs over the
concatenation, search tokens query the refreshed template tokens, and a
convolutional feed-forward pass refines the search tokens on their 2-D grid.
Template state is threaded forward between stacked blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import CrossAttention, SelfAttentionBlock, _linear_weight, _zeros
from .tensor import (
    ShapeError,
    Tensor,
    add,
    concat,
    gelu,
    matmul,
    mul,
    narrow,
    pad2d,
    reshape,
    transpose,
)


@dataclass(frozen=True)
class InteractionConfig:
    channels: int = 256
    heads: int = 8
    inner_blocks: int = 4
    num_blocks: int = 3
    search_grid: tuple[int, int] = (14, 14)
    cross_attention: bool = True

    def __post_init__(self):
        if self.inner_blocks < 1:
            raise ValueError(f"inner_blocks must be >= 1, got {self.inner_blocks}")

    @property
    def search_tokens(self) -> int:
        return self.search_grid[0] * self.search_grid[1]


@dataclass
class EncoderState:
    """Template and search token rows carried through the encoder."""

    template: Tensor  # [K x C]
    search: Tensor  # [N x C]


def depthwise_conv3x3(x: Tensor, kernel: Tensor) -> Tensor:
    """Per-channel 3x3 convolution with zero padding on a [C x h x w] map."""
    c, h, w = x.shape
    if kernel.shape != (c, 3, 3):
        raise ShapeError(f"depthwise kernel must be [{c} x 3 x 3], got {kernel.shape}")
    xp = pad2d(x, 1)
    out = None
    for di in range(3):
        for dj in range(3):
            window = narrow(narrow(xp, 1, di, h), 2, dj, w)
            tap = narrow(narrow(kernel, 1, di, 1), 2, dj, 1)
            term = mul(window, tap)
            out = term if out is None else add(out, term)
    return out


class ConvFFN:
    """Pointwise expand -> depthwise 3x3 -> GELU -> pointwise project, residual."""

    def __init__(self, channels: int, grid: tuple[int, int], rng: np.random.Generator, ratio: int = 4):
        self.channels = channels
        self.grid = grid
        self.hidden = ratio * channels
        self.w_in = _linear_weight(rng, (channels, self.hidden))
        self.b_in = _zeros(self.hidden)
        dw = rng.normal(0.0, 0.1, (self.hidden, 3, 3))
        dw[:, 1, 1] += 1.0  # start near identity so early training is stable
        self.dw = Tensor(dw, requires_grad=True)
        self.w_out = _linear_weight(rng, (self.hidden, channels))
        self.b_out = _zeros(channels)

    def forward(self, search: Tensor) -> Tensor:
        h, w = self.grid
        n, c = search.shape
        if n != h * w:
            raise ShapeError(f"search grid {self.grid} does not cover {n} tokens")
        x = add(matmul(search, self.w_in), self.b_in)
        x = transpose(reshape(x, (h, w, self.hidden)), (2, 0, 1))
        x = depthwise_conv3x3(x, self.dw)
        x = reshape(transpose(x, (1, 2, 0)), (n, self.hidden))
        x = add(matmul(gelu(x), self.w_out), self.b_out)
        return add(search, x)

    def named_parameters(self, prefix: str = ""):
        for name in ("w_in", "b_in", "dw", "w_out", "b_out"):
            yield f"{prefix}{name}", getattr(self, name)


class InteractionBlock:
    """One four-stage template/search interaction unit."""

    def __init__(self, cfg: InteractionConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.template_reads_search = CrossAttention(cfg.channels, cfg.heads, rng)
        self.inner = [SelfAttentionBlock(cfg.channels, cfg.heads, rng) for _ in range(cfg.inner_blocks)]
        self.search_reads_template = CrossAttention(cfg.channels, cfg.heads, rng)
        self.conv_ffn = ConvFFN(cfg.channels, cfg.search_grid, rng)

    def forward(self, state: EncoderState) -> EncoderState:
        k = state.template.shape[0]
        n = state.search.shape[0]
        if n != self.cfg.search_tokens:
            raise ShapeError(
                f"search grid {self.cfg.search_grid} does not cover {n} search tokens"
            )
        template = state.template
        if self.cfg.cross_attention:
            template = self.template_reads_search.forward(template, state.search)
        joint = concat([template, state.search], axis=0)
        for block in self.inner:
            joint = block.forward(joint)
        template = narrow(joint, 0, 0, k)
        search = narrow(joint, 0, k, n)
        if self.cfg.cross_attention:
            search = self.search_reads_template.forward(search, template)
        search = self.conv_ffn.forward(search)
        return EncoderState(template=template, search=search)

    def named_parameters(self, prefix: str = ""):
        yield from self.template_reads_search.named_parameters(f"{prefix}t2s.")
        for i, block in enumerate(self.inner):
            yield from block.named_parameters(f"{prefix}inner{i}.")
        yield from self.search_reads_template.named_parameters(f"{prefix}s2t.")
        yield from self.conv_ffn.named_parameters(f"{prefix}ffn.")


class InteractionEncoder:
    """Stack of interaction blocks; returns the final search tokens."""

    def __init__(self, cfg: InteractionConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.blocks = [InteractionBlock(cfg, rng) for _ in range(cfg.num_blocks)]

    def forward(self, template: Tensor, search: Tensor) -> Tensor:
        if template.shape[1] != search.shape[1]:
            raise ShapeError(
                f"channel widths disagree: template {template.shape} vs search {search.shape}"
            )
        state = EncoderState(template=template, search=search)
        for block in self.blocks:
            state = block.forward(state)
        return state.search

    def named_parameters(self, prefix: str = ""):
        for i, block in enumerate(self.blocks):
            yield from block.named_parameters(f"{prefix}block{i}.")
