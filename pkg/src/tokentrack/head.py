"""Fully convolutional prediction head and box decoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import _linear_weight, _zeros
from .tensor import (
    ShapeError,
    Tensor,
    add,
    im2col3x3,
    matmul,
    mul,
    relu,
    reshape,
    sigmoid,
    transpose,
)


@dataclass(frozen=True)
class BoxN:
    """Normalized (cx, cy, w, h) bounding box, all coordinates in [0, 1]."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise ValueError(f"box center out of range: {self}")
        if not (0.0 < self.w <= 1.0 and 0.0 < self.h <= 1.0):
            raise ValueError(f"box size out of range: {self}")

    def to_xyxy(self) -> tuple[float, float, float, float]:
        return (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )


def box_iou(a: BoxN, b: BoxN) -> float:
    ax1, ay1, ax2, ay2 = a.to_xyxy()
    bx1, by1, bx2, by2 = b.to_xyxy()
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0.0 else 0.0


@dataclass
class HeadMaps:
    """Per-cell outputs: target score, sub-cell offset, normalized box size."""

    cls: Tensor  # [h x w], sigmoid activated
    offset: Tensor  # [2 x h x w], (x, y) order, sigmoid activated
    size: Tensor  # [2 x h x w], (w, h) order, sigmoid activated

    @property
    def grid(self) -> tuple[int, int]:
        return self.cls.shape


class ChannelNorm:
    """Per-channel affine normalization with frozen statistics.

    Stands in for batch norm: statistics stay at their identity defaults
    (single-sample batches make batch moments degenerate), so the transform
    is a learnable affine and the forward pass is stateless. Statistic
    buffers may be assigned externally and are treated as constants by the
    gradient.
    """

    def __init__(self, channels: int, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.mean = np.zeros(channels, dtype=np.float32)
        self.var = np.ones(channels, dtype=np.float32)
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        # x is [n x C]; statistics are per channel
        inv = (1.0 / np.sqrt(self.var + self.eps)).astype(np.float32)
        normalized = mul(add(x, Tensor(-self.mean)), Tensor(inv))
        return add(mul(normalized, self.gamma), self.beta)

    def named_parameters(self, prefix: str = ""):
        yield f"{prefix}gamma", self.gamma
        yield f"{prefix}beta", self.beta


class _Branch:
    """Stack of conv3x3 + norm + ReLU stages followed by a 1x1 projection."""

    def __init__(self, channels: int, depth: int, out_channels: int, rng: np.random.Generator):
        self.channels = channels
        self.depth = depth
        self.out_channels = out_channels
        self.convs = [_linear_weight(rng, (9 * channels, channels)) for _ in range(depth)]
        self.conv_biases = [_zeros(channels) for _ in range(depth)]
        self.norms = [ChannelNorm(channels) for _ in range(depth)]
        self.proj = _linear_weight(rng, (channels, out_channels))
        self.proj_bias = _zeros(out_channels)

    def forward(self, tokens: Tensor, grid: tuple[int, int]) -> Tensor:
        h, w = grid
        x = tokens
        for conv, bias, norm in zip(self.convs, self.conv_biases, self.norms):
            fmap = transpose(reshape(x, (h, w, self.channels)), (2, 0, 1))
            x = add(matmul(im2col3x3(fmap), conv), bias)
            x = relu(norm.forward(x))
        return add(matmul(x, self.proj), self.proj_bias)

    def named_parameters(self, prefix: str = ""):
        for i, (conv, bias, norm) in enumerate(zip(self.convs, self.conv_biases, self.norms)):
            yield f"{prefix}conv{i}", conv
            yield f"{prefix}conv{i}_bias", bias
            yield from norm.named_parameters(f"{prefix}norm{i}.")
        yield f"{prefix}proj", self.proj
        yield f"{prefix}proj_bias", self.proj_bias


class PredictionHead:
    """Three-branch head emitting score, offset, and size maps."""

    def __init__(self, channels: int, grid: tuple[int, int], depth: int, rng: np.random.Generator):
        self.channels = channels
        self.grid = grid
        self.depth = depth
        self.cls_branch = _Branch(channels, depth, 1, rng)
        self.offset_branch = _Branch(channels, depth, 2, rng)
        self.size_branch = _Branch(channels, depth, 2, rng)
        # bias the score branch toward background so early focal loss is tame
        self.cls_branch.proj_bias.data[:] = -2.0

    def forward(self, tokens: Tensor) -> HeadMaps:
        h, w = self.grid
        n, c = tokens.shape
        if n != h * w:
            raise ShapeError(f"head grid {self.grid} does not cover {n} tokens")
        cls = sigmoid(self.cls_branch.forward(tokens, self.grid))
        offset = sigmoid(self.offset_branch.forward(tokens, self.grid))
        size = sigmoid(self.size_branch.forward(tokens, self.grid))
        return HeadMaps(
            cls=reshape(cls, (h, w)),
            offset=transpose(reshape(offset, (h, w, 2)), (2, 0, 1)),
            size=transpose(reshape(size, (h, w, 2)), (2, 0, 1)),
        )

    def named_parameters(self, prefix: str = ""):
        yield from self.cls_branch.named_parameters(f"{prefix}cls.")
        yield from self.offset_branch.named_parameters(f"{prefix}offset.")
        yield from self.size_branch.named_parameters(f"{prefix}size.")


def decode(maps: HeadMaps) -> tuple[BoxN, float]:
    """Read the box at the score peak; ties pick the lowest row-major cell."""
    cls = maps.cls.data
    h, w = cls.shape
    flat_idx = int(np.argmax(cls))
    i, j = divmod(flat_idx, w)
    off_x = float(maps.offset.data[0, i, j])
    off_y = float(maps.offset.data[1, i, j])
    bw = float(maps.size.data[0, i, j])
    bh = float(maps.size.data[1, i, j])
    box = BoxN(
        cx=min(1.0, max(0.0, (j + off_x) / w)),
        cy=min(1.0, max(0.0, (i + off_y) / h)),
        w=min(1.0, bw),
        h=min(1.0, bh),
    )
    return box, float(cls[i, j])
