"""Patch tokenization of frames and multi-frame template stacking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, add, concat, index_select, matmul, reshape


@dataclass(frozen=True)
class FrameSpec:
    """Geometry of a square-patched input frame."""

    height: int
    width: int
    channels: int = 3
    patch: int = 16

    def __post_init__(self):
        if self.height % self.patch or self.width % self.patch:
            raise ShapeError(
                f"frame {self.height}x{self.width} is not divisible by patch size {self.patch}"
            )

    @property
    def grid(self) -> tuple[int, int]:
        return (self.height // self.patch, self.width // self.patch)

    @property
    def tokens(self) -> int:
        gh, gw = self.grid
        return gh * gw


def flatten_patches(frame: np.ndarray, spec: FrameSpec) -> np.ndarray:
    """Cut a [channels x H x W] frame into row-major flattened patches."""
    c, h, w = frame.shape
    if (c, h, w) != (spec.channels, spec.height, spec.width):
        raise ShapeError(f"frame shape {frame.shape} does not match spec {spec}")
    p = spec.patch
    gh, gw = spec.grid
    # [c, gh, p, gw, p] -> [gh, gw, c, p, p] -> [L, c*p*p]
    tiles = frame.reshape(c, gh, p, gw, p).transpose(1, 3, 0, 2, 4)
    return np.ascontiguousarray(tiles.reshape(gh * gw, c * p * p), dtype=np.float32)


class PatchEmbedding:
    """Linear projection of flattened patches plus a learnable position table."""

    def __init__(self, spec: FrameSpec, channels: int, rng: np.random.Generator):
        self.spec = spec
        self.channels = channels
        in_dim = spec.channels * spec.patch * spec.patch
        self.proj = Tensor(rng.normal(0.0, 0.02, (in_dim, channels)), requires_grad=True)
        self.bias = Tensor(np.zeros(channels), requires_grad=True)
        self.pos = Tensor(rng.normal(0.0, 0.02, (spec.tokens, channels)), requires_grad=True)

    def forward(self, frame: np.ndarray) -> Tensor:
        patches = Tensor(flatten_patches(np.asarray(frame, dtype=np.float32), self.spec))
        tokens = add(add(matmul(patches, self.proj), self.bias), self.pos)
        return tokens

    def named_parameters(self, prefix: str = ""):
        yield f"{prefix}proj", self.proj
        yield f"{prefix}bias", self.bias
        yield f"{prefix}pos", self.pos


class TemporalEmbedding:
    """Per-frame learnable offset added to every token of that frame."""

    def __init__(self, frames: int, channels: int, rng: np.random.Generator):
        self.frames = frames
        self.channels = channels
        self.table = Tensor(rng.normal(0.0, 0.02, (frames, 1, channels)), requires_grad=True)

    def named_parameters(self, prefix: str = ""):
        yield f"{prefix}table", self.table


@dataclass
class TokenStack:
    """Flattened multi-frame token block with frame provenance."""

    tokens: Tensor  # [(T*L) x C]
    frames: int
    tokens_per_frame: int
    frame_of: np.ndarray

    def __post_init__(self):
        total = self.frames * self.tokens_per_frame
        if self.tokens.shape[0] != total:
            raise ShapeError(
                f"token stack has {self.tokens.shape[0]} rows, expected {total}"
            )


def stack_templates(frames: list[Tensor], temporal: TemporalEmbedding) -> TokenStack:
    """Concatenate template token grids and add the temporal embedding.

    Output row t*L + l is frames[t] row l plus the temporal table row t. Fewer
    frames than the table holds is allowed; the leading table rows are used.
    """
    t = len(frames)
    if t == 0 or t > temporal.frames:
        raise ShapeError(
            f"got {t} template frames for a temporal table of {temporal.frames} rows"
        )
    l, c = frames[0].shape
    for f in frames:
        if f.shape != (l, c):
            raise ShapeError(f"template token grids disagree: {f.shape} vs {(l, c)}")
    stacked = concat(frames, axis=0)
    table2d = reshape(temporal.table, (temporal.frames, temporal.channels))
    row_frame = np.repeat(np.arange(t, dtype=np.int64), l)
    offsets = index_select(table2d, 0, row_frame)
    return TokenStack(
        tokens=add(stacked, offsets),
        frames=t,
        tokens_per_frame=l,
        frame_of=row_frame,
    )
