"""Template token compression: correlate, score, partition, and merge.

The compressor contextualizes all template tokens jointly with a stack of
self-attention layers, scores them with a frozen random projection, keeps the
top fraction ``r``, and absorbs every dropped token into its most similar kept
token. The merge is purely additive, so the row sum of the compressed output
equals the row sum of the contextualized input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .blocks import SelfAttentionBlock
from .patches import TokenStack
from .tensor import Tensor, add, index_select, matmul, scatter_rows_sum


@dataclass(frozen=True)
class CorrelationConfig:
    """Shape of the token-correlation stack applied before scoring."""

    depth: int = 8
    heads: int = 8
    channels: int = 256

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"correlation depth must be >= 1, got {self.depth}")


class CorrelationStack:
    """Stack of self-attention layers contextualizing all template tokens."""

    def __init__(self, cfg: CorrelationConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.layers = [SelfAttentionBlock(cfg.channels, cfg.heads, rng) for _ in range(cfg.depth)]

    def forward(self, stack: TokenStack) -> Tensor:
        x = stack.tokens
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def named_parameters(self, prefix: str = ""):
        for i, layer in enumerate(self.layers):
            yield from layer.named_parameters(f"{prefix}layer{i}.")


class ScoreProjector:
    """Frozen random direction used to score token importance.

    The vector is drawn once from a seeded unit Gaussian and is never part of
    the trainable parameter set; it must survive checkpointing unchanged.
    """

    def __init__(self, channels: int, seed: int):
        self.channels = channels
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        self.w = rng.standard_normal(channels).astype(np.float32)

    def score(self, tokens: Tensor) -> np.ndarray:
        data = tokens.data
        if data.shape[1] != self.channels:
            raise ValueError(
                f"projector expects {self.channels} channels, tokens have {data.shape[1]}"
            )
        # selection signal only: no gradient flows through the scores
        return (data @ self.w.reshape(-1, 1)).reshape(-1)


def score_with_macs(tokens: Tensor, proj: ScoreProjector) -> np.ndarray:
    """Score via a counted matmul so the projection shows up in MAC scopes."""
    s = matmul(tokens.detach(), Tensor(proj.w.reshape(-1, 1)))
    return s.data.reshape(-1)


def partition(scores: np.ndarray, r: float, total: int) -> tuple[np.ndarray, np.ndarray]:
    """Split token indices into kept (top scores) and merged (the rest).

    Keeps exactly floor(r * total) indices. Equal scores are resolved in favor
    of the lower original index. Both returned arrays are sorted ascending.
    """
    if not 0.0 < r < 1.0:
        raise ValueError(f"keep ratio must lie in (0, 1), got {r}")
    scores = np.asarray(scores)
    if scores.shape != (total,):
        raise ValueError(f"expected {total} scores, got shape {scores.shape}")
    k_target = math.floor(r * total)
    if k_target == 0:
        raise ValueError(f"keep ratio {r} of {total} tokens would discard every token")
    order = np.argsort(-scores, kind="stable")
    kept = np.sort(order[:k_target])
    merged = np.sort(order[k_target:])
    return kept, merged


@dataclass
class CompressionResult:
    """Compressed tokens plus full provenance of the merge."""

    compressed: Tensor  # [K x C]
    kept_idx: np.ndarray  # sorted original indices of kept tokens
    assignment: dict[int, int]  # source original index -> kept original index
    scores: np.ndarray
    r: float
    frames: int = 0
    tokens_per_frame: int = 0

    @property
    def kept_count(self) -> int:
        return len(self.kept_idx)


def cosine_argmax(sources: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Most-similar target row per source row under cosine similarity.

    Zero-norm rows get similarity 0 against everything; ties go to the lowest
    target index.
    """
    s = sources.astype(np.float64)
    t = targets.astype(np.float64)
    s_norm = np.linalg.norm(s, axis=1, keepdims=True)
    t_norm = np.linalg.norm(t, axis=1, keepdims=True)
    s = s / np.where(s_norm > 0.0, s_norm, 1.0)
    t = t / np.where(t_norm > 0.0, t_norm, 1.0)
    sims = s @ t.T
    return np.argmax(sims, axis=1)


def guided_merge(tokens: Tensor, kept: np.ndarray, merged: np.ndarray) -> CompressionResult:
    """Absorb each merged token into its most similar kept token.

    Similarities are measured against the pre-merge kept values, so the merge
    is simultaneous and order-independent. The compressed rows follow the
    ascending original index of the kept tokens.
    """
    kept = np.asarray(kept, dtype=np.int64)
    merged = np.asarray(merged, dtype=np.int64)
    n = tokens.shape[0]
    if np.intersect1d(kept, merged).size or kept.size + merged.size != n:
        raise ValueError("kept and merged indices must partition all token rows")
    base = index_select(tokens, 0, kept)
    if merged.size == 0:
        return CompressionResult(
            compressed=base,
            kept_idx=kept,
            assignment={},
            scores=np.zeros(n, dtype=np.float32),
            r=1.0,
        )
    target_pos = cosine_argmax(tokens.data[merged], tokens.data[kept])
    sources = index_select(tokens, 0, merged)
    summed = scatter_rows_sum(sources, target_pos, len(kept))
    compressed = add(base, summed)
    assignment = {int(src): int(kept[pos]) for src, pos in zip(merged, target_pos)}
    return CompressionResult(
        compressed=compressed,
        kept_idx=kept,
        assignment=assignment,
        scores=np.zeros(n, dtype=np.float32),
        r=float(len(kept)) / n,
    )


def compress(
    stack: TokenStack,
    correlation: CorrelationStack,
    proj: ScoreProjector,
    r: float,
) -> CompressionResult:
    """Full compression pass: correlate, score, partition, merge.

    ``r == 1.0`` is the no-reduction edge: the contextualized tokens pass
    through unchanged with an empty assignment.
    """
    if not 0.0 < r <= 1.0:
        raise ValueError(f"keep ratio must lie in (0, 1], got {r}")
    context = correlation.forward(stack)
    total = stack.frames * stack.tokens_per_frame
    scores = score_with_macs(context, proj)
    if r == 1.0:
        result = CompressionResult(
            compressed=context,
            kept_idx=np.arange(total, dtype=np.int64),
            assignment={},
            scores=scores,
            r=1.0,
        )
    else:
        kept, merged = partition(scores, r, total)
        result = guided_merge(context, kept, merged)
        result.scores = scores
        result.r = r
    result.frames = stack.frames
    result.tokens_per_frame = stack.tokens_per_frame
    return result


def keep_grid(result: CompressionResult, grid: tuple[int, int]) -> np.ndarray:
    """Per-frame boolean keep/eliminate maps, [T x gh x gw]."""
    gh, gw = grid
    l = result.tokens_per_frame
    if gh * gw != l:
        raise ValueError(f"grid {grid} does not cover {l} tokens per frame")
    flat = np.zeros(result.frames * l, dtype=np.int64)
    flat[result.kept_idx] = 1
    return flat.reshape(result.frames, gh, gw)


def compression_record(result: CompressionResult) -> dict:
    """JSON-serializable provenance record of one compression pass."""
    return {
        "kept_idx": [int(i) for i in result.kept_idx],
        "assignment": {str(k): int(v) for k, v in sorted(result.assignment.items())},
        "scores": [float(s) for s in result.scores],
        "r": float(result.r),
        "T": int(result.frames),
        "L": int(result.tokens_per_frame),
    }
