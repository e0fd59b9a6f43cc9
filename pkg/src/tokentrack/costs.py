"""Closed-form multiply-accumulate accounting for the full pipeline.

Counts cover matmul work only (projections, attention score/value products,
pointwise and unfolded convolutions); norms, softmax, activations, and the
elementwise depthwise taps inside the ConvFFN are excluded. The same
convention drives the instrumented counter in the tensor kernel, so analytic
and measured counts agree exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


def macs_attention(nq: int, nk: int, channels: int, heads: int = 1) -> int:
    """QKV projections + output projection + score/value products."""
    if min(nq, nk, channels, heads) <= 0:
        raise ValueError("attention dimensions must be positive")
    c = channels
    return (nq + 2 * nk) * c * c + nq * c * c + 2 * nq * nk * c


def macs_self_block(n: int, channels: int) -> int:
    """One pre-norm self-attention block with a 4x feed-forward."""
    return macs_attention(n, n, channels) + 8 * n * channels * channels


def macs_conv_ffn(n: int, channels: int) -> int:
    # two pointwise projections; depthwise taps are elementwise and excluded
    return 8 * n * channels * channels


def macs_head(n: int, channels: int, depth: int) -> int:
    per_branch = depth * 9 * n * channels * channels
    projections = n * channels * (1 + 2 + 2)
    return 3 * per_branch + projections


@dataclass
class CostReport:
    r: float
    template_tokens: int  # T * L
    kept_tokens: int  # rows entering the encoder
    search_tokens: int
    tcm: int = 0
    atc_overhead: int = 0
    interaction_stage1: int = 0
    interaction_inner: int = 0
    interaction_stage3: int = 0
    interaction_conv_ffn: int = 0
    head: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def atc_total(self) -> int:
        return self.tcm + self.atc_overhead

    @property
    def encoder_total(self) -> int:
        return (
            self.interaction_stage1
            + self.interaction_inner
            + self.interaction_stage3
            + self.interaction_conv_ffn
        )

    @property
    def total(self) -> int:
        return self.atc_total + self.encoder_total + self.head

    def components(self) -> dict[str, int]:
        return {
            "tcm": self.tcm,
            "atc_overhead": self.atc_overhead,
            "interaction_stage1": self.interaction_stage1,
            "interaction_inner": self.interaction_inner,
            "interaction_stage3": self.interaction_stage3,
            "interaction_conv_ffn": self.interaction_conv_ffn,
            "head": self.head,
        }

    def to_dict(self) -> dict:
        d = {
            "r": self.r,
            "template_tokens": self.template_tokens,
            "kept_tokens": self.kept_tokens,
            "search_tokens": self.search_tokens,
            "components": self.components(),
            "atc_total": self.atc_total,
            "encoder_total": self.encoder_total,
            "total": self.total,
        }
        d.update(self.extras)
        return d


def macs_pipeline(
    template_tokens: int,
    search_tokens: int,
    channels: int,
    r: float,
    correlation_depth: int,
    interaction_blocks: int,
    inner_blocks: int,
    head_depth: int,
    atc_enabled: bool = True,
    cross_attention: bool = True,
) -> CostReport:
    """Analytic cost of compress + interact + predict for one step."""
    if not 0.0 < r <= 1.0:
        raise ValueError(f"keep ratio must lie in (0, 1], got {r}")
    n = search_tokens
    c = channels
    if atc_enabled:
        kept = math.floor(r * template_tokens) if r < 1.0 else template_tokens
        tcm = correlation_depth * macs_self_block(template_tokens, c)
        overhead = template_tokens * c
    else:
        kept = template_tokens
        tcm = 0
        overhead = 0
    stage1 = macs_attention(kept, n, c) if cross_attention else 0
    stage3 = macs_attention(n, kept, c) if cross_attention else 0
    inner = inner_blocks * macs_self_block(kept + n, c)
    report = CostReport(
        r=r,
        template_tokens=template_tokens,
        kept_tokens=kept,
        search_tokens=n,
        tcm=tcm,
        atc_overhead=overhead,
        interaction_stage1=interaction_blocks * stage1,
        interaction_inner=interaction_blocks * inner,
        interaction_stage3=interaction_blocks * stage3,
        interaction_conv_ffn=interaction_blocks * macs_conv_ffn(n, c),
        head=macs_head(n, c, head_depth),
    )
    return report


def savings_summary(report: CostReport, baseline: CostReport) -> dict:
    """Relative savings of ``report`` against a keep-everything baseline."""
    encoder_saved = baseline.encoder_total - report.encoder_total
    return {
        "baseline_total": baseline.total,
        "total": report.total,
        "total_reduction": 1.0 - report.total / baseline.total,
        "encoder_saved": encoder_saved,
        "atc_overhead": report.atc_total,
        "net_saved": baseline.total - report.total,
        "kept_fraction": report.kept_tokens / report.template_tokens,
    }
