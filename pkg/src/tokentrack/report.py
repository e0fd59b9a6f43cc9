"""Delimited outputs and the matplotlib figures rendered next to them."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .compressor import CompressionResult, keep_grid
from .costs import CostReport
from .tracking import TrackStep


# ---------------------------------------------------------------------------
# delimited outputs


def write_loss_csv(losses: list[float], path) -> None:
    with open(path, "w") as f:
        f.write("step,loss\n")
        for step, value in enumerate(losses):
            f.write(f"{step},{value!r}\n")


def write_trajectory_csv(steps: list[TrackStep], path) -> None:
    with open(path, "w") as f:
        f.write("frame,cx,cy,w,h,score,iou\n")
        for s in steps:
            f.write(
                f"{s.frame},{s.box.cx!r},{s.box.cy!r},{s.box.w!r},{s.box.h!r},"
                f"{s.score!r},{s.iou!r}\n"
            )


def write_cost_csv(reports: list[CostReport], path) -> None:
    # tokens column: template tokens for compressor rows, kept + search rows
    # for interaction stages, search tokens for the head
    with open(path, "w") as f:
        f.write("component,macs,tokens,r\n")
        for rep in reports:
            tokens = {
                "tcm": rep.template_tokens,
                "atc_overhead": rep.template_tokens,
                "interaction_stage1": rep.kept_tokens + rep.search_tokens,
                "interaction_inner": rep.kept_tokens + rep.search_tokens,
                "interaction_stage3": rep.kept_tokens + rep.search_tokens,
                "interaction_conv_ffn": rep.search_tokens,
                "head": rep.search_tokens,
            }
            for name, macs in rep.components().items():
                f.write(f"{name},{macs},{tokens[name]},{rep.r!r}\n")
            f.write(f"total,{rep.total},{rep.template_tokens + rep.search_tokens},{rep.r!r}\n")


def write_compression_grid_csv(result: CompressionResult, grid: tuple[int, int], path) -> None:
    """Row-major 0/1 keep maps, frames stacked top to bottom."""
    grids = keep_grid(result, grid)
    with open(path, "w") as f:
        for frame_grid in grids:
            for row in frame_grid:
                f.write(",".join(str(int(v)) for v in row) + "\n")


# ---------------------------------------------------------------------------
# figures


def save_loss_figure(losses: list[float], path) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(losses, lw=0.8, alpha=0.5, label="per step")
    if len(losses) > 20:
        k = max(1, len(losses) // 50)
        smooth = np.convolve(losses, np.ones(k) / k, mode="valid")
        ax.plot(np.arange(len(smooth)) + k // 2, smooth, lw=1.6, label=f"mean({k})")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_trajectory_figure(steps: list[TrackStep], path) -> None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    xs = [s.box.cx for s in steps]
    ys = [s.box.cy for s in steps]
    ax1.plot(xs, ys, "o-", ms=3, lw=1)
    ax1.set_xlim(0, 1)
    ax1.set_ylim(1, 0)
    ax1.set_title("predicted center path")
    ax1.set_aspect("equal")
    ax2.plot([s.frame for s in steps], [s.iou for s in steps], lw=1.2)
    ax2.axhline(0.5, color="gray", ls="--", lw=0.8)
    ax2.set_ylim(0, 1.05)
    ax2.set_xlabel("frame")
    ax2.set_ylabel("IoU vs ground truth")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_compression_figure(result: CompressionResult, grid: tuple[int, int], path) -> None:
    """Keep/eliminate maps per template frame, eliminated cells in gray."""
    grids = keep_grid(result, grid)
    t = grids.shape[0]
    fig, axes = plt.subplots(1, t, figsize=(2.0 * t, 2.4))
    if t == 1:
        axes = [axes]
    for idx, (ax, g) in enumerate(zip(axes, grids)):
        ax.imshow(g, cmap="gray", vmin=0, vmax=1)
        ax.set_title(f"frame {idx}", fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
    kept = int(sum(g.sum() for g in grids))
    total = grids.size
    fig.suptitle(f"kept {kept}/{total} tokens (r={result.r:g})", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_cost_figure(reports: list[CostReport], path) -> None:
    fig, ax = plt.subplots(figsize=(6.5, 3.8))
    rs = [rep.r for rep in reports]
    bottoms = np.zeros(len(reports))
    for name in ("tcm", "atc_overhead", "interaction_stage1", "interaction_inner",
                 "interaction_stage3", "interaction_conv_ffn", "head"):
        vals = np.array([rep.components()[name] for rep in reports], dtype=float) / 1e9
        ax.bar([f"{r:g}" for r in rs], vals, bottom=bottoms, label=name, width=0.6)
        bottoms += vals
    ax.set_xlabel("keep ratio r")
    ax.set_ylabel("GMACs")
    ax.legend(frameon=False, fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
