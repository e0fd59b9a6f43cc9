"""Training objective: weighted focal score loss plus GIoU and L1 box terms.

The box terms are evaluated on the box decoded at the ground-truth center
cell, which keeps the objective differentiable (no argmax in the training
path). Total loss is ``focal + lambda_iou * (1 - GIoU) + lambda_l1 * L1`` with
the box weights defaulting to 2 and 5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .head import BoxN, HeadMaps
from .tensor import (
    Tensor,
    add,
    clamp,
    concat,
    div,
    index_select,
    maximum,
    minimum,
    mul,
    narrow,
    power,
    relu,
    reshape,
    scale,
    sub,
    tabs,
    tlog,
    tmean,
    tsum,
)

CLS_EPS = 1e-6


@dataclass(frozen=True)
class LossWeights:
    lambda_l1: float = 5.0
    lambda_iou: float = 2.0
    focal_alpha: float = 2.0
    focal_beta: float = 4.0

    def __post_init__(self):
        if min(self.lambda_l1, self.lambda_iou, self.focal_alpha, self.focal_beta) < 0:
            raise ValueError(f"loss weights must be nonnegative: {self}")


@dataclass
class GtTarget:
    """Ground-truth box with its center-splatted score heatmap."""

    box: BoxN
    heatmap: np.ndarray  # [h x w], max exactly 1 at the center cell
    cell: tuple[int, int]  # (row, col) of the center cell


def gaussian_radius(height: float, width: float, min_overlap: float = 0.7) -> float:
    """Splat radius (in cells) keeping IoU >= min_overlap under corner shifts."""
    a1 = 1.0
    b1 = height + width
    c1 = width * height * (1.0 - min_overlap) / (1.0 + min_overlap)
    r1 = (b1 - math.sqrt(max(0.0, b1 * b1 - 4.0 * a1 * c1))) / (2.0 * a1)

    a2 = 4.0
    b2 = 2.0 * (height + width)
    c2 = (1.0 - min_overlap) * width * height
    r2 = (b2 - math.sqrt(max(0.0, b2 * b2 - 4.0 * a2 * c2))) / (2.0 * a2)

    a3 = 4.0 * min_overlap
    b3 = -2.0 * min_overlap * (height + width)
    c3 = (min_overlap - 1.0) * width * height
    r3 = (b3 + math.sqrt(max(0.0, b3 * b3 - 4.0 * a3 * c3))) / (2.0 * a3)
    return min(r1, r2, r3)


def make_target(box: BoxN, grid: tuple[int, int]) -> GtTarget:
    """Splat a Gaussian around the box-center cell; the center is exactly 1."""
    h, w = grid
    i = min(h - 1, int(box.cy * h))
    j = min(w - 1, int(box.cx * w))
    radius = max(0.0, gaussian_radius(box.h * h, box.w * w))
    sigma = max((2.0 * radius + 1.0) / 6.0, 1e-3)
    ys = np.arange(h, dtype=np.float32)[:, None]
    xs = np.arange(w, dtype=np.float32)[None, :]
    heat = np.exp(-(((xs - j) ** 2 + (ys - i) ** 2) / (2.0 * sigma * sigma)))
    heat[((ys - i) ** 2 + (xs - j) ** 2) > radius * radius] = 0.0
    heat = heat.astype(np.float32)
    heat[i, j] = 1.0
    return GtTarget(box=box, heatmap=heat, cell=(i, j))


def focal_loss(cls: Tensor, gt: np.ndarray, alpha: float = 2.0, beta: float = 4.0) -> Tensor:
    """Center-weighted focal loss averaged over positive cells.

    Positives are the cells where ``gt == 1``; other cells contribute a
    penalty-reduced negative term weighted by ``(1 - gt)**beta``.
    """
    gt = np.asarray(gt, dtype=np.float32)
    if tuple(cls.shape) != gt.shape:
        raise ValueError(f"score map {cls.shape} and target {gt.shape} disagree")
    pos_mask = gt == 1.0
    n_pos = int(pos_mask.sum())
    if n_pos == 0:
        raise ValueError("target heatmap has no positive cell")
    p = clamp(cls, CLS_EPS, 1.0 - CLS_EPS)
    pos = mul(mul(power(sub(1.0, p), alpha), tlog(p)), Tensor(pos_mask.astype(np.float32)))
    neg_w = ((1.0 - gt) ** beta * (~pos_mask)).astype(np.float32)
    neg = mul(mul(power(p, alpha), tlog(sub(1.0, p))), Tensor(neg_w))
    return scale(add(tsum(pos), tsum(neg)), -1.0 / n_pos)


def giou(a: BoxN, b: BoxN) -> float:
    """Generalized IoU of two boxes; equals IoU when the hull is the union."""
    ax1, ay1, ax2, ay2 = a.to_xyxy()
    bx1, by1, bx2, by2 = b.to_xyxy()
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    hull = (max(ax2, bx2) - min(ax1, bx1)) * (max(ay2, by2) - min(ay1, by1))
    return inter / union - (hull - union) / hull


def _coord(t: Tensor, i: int) -> Tensor:
    return narrow(t, 0, i, 1)


def giou_term(pred: Tensor, gt: Tensor) -> Tensor:
    """Differentiable GIoU of two (cx, cy, w, h) coordinate tensors."""
    px1 = sub(_coord(pred, 0), scale(_coord(pred, 2), 0.5))
    px2 = add(_coord(pred, 0), scale(_coord(pred, 2), 0.5))
    py1 = sub(_coord(pred, 1), scale(_coord(pred, 3), 0.5))
    py2 = add(_coord(pred, 1), scale(_coord(pred, 3), 0.5))
    gx1 = sub(_coord(gt, 0), scale(_coord(gt, 2), 0.5))
    gx2 = add(_coord(gt, 0), scale(_coord(gt, 2), 0.5))
    gy1 = sub(_coord(gt, 1), scale(_coord(gt, 3), 0.5))
    gy2 = add(_coord(gt, 1), scale(_coord(gt, 3), 0.5))
    iw = relu(sub(minimum(px2, gx2), maximum(px1, gx1)))
    ih = relu(sub(minimum(py2, gy2), maximum(py1, gy1)))
    inter = mul(iw, ih)
    area_p = mul(_coord(pred, 2), _coord(pred, 3))
    area_g = mul(_coord(gt, 2), _coord(gt, 3))
    union = sub(add(area_p, area_g), inter)
    hull = mul(sub(maximum(px2, gx2), minimum(px1, gx1)), sub(maximum(py2, gy2), minimum(py1, gy1)))
    value = sub(div(inter, union), div(sub(hull, union), hull))
    return reshape(value, ())


def box_at_cell(maps: HeadMaps, cell: tuple[int, int]) -> Tensor:
    """Decode the (cx, cy, w, h) prediction at one cell as a tensor."""
    h, w = maps.grid
    i, j = cell
    flat = i * w + j
    off = index_select(reshape(maps.offset, (2, h * w)), 1, [flat])
    size = index_select(reshape(maps.size, (2, h * w)), 1, [flat])
    cx = scale(add(reshape(narrow(off, 0, 0, 1), (1,)), float(j)), 1.0 / w)
    cy = scale(add(reshape(narrow(off, 0, 1, 1), (1,)), float(i)), 1.0 / h)
    bw = reshape(narrow(size, 0, 0, 1), (1,))
    bh = reshape(narrow(size, 0, 1, 1), (1,))
    return concat([cx, cy, bw, bh], axis=0)


def l1_term(pred: Tensor, gt: Tensor) -> Tensor:
    return reshape(tmean(tabs(sub(pred, gt))), ())


def total_loss(
    maps: HeadMaps, gt: GtTarget, weights: LossWeights = LossWeights()
) -> tuple[Tensor, dict[str, float]]:
    """Composite objective; box terms read the prediction at the gt cell."""
    cls_loss = focal_loss(maps.cls, gt.heatmap, weights.focal_alpha, weights.focal_beta)
    pred = box_at_cell(maps, gt.cell)
    gt_vec = Tensor(np.array([gt.box.cx, gt.box.cy, gt.box.w, gt.box.h], dtype=np.float32))
    giou_loss = sub(1.0, giou_term(pred, gt_vec))
    l1_loss = l1_term(pred, gt_vec)
    total = add(
        reshape(cls_loss, ()),
        add(scale(giou_loss, weights.lambda_iou), scale(l1_loss, weights.lambda_l1)),
    )
    parts = {
        "focal": float(cls_loss.data),
        "giou": float(giou_loss.data),
        "l1": float(l1_loss.data),
        "total": float(total.data),
    }
    return total, parts
