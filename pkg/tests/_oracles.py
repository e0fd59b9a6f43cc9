"""Independent oracles shared by the test modules: finite differences,
rasterized box overlap, and exhaustive cosine matching."""

from __future__ import annotations

import numpy as np


def numeric_grad(f, x: np.ndarray, h: float = 1e-3, coords=None) -> np.ndarray:
    """Central finite differences of a scalar function at a float32 point.

    Returns a dense gradient with zeros at unprobed coordinates when
    ``coords`` restricts the probe set.
    """
    x = np.asarray(x, dtype=np.float32)
    flat = x.reshape(-1)
    idxs = range(flat.size) if coords is None else coords
    g = np.zeros(flat.size, dtype=np.float64)
    for i in idxs:
        xp = flat.copy()
        xm = flat.copy()
        xp[i] = np.float32(float(flat[i]) + h)
        xm[i] = np.float32(float(flat[i]) - h)
        fp = float(f(xp.reshape(x.shape)))
        fm = float(f(xm.reshape(x.shape)))
        step = float(xp[i]) - float(xm[i])
        g[i] = (fp - fm) / step
    return g.reshape(x.shape)


def assert_grads_close(analytic, numeric, rtol: float, atol: float, coords=None, label: str = ""):
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    if coords is not None:
        a = a[list(coords)]
        n = n[list(coords)]
    err = np.abs(a - n)
    tol = atol + rtol * np.maximum(np.abs(a), np.abs(n))
    worst = int(np.argmax(err - tol))
    assert np.all(err <= tol), (
        f"{label} gradient mismatch: analytic {a[worst]} vs numeric {n[worst]} "
        f"(|err| {err[worst]:.3e} > tol {tol[worst]:.3e})"
    )


# ---------------------------------------------------------------------------
# rasterized box geometry at fixed resolution


def _cell_range(lo: float, hi: float, res: int) -> tuple[int, int]:
    """Inclusive index range of cells whose centers fall in [lo, hi]."""
    first = int(np.ceil(lo * res - 0.5))
    last = int(np.floor(hi * res - 0.5))
    return max(0, first), min(res - 1, last)


def _cell_count(xr: tuple[int, int], yr: tuple[int, int]) -> int:
    nx = xr[1] - xr[0] + 1
    ny = yr[1] - yr[0] + 1
    return max(0, nx) * max(0, ny)


def rasterized_giou(a, b, res: int = 1000) -> float:
    """GIoU computed by counting grid cells inside each rectangle."""
    ax = _cell_range(a.to_xyxy()[0], a.to_xyxy()[2], res)
    ay = _cell_range(a.to_xyxy()[1], a.to_xyxy()[3], res)
    bx = _cell_range(b.to_xyxy()[0], b.to_xyxy()[2], res)
    by = _cell_range(b.to_xyxy()[1], b.to_xyxy()[3], res)
    area_a = _cell_count(ax, ay)
    area_b = _cell_count(bx, by)
    ix = (max(ax[0], bx[0]), min(ax[1], bx[1]))
    iy = (max(ay[0], by[0]), min(ay[1], by[1]))
    inter = _cell_count(ix, iy)
    union = area_a + area_b - inter
    hx = (min(ax[0], bx[0]), max(ax[1], bx[1]))
    hy = (min(ay[0], by[0]), max(ay[1], by[1]))
    hull = _cell_count(hx, hy)
    return inter / union - (hull - union) / hull


def rasterized_giou_masks(a, b, res: int = 1000) -> float:
    """Same oracle with materialized boolean masks; slow reference."""
    ma = np.zeros((res, res), dtype=bool)
    mb = np.zeros((res, res), dtype=bool)
    ax1, ay1, ax2, ay2 = a.to_xyxy()
    bx1, by1, bx2, by2 = b.to_xyxy()
    x0, x1 = _cell_range(ax1, ax2, res)
    y0, y1 = _cell_range(ay1, ay2, res)
    ma[y0 : y1 + 1, x0 : x1 + 1] = True
    x0, x1 = _cell_range(bx1, bx2, res)
    y0, y1 = _cell_range(by1, by2, res)
    mb[y0 : y1 + 1, x0 : x1 + 1] = True
    inter = int((ma & mb).sum())
    union = int((ma | mb).sum())
    ys, xs = np.where(ma | mb)
    hull = int((ys.max() - ys.min() + 1)) * int((xs.max() - xs.min() + 1))
    return inter / union - (hull - union) / hull


# ---------------------------------------------------------------------------
# exhaustive merge assignment


def exhaustive_assignment(tokens: np.ndarray, kept, merged) -> dict[int, int]:
    """Per-source argmax of cosine similarity over all kept tokens.

    Zero-norm pairs score 0; ties resolve to the lowest kept index.
    """
    out: dict[int, int] = {}
    for i in merged:
        best_idx = None
        best_sim = None
        src = tokens[i].astype(np.float64)
        ns = float(np.linalg.norm(src))
        for j in kept:
            dst = tokens[j].astype(np.float64)
            nd = float(np.linalg.norm(dst))
            sim = 0.0 if ns == 0.0 or nd == 0.0 else float(src @ dst / (ns * nd))
            if best_sim is None or sim > best_sim:
                best_sim = sim
                best_idx = int(j)
        out[int(i)] = best_idx
    return out


def random_boxes(rng: np.random.Generator, n: int, min_side: float = 0.05, max_side: float = 0.6):
    """Valid boxes fully inside the unit square."""
    from tokentrack import BoxN

    boxes = []
    for _ in range(n):
        w = float(rng.uniform(min_side, max_side))
        h = float(rng.uniform(min_side, max_side))
        cx = float(rng.uniform(w / 2, 1 - w / 2))
        cy = float(rng.uniform(h / 2, 1 - h / 2))
        boxes.append(BoxN(cx, cy, w, h))
    return boxes


def attention_f64(q, kv, heads, weights):
    """Float64 reference of multi-head attention for FD oracles."""
    q = q.astype(np.float64)
    kv = kv.astype(np.float64)
    wq, wk, wv, wo = [w.astype(np.float64) for w in weights]
    nq, c = q.shape
    nk = kv.shape[0]
    d = c // heads

    def heads_of(x, n):
        return x.reshape(n, heads, d).transpose(1, 0, 2)

    qh = heads_of(q @ wq, nq)
    kh = heads_of(kv @ wk, nk)
    vh = heads_of(kv @ wv, nk)
    scores = qh @ kh.transpose(0, 2, 1) / np.sqrt(d)
    e = np.exp(scores - scores.max(axis=-1, keepdims=True))
    probs = e / e.sum(axis=-1, keepdims=True)
    ctx = (probs @ vh).transpose(1, 0, 2).reshape(nq, c)
    return ctx @ wo
