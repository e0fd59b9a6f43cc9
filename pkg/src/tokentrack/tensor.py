"""Dense float32 tensor kernel with tape-based reverse-mode gradients.

Tensors are numpy-backed and at most rank 3. Gradients are recorded onto an
explicit :class:`GradTape`: each op appends one entry while a tape is active,
and reverse accumulation walks the tape backwards from a scalar output.
Matmul multiply counts can be observed through :class:`MacCounter` scopes,
which is what the analytic cost model is validated against.
"""

from __future__ import annotations

import json
import math
import struct
import threading

import numpy as np

DUMP_MAGIC = b"TOKT0001"
LAYER_NORM_EPS = 1e-5

_local = threading.local()


class ShapeError(ValueError):
    """Operand shapes violate an op contract."""


def _tape() -> "GradTape | None":
    return getattr(_local, "tape", None)


def _counters() -> list:
    stack = getattr(_local, "counters", None)
    if stack is None:
        stack = []
        _local.counters = stack
    return stack


def _add_macs(n: int) -> None:
    for c in _counters():
        c.macs += n


class MacCounter:
    """Context manager accumulating multiply counts of matmul ops in scope."""

    def __init__(self) -> None:
        self.macs = 0

    def __enter__(self) -> "MacCounter":
        _counters().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _counters().remove(self)


class Tensor:
    """Rank <=3 float32 array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float32)
        if arr.ndim > 3:
            raise ShapeError(f"tensors are limited to rank 3, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)


class GradTape:
    """Linear record of executed ops enabling reverse accumulation.

    ``backward`` may be replayed; every replay first clears the gradients of
    all tensors touched by the tape, so repeated calls are bit-identical.
    """

    def __init__(self) -> None:
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def __enter__(self) -> "GradTape":
        self._prev = _tape()
        _local.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _local.tape = self._prev

    def _record(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> None:
        self._entries.append((out, inputs, backward_fn))

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ShapeError(f"backward requires a scalar output, got shape {loss.shape}")
        seen: dict[int, Tensor] = {}
        for out, inputs, _ in self._entries:
            seen[id(out)] = out
            for t in inputs:
                seen[id(t)] = t
        for t in seen.values():
            t.grad = None
        loss.grad = np.ones_like(loss.data)
        for out, _, backward_fn in reversed(self._entries):
            if out.grad is None:
                continue
            backward_fn(out.grad)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    g = np.asarray(g, dtype=np.float32)
    if g.shape != t.data.shape:
        raise ShapeError(f"gradient shape {g.shape} does not match tensor shape {t.data.shape}")
    t.grad = g if t.grad is None else t.grad + g


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    tape = _tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._record(out, inputs, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to the shape of a broadcast operand."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    out = Tensor(a.data + b.data)

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _record(out, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    out = Tensor(a.data - b.data)

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _record(out, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    out = Tensor(a.data * b.data)

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _record(out, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    out = Tensor(a.data / b.data)

    def bw(g):
        _accum(a, _unbroadcast(g / b.data, a.data.shape))
        _accum(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _record(out, (a, b), bw)


def scale(a, c: float) -> Tensor:
    a = _t(a)
    c = float(c)
    out = Tensor(a.data * np.float32(c))

    def bw(g):
        _accum(a, g * np.float32(c))

    return _record(out, (a,), bw)


def power(a, p: float) -> Tensor:
    """a**p for a constant exponent; base must be positive where p < 1."""
    a = _t(a)
    p = float(p)
    out = Tensor(a.data**np.float32(p))

    def bw(g):
        _accum(a, g * np.float32(p) * a.data ** np.float32(p - 1.0))

    return _record(out, (a,), bw)


def texp(a) -> Tensor:
    a = _t(a)
    out = Tensor(np.exp(a.data))

    def bw(g):
        _accum(a, g * out.data)

    return _record(out, (a,), bw)


def tlog(a) -> Tensor:
    a = _t(a)
    out = Tensor(np.log(a.data))

    def bw(g):
        _accum(a, g / a.data)

    return _record(out, (a,), bw)


def tabs(a) -> Tensor:
    a = _t(a)
    out = Tensor(np.abs(a.data))

    def bw(g):
        _accum(a, g * np.sign(a.data))

    return _record(out, (a,), bw)


def maximum(a, b) -> Tensor:
    """Elementwise max; gradient routed to the first operand on ties."""
    a, b = _t(a), _t(b)
    out = Tensor(np.maximum(a.data, b.data))

    def bw(g):
        take_a = (a.data >= b.data).astype(np.float32)
        _accum(a, _unbroadcast(g * take_a, a.data.shape))
        _accum(b, _unbroadcast(g * (1.0 - take_a), b.data.shape))

    return _record(out, (a, b), bw)


def minimum(a, b) -> Tensor:
    """Elementwise min; gradient routed to the first operand on ties."""
    a, b = _t(a), _t(b)
    out = Tensor(np.minimum(a.data, b.data))

    def bw(g):
        take_a = (a.data <= b.data).astype(np.float32)
        _accum(a, _unbroadcast(g * take_a, a.data.shape))
        _accum(b, _unbroadcast(g * (1.0 - take_a), b.data.shape))

    return _record(out, (a, b), bw)


def clamp(a, lo: float | None = None, hi: float | None = None) -> Tensor:
    a = _t(a)
    out = Tensor(np.clip(a.data, lo, hi))
    inside = np.ones_like(a.data)
    if lo is not None:
        inside *= (a.data >= lo).astype(np.float32)
    if hi is not None:
        inside *= (a.data <= hi).astype(np.float32)

    def bw(g):
        _accum(a, g * inside)

    return _record(out, (a,), bw)


def relu(a) -> Tensor:
    a = _t(a)
    out = Tensor(np.maximum(a.data, 0.0))

    def bw(g):
        _accum(a, g * (a.data > 0.0).astype(np.float32))

    return _record(out, (a,), bw)


def sigmoid(a) -> Tensor:
    a = _t(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(s)

    def bw(g):
        _accum(a, g * out.data * (1.0 - out.data))

    return _record(out, (a,), bw)


_GELU_A = math.sqrt(2.0 / math.pi)
_GELU_B = 0.044715


def gelu(a) -> Tensor:
    """Tanh-approximation GELU."""
    a = _t(a)
    x = a.data
    u = _GELU_A * (x + _GELU_B * x**3)
    t = np.tanh(u)
    out = Tensor(0.5 * x * (1.0 + t))

    def bw(g):
        du = _GELU_A * (1.0 + 3.0 * _GELU_B * x**2)
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * du
        _accum(a, g * d.astype(np.float32))

    return _record(out, (a,), bw)


# ---------------------------------------------------------------------------
# reductions


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _t(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def bw(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape).astype(np.float32))
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape).astype(np.float32))

    return _record(out, (a,), bw)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _t(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a, shape) -> Tensor:
    a = _t(a)
    out = Tensor(a.data.reshape(shape))

    def bw(g):
        _accum(a, g.reshape(a.data.shape))

    return _record(out, (a,), bw)


def transpose(a, axes) -> Tensor:
    a = _t(a)
    axes = tuple(axes)
    out = Tensor(a.data.transpose(axes))
    inverse = tuple(np.argsort(axes))

    def bw(g):
        _accum(a, g.transpose(inverse))

    return _record(out, (a,), bw)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_t(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]

    def bw(g):
        start = 0
        for t, size in zip(tensors, sizes):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(start, start + size)
            _accum(t, g[tuple(idx)])
            start += size

    return _record(out, tuple(tensors), bw)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    a = _t(a)
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor(a.data[idx])

    def bw(g):
        ga = np.zeros_like(a.data)
        ga[idx] = g
        _accum(a, ga)

    return _record(out, (a,), bw)


def index_select(a, axis: int, indices) -> Tensor:
    a = _t(a)
    idx = np.asarray(indices, dtype=np.int64)
    out = Tensor(np.take(a.data, idx, axis=axis))

    def bw(g):
        ga = np.zeros_like(a.data)
        moved = np.moveaxis(ga, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        _accum(a, ga)

    return _record(out, (a,), bw)


def scatter_rows_sum(src, indices, num_rows: int) -> Tensor:
    """Sum rows of ``src`` into ``num_rows`` output rows by index."""
    src = _t(src)
    idx = np.asarray(indices, dtype=np.int64)
    if src.data.ndim != 2 or idx.shape != (src.data.shape[0],):
        raise ShapeError(
            f"scatter_rows_sum expects src [m x C] and m indices, got {src.shape} and {idx.shape}"
        )
    out_data = np.zeros((num_rows, src.data.shape[1]), dtype=np.float32)
    np.add.at(out_data, idx, src.data)
    out = Tensor(out_data)

    def bw(g):
        _accum(src, g[idx])

    return _record(out, (src,), bw)


def pad2d(a, pad: int = 1) -> Tensor:
    """Zero-pad the last two axes of a rank-3 tensor."""
    a = _t(a)
    if a.data.ndim != 3:
        raise ShapeError(f"pad2d expects a rank-3 tensor, got shape {a.shape}")
    out = Tensor(np.pad(a.data, ((0, 0), (pad, pad), (pad, pad))))

    def bw(g):
        _accum(a, g[:, pad:-pad, pad:-pad])

    return _record(out, (a,), bw)


def im2col3x3(a) -> Tensor:
    """Unfold a [C x h x w] map into [h*w x 9C] columns (zero padding, stride 1).

    Column blocks are tap-major: tap (di, dj) occupies columns
    [(3*di + dj)*C : (3*di + dj + 1)*C].
    """
    a = _t(a)
    if a.data.ndim != 3:
        raise ShapeError(f"im2col3x3 expects [C x h x w], got shape {a.shape}")
    c, h, w = a.data.shape
    xp = np.pad(a.data, ((0, 0), (1, 1), (1, 1)))
    cols = np.empty((h * w, 9 * c), dtype=np.float32)
    for di in range(3):
        for dj in range(3):
            tap = 3 * di + dj
            block = xp[:, di : di + h, dj : dj + w].reshape(c, h * w).T
            cols[:, tap * c : (tap + 1) * c] = block
    out = Tensor(cols)

    def bw(g):
        gp = np.zeros((c, h + 2, w + 2), dtype=np.float32)
        for di in range(3):
            for dj in range(3):
                tap = 3 * di + dj
                block = g[:, tap * c : (tap + 1) * c].T.reshape(c, h, w)
                gp[:, di : di + h, dj : dj + w] += block
        _accum(a, gp[:, 1:-1, 1:-1])

    return _record(out, (a,), bw)


# ---------------------------------------------------------------------------
# linear algebra and normalization


def matmul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2 or ad.ndim != bd.ndim:
        raise ShapeError(f"matmul requires two rank-2 or two rank-3 operands, got {a.shape} @ {b.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ: {a.shape} @ {b.shape}")
    if ad.ndim == 3 and ad.shape[0] != bd.shape[0]:
        raise ShapeError(f"matmul: batch dimensions differ: {a.shape} @ {b.shape}")
    batch = ad.shape[0] if ad.ndim == 3 else 1
    _add_macs(batch * ad.shape[-2] * ad.shape[-1] * bd.shape[-1])
    out = Tensor(ad @ bd)

    def bw(g):
        _accum(a, g @ np.swapaxes(bd, -1, -2))
        _accum(b, np.swapaxes(ad, -1, -2) @ g)

    return _record(out, (a, b), bw)


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax along one axis."""
    a = _t(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(p)

    def bw(g):
        inner = (g * out.data).sum(axis=axis, keepdims=True)
        _accum(a, out.data * (g - inner))

    return _record(out, (a,), bw)


def layer_norm(a, gamma, beta, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    a, gamma, beta = _t(a), _t(gamma), _t(beta)
    c = a.data.shape[-1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(
            f"layer_norm affine parameters must have shape ({c},), got {gamma.shape} and {beta.shape}"
        )
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.float32(eps))
    xh = xc * inv
    out = Tensor(xh * gamma.data + beta.data)

    def bw(g):
        lead = tuple(range(g.ndim - 1))
        _accum(gamma, (g * xh).sum(axis=lead))
        _accum(beta, g.sum(axis=lead))
        dxh = g * gamma.data
        m1 = dxh.mean(axis=-1, keepdims=True)
        m2 = (dxh * xh).mean(axis=-1, keepdims=True)
        _accum(a, (inv * (dxh - m1 - xh * m2)).astype(np.float32))

    return _record(out, (a, gamma, beta), bw)


def attention(q, k, v, heads: int, wq, wk, wv, wo) -> Tensor:
    """Multi-head scaled dot-product attention with learned projections.

    ``q`` is [nq x C], ``k`` and ``v`` are [nk x C]; per-head scale is
    1/sqrt(C/heads). Self-attention is the q = k = v case.
    """
    q, k, v = _t(q), _t(k), _t(v)
    nq, c = q.data.shape
    nk = k.data.shape[0]
    if k.data.shape[1] != c or v.data.shape != k.data.shape:
        raise ShapeError(f"attention operands disagree: q {q.shape}, k {k.shape}, v {v.shape}")
    if c % heads != 0:
        raise ShapeError(f"channel width {c} is not divisible by {heads} heads")
    d = c // heads

    def split_heads(t, n):
        return transpose(reshape(t, (n, heads, d)), (1, 0, 2))

    qh = split_heads(matmul(q, wq), nq)
    kh = split_heads(matmul(k, wk), nk)
    vh = split_heads(matmul(v, wv), nk)
    scores = scale(matmul(qh, transpose(kh, (0, 2, 1))), 1.0 / math.sqrt(d))
    probs = softmax(scores, axis=-1)
    ctx = matmul(probs, vh)
    merged = reshape(transpose(ctx, (1, 0, 2)), (nq, c))
    return matmul(merged, wo)


# ---------------------------------------------------------------------------
# binary dump format


def write_tensor(path, array) -> None:
    """Write an array in the binary token-tensor dump format (bit-exact)."""
    arr = array.data if isinstance(array, Tensor) else np.asarray(array, dtype=np.float32)
    arr = np.ascontiguousarray(arr, dtype="<f4")
    header = json.dumps({"shape": list(arr.shape), "dtype": "f32"}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(DUMP_MAGIC)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        f.write(arr.tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != DUMP_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        if header.get("dtype") != "f32":
            raise ValueError(f"{path}: unsupported dtype {header.get('dtype')!r}")
        shape = tuple(int(s) for s in header["shape"])
        count = int(np.prod(shape)) if shape else 1
        payload = f.read(count * 4)
    arr = np.frombuffer(payload, dtype="<f4", count=count).reshape(shape)
    return arr.astype(np.float32, copy=True)
