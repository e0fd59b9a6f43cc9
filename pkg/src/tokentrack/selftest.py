"""Quick in-process sanity checks behind the ``selftest`` CLI command."""

from __future__ import annotations

import math

import numpy as np

from .compressor import cosine_argmax, partition
from .costs import macs_attention, macs_pipeline
from .head import BoxN
from .losses import giou
from .tensor import GradTape, MacCounter, Tensor, matmul, softmax, tsum


def _check_softmax() -> bool:
    x = softmax(Tensor(np.random.default_rng(0).normal(size=(5, 7))), axis=-1)
    return bool(np.allclose(x.data.sum(axis=-1), 1.0, atol=1e-6))


def _check_partition() -> bool:
    rng = np.random.default_rng(1)
    for _ in range(50):
        total = int(rng.integers(2, 128))
        r = float(rng.uniform(0.05, 0.95))
        if math.floor(r * total) == 0:
            continue
        kept, merged = partition(rng.normal(size=total), r, total)
        if len(kept) != math.floor(r * total) or len(kept) + len(merged) != total:
            return False
    return True


def _check_merge_argmax() -> bool:
    rng = np.random.default_rng(2)
    src = rng.normal(size=(5, 4))
    dst = rng.normal(size=(3, 4))
    got = cosine_argmax(src, dst)
    for i in range(5):
        sims = [
            float(np.dot(src[i], dst[j]) / (np.linalg.norm(src[i]) * np.linalg.norm(dst[j])))
            for j in range(3)
        ]
        if int(np.argmax(sims)) != got[i]:
            return False
    return True


def _check_gradient() -> bool:
    a = Tensor(np.random.default_rng(3).normal(size=(3, 3)), requires_grad=True)
    b = Tensor(np.random.default_rng(4).normal(size=(3, 3)))
    with GradTape() as tape:
        loss = tsum(matmul(a, b))
        tape.backward(loss)
    expected = np.ones((3, 3), dtype=np.float32) @ b.data.T
    return bool(np.allclose(a.grad, expected, rtol=1e-5))


def _check_giou() -> bool:
    box = BoxN(0.5, 0.5, 0.2, 0.2)
    return abs(giou(box, box) - 1.0) < 1e-6


def _check_costs() -> bool:
    if macs_attention(1, 1, 1, 1) != 6:
        return False
    with MacCounter() as counter:
        matmul(Tensor(np.ones((3, 4))), Tensor(np.ones((4, 5))))
    if counter.macs != 3 * 4 * 5:
        return False
    a = macs_pipeline(8, 4, 4, 0.5, 1, 1, 1, 1)
    b = macs_pipeline(8, 4, 4, 1.0, 1, 1, 1, 1)
    return a.total < b.total


CHECKS = [
    ("softmax rows normalize", _check_softmax),
    ("partition cardinality", _check_partition),
    ("merge argmax", _check_merge_argmax),
    ("matmul gradient", _check_gradient),
    ("giou identity", _check_giou),
    ("cost accounting", _check_costs),
]


def run() -> bool:
    ok = True
    for name, fn in CHECKS:
        passed = fn()
        print(f"[{'PASS' if passed else 'FAIL'}] {name}")
        ok = ok and passed
    return ok
