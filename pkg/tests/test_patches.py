import numpy as np
import pytest

from tokentrack.patches import (
    FrameSpec,
    PatchEmbedding,
    TemporalEmbedding,
    flatten_patches,
    stack_templates,
)
from tokentrack.tensor import ShapeError, Tensor


def test_token_counts_match_grid_formula():
    assert FrameSpec(112, 112).tokens == 49
    assert FrameSpec(224, 224).tokens == 196
    assert FrameSpec(64, 64, patch=8).tokens == 64


def test_non_divisible_dims_rejected():
    with pytest.raises(ShapeError):
        FrameSpec(100, 112)


def test_zero_frame_zero_bias_yields_positional_embedding():
    rng = np.random.default_rng(0)
    spec = FrameSpec(32, 32)
    emb = PatchEmbedding(spec, 8, rng)
    emb.bias.data[:] = 0.0
    tokens = emb.forward(np.zeros((3, 32, 32), dtype=np.float32))
    assert np.array_equal(tokens.data, emb.pos.data)


def test_patch_flattening_is_row_major():
    spec = FrameSpec(32, 32)
    frame = np.zeros((3, 32, 32), dtype=np.float32)
    frame[1, 16:, :16] = 7.0  # patch (1, 0) = row-major index 2
    patches = flatten_patches(frame, spec)
    assert patches.shape == (4, 768)
    assert patches[2].max() == 7.0
    assert patches[0].max() == 0.0


def test_embedding_is_linear_in_frame():
    rng = np.random.default_rng(1)
    spec = FrameSpec(32, 32)
    emb = PatchEmbedding(spec, 8, rng)
    f1 = rng.random((3, 32, 32)).astype(np.float32)
    f2 = rng.random((3, 32, 32)).astype(np.float32)
    base = emb.forward(np.zeros_like(f1)).data
    t1 = emb.forward(f1).data - base
    t2 = emb.forward(f2).data - base
    both = emb.forward(f1 + f2).data - base
    assert np.allclose(both, t1 + t2, atol=1e-4)


def test_stack_single_frame_is_frame_plus_offset():
    rng = np.random.default_rng(2)
    temporal = TemporalEmbedding(3, 4, rng)
    frame = Tensor(rng.normal(size=(5, 4)))
    stack = stack_templates([frame], temporal)
    expected = frame.data + temporal.table.data[0, 0]
    assert np.allclose(stack.tokens.data, expected, atol=1e-6)
    assert stack.frames == 1 and stack.tokens_per_frame == 5


def test_stack_row_count_and_frame_of():
    rng = np.random.default_rng(3)
    temporal = TemporalEmbedding(5, 8, rng)
    spec = FrameSpec(112, 112)
    emb = PatchEmbedding(spec, 8, rng)
    frames = [emb.forward(rng.random((3, 112, 112)).astype(np.float32)) for _ in range(5)]
    stack = stack_templates(frames, temporal)
    assert stack.tokens.shape == (245, 8)
    assert np.array_equal(stack.frame_of, np.repeat(np.arange(5), 49))


def test_zero_temporal_table_is_pure_concatenation():
    rng = np.random.default_rng(4)
    temporal = TemporalEmbedding(2, 4, rng)
    temporal.table.data[:] = 0.0
    frames = [Tensor(rng.normal(size=(3, 4))) for _ in range(2)]
    stack = stack_templates(frames, temporal)
    assert np.array_equal(stack.tokens.data, np.concatenate([f.data for f in frames]))


def test_temporal_offset_is_uniform_within_frame():
    rng = np.random.default_rng(5)
    temporal = TemporalEmbedding(3, 4, rng)
    frames = [Tensor(rng.normal(size=(6, 4))) for _ in range(3)]
    stack = stack_templates(frames, temporal)
    for t in range(3):
        block = stack.tokens.data[t * 6 : (t + 1) * 6] - frames[t].data
        assert np.allclose(block, temporal.table.data[t, 0], atol=1e-6)


def test_stack_is_order_sensitive():
    rng = np.random.default_rng(6)
    temporal = TemporalEmbedding(3, 4, rng)
    frames = [Tensor(rng.normal(size=(2, 4))) for _ in range(3)]
    perm = [2, 0, 1]
    stack = stack_templates([frames[p] for p in perm], temporal)
    for slot, src in enumerate(perm):
        expected = frames[src].data + temporal.table.data[slot, 0]
        assert np.allclose(stack.tokens.data[slot * 2 : (slot + 1) * 2], expected, atol=1e-6)


def test_stack_rejects_too_many_frames():
    rng = np.random.default_rng(7)
    temporal = TemporalEmbedding(2, 4, rng)
    frames = [Tensor(rng.normal(size=(2, 4))) for _ in range(3)]
    with pytest.raises(ShapeError):
        stack_templates(frames, temporal)


def test_stack_rejects_mismatched_grids():
    rng = np.random.default_rng(8)
    temporal = TemporalEmbedding(2, 4, rng)
    with pytest.raises(ShapeError):
        stack_templates([Tensor(np.zeros((2, 4))), Tensor(np.zeros((3, 4)))], temporal)
