import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import tokentrack.compressor as compressor_mod
from tokentrack.compressor import CompressionResult
from tokentrack.model import ModelConfig, TrackerModel
from tokentrack.synthetic import ScenarioSpec, generate_scenario
from tokentrack.tracking import TemplateBank, mean_iou, track_sequence


def tiny_model(**overrides) -> TrackerModel:
    base = dict(
        channels=8, heads=2, patch=16, template_size=32, search_size=32,
        templates=3, keep_ratio=0.9, correlation_depth=1, interaction_blocks=1,
        inner_blocks=1, head_depth=1,
    )
    base.update(overrides)
    return TrackerModel(ModelConfig(**base))


def make_bank(capacity=5, threshold=0.7) -> TemplateBank:
    bank = TemplateBank(capacity=capacity, threshold=threshold)
    bank.initialize(np.zeros((3, 4, 4), dtype=np.float32), frame_index=0)
    return bank


# -- bank policy -------------------------------------------------------------


def test_low_confidence_candidate_is_rejected():
    bank = make_bank()
    frame = np.ones((3, 4, 4), dtype=np.float32)
    assert not bank.update(frame, confidence=0.7, frame_index=1)  # not strictly above
    assert len(bank.entries) == 1


def test_full_bank_evicts_oldest_non_initial():
    bank = make_bank(capacity=3)
    for t in (1, 2):
        bank.update(np.full((3, 4, 4), t, dtype=np.float32), confidence=0.9, frame_index=t)
    assert [e.frame_index for e in bank.entries] == [0, 1, 2]
    bank.update(np.full((3, 4, 4), 3.0, dtype=np.float32), confidence=0.9, frame_index=3)
    assert [e.frame_index for e in bank.entries] == [0, 2, 3]
    assert bank.entries[0].frame_index == 0  # initial frame survives


def test_zero_threshold_admits_every_positive_confidence():
    bank = make_bank(capacity=4, threshold=0.0)
    for t in range(1, 6):
        assert bank.update(np.zeros((3, 4, 4), dtype=np.float32), confidence=0.01, frame_index=t)
    assert len(bank.entries) == 4


def test_update_requires_initialization():
    bank = TemplateBank(capacity=3, threshold=0.5)
    with pytest.raises(ValueError, match="initialized"):
        bank.update(np.zeros((3, 4, 4), dtype=np.float32), 0.9, 1)


@settings(max_examples=100, deadline=None)
@given(
    confidences=st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=0, max_size=30),
    capacity=st.integers(min_value=2, max_value=6),
    threshold=st.floats(min_value=0.0, max_value=1.0),
)
def test_bank_invariants_hold_for_any_stream(confidences, capacity, threshold):
    bank = make_bank(capacity=capacity, threshold=threshold)
    for t, conf in enumerate(confidences, start=1):
        bank.update(np.zeros((3, 4, 4), dtype=np.float32), confidence=conf, frame_index=t)
        bank.check_invariants()


# -- tracking loop -----------------------------------------------------------


def static_scenario(frames=6):
    return generate_scenario(
        ScenarioSpec(seed=0, num_frames=frames, start=(0.5, 0.5), end=(0.5, 0.5),
                     target_size=0.25, noise=0.0, distractors=0)
    )


def test_first_frame_reports_ground_truth():
    model = tiny_model()
    scenario = static_scenario()
    steps = track_sequence(model, scenario)
    assert steps[0].box == scenario.boxes[0]
    assert steps[0].iou == 1.0 and steps[0].score == 1.0


def test_oracle_locator_tracks_perfectly():
    model = tiny_model()
    scenario = generate_scenario(
        ScenarioSpec(seed=1, num_frames=8, start=(0.35, 0.4), end=(0.6, 0.55),
                     target_size=0.25, noise=0.0, distractors=0)
    )

    def oracle(t, template_frames, search_crop, rect):
        return rect.to_crop_box(scenario.boxes[t]), 1.0

    steps = track_sequence(model, scenario, locator=oracle)
    for s in steps:
        assert s.iou > 0.999


def test_track_emits_one_step_per_frame():
    model = tiny_model()
    scenario = static_scenario(frames=5)
    steps = track_sequence(model, scenario)
    assert [s.frame for s in steps] == list(range(5))
    for s in steps:
        assert 0.0 <= s.score <= 1.0
        assert 0.0 <= s.iou <= 1.0


def test_keep_ratio_is_inert_when_merge_is_bypassed(monkeypatch):
    def passthrough_merge(tokens, kept, merged):
        n = tokens.shape[0]
        return CompressionResult(
            compressed=tokens,
            kept_idx=np.arange(n, dtype=np.int64),
            assignment={},
            scores=np.zeros(n, dtype=np.float32),
            r=1.0,
        )

    scenario = static_scenario(frames=4)
    monkeypatch.setattr(compressor_mod, "guided_merge", passthrough_merge)
    steps_low = track_sequence(tiny_model(keep_ratio=0.9), scenario)
    steps_full = track_sequence(tiny_model(keep_ratio=1.0), scenario)
    for a, b in zip(steps_low, steps_full):
        assert a.box == b.box
        assert a.score == b.score


def test_mean_iou_skips_the_given_first_frame():
    model = tiny_model()
    steps = track_sequence(model, static_scenario(frames=4))
    values = [s.iou for s in steps[1:]]
    assert np.isclose(mean_iou(steps), np.mean(values))
