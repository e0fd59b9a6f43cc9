"""Template memory bank and the frame-by-frame tracking loop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .head import BoxN, box_iou
from .model import TrackerModel
from .synthetic import SyntheticScenario, context_crop

SEARCH_CONTEXT = 2.0  # crop side relative to the larger box side
TEMPLATE_CONTEXT = 2.0


@dataclass
class BankEntry:
    frame: np.ndarray  # template crop pixels [3 x s x s]
    confidence: float
    frame_index: int


@dataclass
class TemplateBank:
    """Bounded template store; the initial frame is never evicted.

    New entries are admitted only above the confidence threshold. When full,
    the oldest non-initial entry is evicted.
    """

    capacity: int
    threshold: float
    entries: list[BankEntry] = field(default_factory=list)

    def initialize(self, frame: np.ndarray, frame_index: int = 0) -> None:
        self.entries = [BankEntry(frame=frame, confidence=1.0, frame_index=frame_index)]

    def update(self, frame: np.ndarray, confidence: float, frame_index: int) -> bool:
        if not self.entries:
            raise ValueError("bank must be initialized with the first frame before updates")
        if confidence <= self.threshold:
            return False
        entry = BankEntry(frame=frame, confidence=confidence, frame_index=frame_index)
        if len(self.entries) >= self.capacity:
            self.entries.pop(1)  # oldest non-initial
        self.entries.append(entry)
        return True

    def frames(self) -> list[np.ndarray]:
        return [e.frame for e in self.entries]

    def check_invariants(self) -> None:
        assert 1 <= len(self.entries) <= self.capacity
        assert self.entries[0].frame_index == min(e.frame_index for e in self.entries)
        tail = [e.frame_index for e in self.entries[1:]]
        assert tail == sorted(tail)


@dataclass
class TrackStep:
    frame: int
    box: BoxN
    score: float
    iou: float


def track_sequence(
    model: TrackerModel,
    scenario: SyntheticScenario,
    templates: int | None = None,
    tau: float = 0.7,
    locator=None,
) -> list[TrackStep]:
    """Run the tracker over a scenario and report per-frame boxes and IoU.

    ``locator`` overrides the model's inference call; it receives
    ``(frame_index, template_frames, search_crop, crop_rect)`` and returns a
    crop-normalized box plus a confidence. Frame 0 is the given ground truth.
    """
    cfg = model.cfg
    capacity = templates or cfg.templates
    bank = TemplateBank(capacity=capacity, threshold=tau)
    first_crop, _ = context_crop(
        scenario.frames[0], scenario.boxes[0], TEMPLATE_CONTEXT, cfg.template_size
    )
    bank.initialize(first_crop, frame_index=0)

    steps = [TrackStep(frame=0, box=scenario.boxes[0], score=1.0, iou=1.0)]
    previous = scenario.boxes[0]
    for t in range(1, len(scenario.frames)):
        frame = scenario.frames[t]
        search_crop, rect = context_crop(frame, previous, SEARCH_CONTEXT, cfg.search_size)
        if locator is not None:
            crop_box, score = locator(t, bank.frames(), search_crop, rect)
        else:
            crop_box, score = model.locate(bank.frames(), search_crop)
        box = rect.to_frame_box(crop_box)
        iou = box_iou(box, scenario.boxes[t])
        steps.append(TrackStep(frame=t, box=box, score=score, iou=iou))
        template_crop, _ = context_crop(frame, box, TEMPLATE_CONTEXT, cfg.template_size)
        bank.update(template_crop, confidence=score, frame_index=t)
        previous = box
    return steps


def mean_iou(steps: list[TrackStep], skip_first: bool = True) -> float:
    chosen = steps[1:] if skip_first else steps
    if not chosen:
        return 0.0
    return float(np.mean([s.iou for s in chosen]))
