"""Toy training loop: Adam on the composite loss over synthetic crops."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .losses import LossWeights, make_target, total_loss
from .model import TrackerModel
from .synthetic import SyntheticScenario, context_crop, crop_region
from .tensor import GradTape, Tensor, add, scale
from .tracking import TEMPLATE_CONTEXT


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step


class Adam:
    """Standard Adam with optional global-norm gradient clipping."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def step(self, clip_norm: float | None = 1.0) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        if clip_norm is not None:
            total = np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads))
            if total > clip_norm:
                factor = np.float32(clip_norm / total)
                grads = [g * factor for g in grads]
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = (p.data - self.lr * update).astype(np.float32)


@dataclass
class TrainSample:
    template_frames: list[np.ndarray]
    search_crop: np.ndarray
    target_box: object  # BoxN in crop coordinates


def sample_training_example(
    model: TrackerModel,
    scenario: SyntheticScenario,
    frame_index: int,
    rng: np.random.Generator,
    center_jitter: float = 0.12,
    scale_jitter: float = 0.25,
) -> TrainSample:
    """Build one (templates, jittered search crop, target) example.

    Templates are the initial frame plus frames sampled uniformly (with
    replacement) from the history before ``frame_index``, ordered by time.
    """
    cfg = model.cfg
    history = rng.integers(0, frame_index, size=cfg.templates - 1) if frame_index > 0 else []
    picks = [0] + sorted(int(i) for i in history)
    template_frames = []
    for idx in picks[: cfg.templates]:
        crop, _ = context_crop(
            scenario.frames[idx], scenario.boxes[idx], TEMPLATE_CONTEXT, cfg.template_size
        )
        template_frames.append(crop)

    gt = scenario.boxes[frame_index]
    frame = scenario.frames[frame_index]
    size = frame.shape[-1]
    side = 2.0 * max(gt.w, gt.h) * (2.0 ** rng.uniform(-scale_jitter, scale_jitter))
    cx = gt.cx + rng.uniform(-center_jitter, center_jitter) * side
    cy = gt.cy + rng.uniform(-center_jitter, center_jitter) * side
    crop, rect = crop_region(frame, (cx, cy), int(round(side * size)), cfg.search_size)
    return TrainSample(
        template_frames=template_frames,
        search_crop=crop,
        target_box=rect.to_crop_box(gt),
    )


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    parts: list[dict] = field(default_factory=list)


def train_toy(
    model: TrackerModel,
    scenarios: list[SyntheticScenario],
    steps: int,
    lr: float = 1e-3,
    batch_size: int = 2,
    seed: int = 0,
    weights: LossWeights = LossWeights(),
    clip_norm: float = 1.0,
    log_every: int = 0,
) -> TrainResult:
    """Run seeded gradient-descent steps; aborts on a non-finite loss."""
    rng = np.random.default_rng(seed)
    optimizer = Adam(model.parameters(), lr=lr)
    result = TrainResult()
    grid = model.cfg.search_grid
    for step in range(steps):
        with GradTape() as tape:
            batch_loss = None
            part_acc: dict[str, float] = {}
            for _ in range(batch_size):
                scenario = scenarios[int(rng.integers(0, len(scenarios)))]
                frame_index = int(rng.integers(1, len(scenario.frames)))
                sample = sample_training_example(model, scenario, frame_index, rng)
                maps, _ = model.forward(sample.template_frames, sample.search_crop)
                target = make_target(sample.target_box, grid)
                loss, parts = total_loss(maps, target, weights)
                batch_loss = loss if batch_loss is None else add(batch_loss, loss)
                for k, v in parts.items():
                    part_acc[k] = part_acc.get(k, 0.0) + v / batch_size
            batch_loss = scale(batch_loss, 1.0 / batch_size)
            value = float(batch_loss.data)
            if not np.isfinite(value):
                raise TrainingDiverged(step, value)
            tape.backward(batch_loss)
        optimizer.step(clip_norm=clip_norm)
        result.losses.append(value)
        result.parts.append(part_acc)
        if log_every and step % log_every == 0:
            print(f"step {step}: loss {value:.4f}")
    return result
