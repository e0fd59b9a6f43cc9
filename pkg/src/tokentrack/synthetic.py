"""Deterministic synthetic tracking scenarios and crop utilities.

Scenarios render a bright square moving along a prescribed path over a noisy
background, optionally with dimmer distractor squares. Pixel data is a pure
function of the spec, so identical specs reproduce bit-identical frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .head import BoxN
from .model import ConfigError


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int = 0
    num_frames: int = 30
    frame_size: int = 128
    start: tuple[float, float] = (0.3, 0.35)
    end: tuple[float, float] = (0.7, 0.65)
    target_size: float = 0.25
    size_drift: float = 0.0  # relative size change from first to last frame
    distractors: int = 1
    noise: float = 0.02

    def validate(self) -> "ScenarioSpec":
        if self.num_frames < 1:
            raise ConfigError(f"need at least one frame, got {self.num_frames}")
        for t in range(self.num_frames):
            box = self.box_at(t)
            x1, y1, x2, y2 = box.to_xyxy()
            if x1 < 0.0 or y1 < 0.0 or x2 > 1.0 or y2 > 1.0:
                raise ConfigError(f"trajectory leaves the frame at step {t}: {box}")
        return self

    def box_at(self, t: int) -> BoxN:
        a = t / max(1, self.num_frames - 1)
        cx = self.start[0] + a * (self.end[0] - self.start[0])
        cy = self.start[1] + a * (self.end[1] - self.start[1])
        side = self.target_size * (1.0 + a * self.size_drift)
        return BoxN(cx=cx, cy=cy, w=side, h=side)


@dataclass
class SyntheticScenario:
    spec: ScenarioSpec
    frames: list[np.ndarray] = field(default_factory=list)  # each [3 x H x W]
    boxes: list[BoxN] = field(default_factory=list)


def _paint_square(frame: np.ndarray, box: BoxN, value: np.ndarray) -> None:
    _, h, w = frame.shape
    x1, y1, x2, y2 = box.to_xyxy()
    c0, c1 = int(round(x1 * w)), int(round(x2 * w))
    r0, r1 = int(round(y1 * h)), int(round(y2 * h))
    frame[:, max(0, r0) : min(h, r1), max(0, c0) : min(w, c1)] = value[:, None, None]


def generate_scenario(spec: ScenarioSpec) -> SyntheticScenario:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    size = spec.frame_size
    target_color = np.array([1.0, 0.95, 0.9], dtype=np.float32)
    distractor_color = np.array([0.55, 0.55, 0.6], dtype=np.float32)

    # distractor paths stay in the opposite half of the frame from the target
    distractor_tracks = []
    for _ in range(spec.distractors):
        base = rng.uniform(0.15, 0.85, size=2)
        drift = rng.uniform(-0.15, 0.15, size=2)
        side = rng.uniform(0.08, 0.16)
        distractor_tracks.append((base, drift, side))

    frames: list[np.ndarray] = []
    boxes: list[BoxN] = []
    for t in range(spec.num_frames):
        a = t / max(1, spec.num_frames - 1)
        frame = np.full((3, size, size), 0.15, dtype=np.float32)
        if spec.noise > 0.0:
            frame += rng.normal(0.0, spec.noise, frame.shape).astype(np.float32)
        box = spec.box_at(t)
        for base, drift, side in distractor_tracks:
            cx, cy = np.clip(base + a * drift, side, 1.0 - side)
            if abs(cx - box.cx) + abs(cy - box.cy) < box.w + side:
                continue  # never let a distractor overlap the target
            _paint_square(frame, BoxN(float(cx), float(cy), float(side), float(side)), distractor_color)
        _paint_square(frame, box, target_color)
        frames.append(np.clip(frame, 0.0, 1.0))
        boxes.append(box)
    return SyntheticScenario(spec=spec, frames=frames, boxes=boxes)


# ---------------------------------------------------------------------------
# crops


def resize_bilinear(image: np.ndarray, out_size: int) -> np.ndarray:
    """Bilinear resize of a [C x H x W] image to a square output."""
    c, h, w = image.shape
    ys = (np.arange(out_size, dtype=np.float64) + 0.5) * (h / out_size) - 0.5
    xs = (np.arange(out_size, dtype=np.float64) + 0.5) * (w / out_size) - 0.5
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0).astype(np.float32)[None, :, None]
    wx = np.clip(xs - x0, 0.0, 1.0).astype(np.float32)[None, None, :]
    top = image[:, y0][:, :, x0] * (1 - wx) + image[:, y0][:, :, x1] * wx
    bottom = image[:, y1][:, :, x0] * (1 - wx) + image[:, y1][:, :, x1] * wx
    return (top * (1 - wy) + bottom * wy).astype(np.float32)


@dataclass(frozen=True)
class CropRect:
    """Square pixel region of a frame, possibly extending past its borders."""

    x0: int
    y0: int
    side: int
    frame_size: int

    def to_frame_box(self, box: BoxN) -> BoxN:
        """Map a crop-normalized box back to frame-normalized coordinates."""
        s = self.side / self.frame_size
        return BoxN(
            cx=min(1.0, max(0.0, (self.x0 + box.cx * self.side) / self.frame_size)),
            cy=min(1.0, max(0.0, (self.y0 + box.cy * self.side) / self.frame_size)),
            w=min(1.0, box.w * s),
            h=min(1.0, box.h * s),
        )

    def to_crop_box(self, box: BoxN) -> BoxN:
        cx = (box.cx * self.frame_size - self.x0) / self.side
        cy = (box.cy * self.frame_size - self.y0) / self.side
        return BoxN(
            cx=min(1.0, max(0.0, cx)),
            cy=min(1.0, max(0.0, cy)),
            w=min(1.0, box.w * self.frame_size / self.side),
            h=min(1.0, box.h * self.frame_size / self.side),
        )


def crop_region(
    frame: np.ndarray, center: tuple[float, float], side_px: int, out_size: int
) -> tuple[np.ndarray, CropRect]:
    """Extract a square crop (edge-padded at borders) and resize it."""
    _, h, w = frame.shape
    side_px = max(8, int(side_px))
    x0 = int(round(center[0] * w - side_px / 2.0))
    y0 = int(round(center[1] * h - side_px / 2.0))
    pad = side_px
    padded = np.pad(frame, ((0, 0), (pad, pad), (pad, pad)), mode="edge")
    patch = padded[:, y0 + pad : y0 + pad + side_px, x0 + pad : x0 + pad + side_px]
    return resize_bilinear(patch, out_size), CropRect(x0=x0, y0=y0, side=side_px, frame_size=w)


def context_crop(
    frame: np.ndarray, box: BoxN, context: float, out_size: int
) -> tuple[np.ndarray, CropRect]:
    """Crop around a box with a context factor on its larger side."""
    _, h, w = frame.shape
    side_px = int(round(context * max(box.w, box.h) * w))
    return crop_region(frame, (box.cx, box.cy), side_px, out_size)
