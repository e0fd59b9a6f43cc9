"""Assembled tracker model: tokenize, compress, interact, predict."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .compressor import (
    CompressionResult,
    CorrelationConfig,
    CorrelationStack,
    ScoreProjector,
    compress,
)
from .head import BoxN, HeadMaps, PredictionHead, decode
from .interaction import InteractionConfig, InteractionEncoder
from .patches import FrameSpec, PatchEmbedding, TemporalEmbedding, stack_templates
from .tensor import Tensor, read_tensor, write_tensor

CHECKPOINT_MANIFEST = "manifest.json"


class ConfigError(ValueError):
    """Invalid run or model configuration."""


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 256
    heads: int = 8
    patch: int = 16
    template_size: int = 112
    search_size: int = 224
    templates: int = 5
    keep_ratio: float = 0.9
    correlation_depth: int = 8
    interaction_blocks: int = 3
    inner_blocks: int = 4
    head_depth: int = 3
    atc_enabled: bool = True
    cross_attention: bool = True
    init_seed: int = 0
    score_seed: int = 7

    def validate(self) -> "ModelConfig":
        if self.channels % self.heads:
            raise ConfigError(f"channels {self.channels} not divisible by heads {self.heads}")
        if self.template_size % self.patch or self.search_size % self.patch:
            raise ConfigError("frame sizes must be divisible by the patch size")
        if not 0.0 < self.keep_ratio <= 1.0:
            raise ConfigError(f"keep ratio must lie in (0, 1], got {self.keep_ratio}")
        if self.templates < 1:
            raise ConfigError(f"need at least one template frame, got {self.templates}")
        return self

    @property
    def template_spec(self) -> FrameSpec:
        return FrameSpec(self.template_size, self.template_size, 3, self.patch)

    @property
    def search_spec(self) -> FrameSpec:
        return FrameSpec(self.search_size, self.search_size, 3, self.patch)

    @property
    def tokens_per_template(self) -> int:
        return self.template_spec.tokens

    @property
    def search_tokens(self) -> int:
        return self.search_spec.tokens

    @property
    def search_grid(self) -> tuple[int, int]:
        return self.search_spec.grid


class TrackerModel:
    """End-to-end compress-then-interact tracker."""

    def __init__(self, cfg: ModelConfig):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.init_seed)
        self.template_embed = PatchEmbedding(cfg.template_spec, cfg.channels, rng)
        self.search_embed = PatchEmbedding(cfg.search_spec, cfg.channels, rng)
        self.temporal = TemporalEmbedding(cfg.templates, cfg.channels, rng)
        self.correlation = CorrelationStack(
            CorrelationConfig(cfg.correlation_depth, cfg.heads, cfg.channels), rng
        )
        self.projector = ScoreProjector(cfg.channels, cfg.score_seed)
        self.encoder = InteractionEncoder(
            InteractionConfig(
                channels=cfg.channels,
                heads=cfg.heads,
                inner_blocks=cfg.inner_blocks,
                num_blocks=cfg.interaction_blocks,
                search_grid=cfg.search_grid,
                cross_attention=cfg.cross_attention,
            ),
            rng,
        )
        self.head = PredictionHead(cfg.channels, cfg.search_grid, cfg.head_depth, rng)

    # -- parameters ---------------------------------------------------------

    def named_parameters(self):
        yield from self.template_embed.named_parameters("template_embed.")
        yield from self.search_embed.named_parameters("search_embed.")
        yield from self.temporal.named_parameters("temporal.")
        yield from self.correlation.named_parameters("correlation.")
        yield from self.encoder.named_parameters("encoder.")
        yield from self.head.named_parameters("head.")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    # -- forward paths ------------------------------------------------------

    def embed_templates(self, template_frames: list[np.ndarray]) -> list[Tensor]:
        return [self.template_embed.forward(f) for f in template_frames]

    def compress_templates(self, template_tokens: list[Tensor]) -> tuple[Tensor, CompressionResult | None]:
        stack = stack_templates(template_tokens, self.temporal)
        if not self.cfg.atc_enabled:
            return stack.tokens, None
        result = compress(stack, self.correlation, self.projector, self.cfg.keep_ratio)
        return result.compressed, result

    def forward(
        self, template_frames: list[np.ndarray], search_frame: np.ndarray
    ) -> tuple[HeadMaps, CompressionResult | None]:
        template_tokens = self.embed_templates(template_frames)
        compressed, result = self.compress_templates(template_tokens)
        search_tokens = self.search_embed.forward(search_frame)
        refined = self.encoder.forward(compressed, search_tokens)
        maps = self.head.forward(refined)
        return maps, result

    def locate(
        self, template_frames: list[np.ndarray], search_frame: np.ndarray
    ) -> tuple[BoxN, float]:
        """Inference path: box in search-crop coordinates plus peak score."""
        maps, _ = self.forward(template_frames, search_frame)
        return decode(maps)

    # -- checkpointing ------------------------------------------------------

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        tensors = {}
        for name, tensor in self.named_parameters():
            fname = name.replace("/", "_") + ".tokt"
            write_tensor(directory / fname, tensor)
            tensors[name] = {"file": fname, "shape": list(tensor.shape)}
        # frozen score projection travels with the checkpoint
        write_tensor(directory / "score_projection.tokt", self.projector.w)
        manifest = {
            "format": "tokentrack-checkpoint-v1",
            "config": asdict(self.cfg),
            "score_projection": "score_projection.tokt",
            "tensors": tensors,
        }
        with open(directory / CHECKPOINT_MANIFEST, "w") as f:
            json.dump(manifest, f, indent=1, sort_keys=True)

    @classmethod
    def load(cls, directory) -> "TrackerModel":
        directory = Path(directory)
        with open(directory / CHECKPOINT_MANIFEST) as f:
            manifest = json.load(f)
        cfg = ModelConfig(**manifest["config"])
        model = cls(cfg)
        params = dict(model.named_parameters())
        if set(params) != set(manifest["tensors"]):
            missing = set(params) ^ set(manifest["tensors"])
            raise ConfigError(f"checkpoint does not match model: {sorted(missing)[:5]}")
        for name, entry in manifest["tensors"].items():
            arr = read_tensor(directory / entry["file"])
            if arr.shape != params[name].data.shape:
                raise ConfigError(
                    f"checkpoint tensor {name} has shape {arr.shape}, expected {params[name].data.shape}"
                )
            params[name].data = arr
        model.projector.w = read_tensor(directory / manifest["score_projection"])
        return model
