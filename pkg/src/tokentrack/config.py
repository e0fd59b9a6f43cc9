"""Run configuration: model dims, scenario recipe, and training knobs."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

from .model import ConfigError, ModelConfig
from .synthetic import ScenarioSpec, SyntheticScenario, generate_scenario

import numpy as np


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    tau: float = 0.7
    seed: int = 0
    steps: int = 2000
    learning_rate: float = 1e-3
    batch_size: int = 2
    train_scenarios: int = 6
    eval_scenarios: int = 10
    scenario_frames: int = 40
    frame_size: int = 128
    noise: float = 0.02
    distractors: int = 1

    def validate(self) -> "RunConfig":
        self.model.validate()
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"confidence threshold must lie in [0, 1], got {self.tau}")
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch size must be positive")
        return self

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path) as f:
            raw = json.load(f)
        try:
            model = ModelConfig(**raw.pop("model", {}))
            return cls(model=model, **raw).validate()
        except TypeError as exc:
            raise ConfigError(f"bad run config {path}: {exc}") from None

    def override(self, *, seed=None, keep_ratio=None, templates=None, tau=None, steps=None) -> "RunConfig":
        cfg = self
        model = cfg.model
        if keep_ratio is not None:
            model = replace(model, keep_ratio=keep_ratio)
        if templates is not None:
            model = replace(model, templates=templates)
        if model is not cfg.model:
            cfg = replace(cfg, model=model)
        if seed is not None:
            cfg = replace(cfg, seed=seed, model=replace(cfg.model, init_seed=seed))
        if tau is not None:
            cfg = replace(cfg, tau=tau)
        if steps is not None:
            cfg = replace(cfg, steps=steps)
        return cfg


def toy_config(seed: int = 0) -> RunConfig:
    """Desk-scale setup that trains end to end in minutes on one core.

    The 8-pixel patch keeps the search grid at 8x8 so sub-cell offsets stay
    learnable within a short schedule.
    """
    return RunConfig(
        model=ModelConfig(
            channels=32,
            heads=4,
            patch=8,
            template_size=32,
            search_size=64,
            templates=5,
            keep_ratio=0.9,
            correlation_depth=2,
            interaction_blocks=2,
            inner_blocks=2,
            head_depth=2,
            init_seed=seed,
        ),
        seed=seed,
    )


def b224_config(seed: int = 0) -> RunConfig:
    """Default full-size geometry used by the cost reports."""
    return RunConfig(model=ModelConfig(init_seed=seed), seed=seed)


def make_scenarios(
    cfg: RunConfig, count: int, offset: int = 0
) -> list[SyntheticScenario]:
    """Deterministic family of scenarios derived from the run seed."""
    scenarios = []
    for i in range(count):
        rng = np.random.default_rng([cfg.seed, offset + i])
        size = float(rng.uniform(0.2, 0.3))
        start = rng.uniform(0.25, 0.45, 2)
        end = rng.uniform(0.55, 0.75, 2)
        spec = ScenarioSpec(
            seed=int(rng.integers(0, 2**31)),
            num_frames=cfg.scenario_frames,
            frame_size=cfg.frame_size,
            start=(float(start[0]), float(start[1])),
            end=(float(end[0]), float(end[1])),
            target_size=size,
            size_drift=float(rng.uniform(-0.1, 0.15)),
            distractors=cfg.distractors,
            noise=cfg.noise,
        )
        scenarios.append(generate_scenario(spec))
    return scenarios


def train_eval_split(cfg: RunConfig) -> tuple[list[SyntheticScenario], list[SyntheticScenario]]:
    train = make_scenarios(cfg, cfg.train_scenarios, offset=0)
    evals = make_scenarios(cfg, cfg.eval_scenarios, offset=1000)
    return train, evals
