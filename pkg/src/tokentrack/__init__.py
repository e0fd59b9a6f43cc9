"""Desk-scale compress-then-interact visual tracker.

Multi-frame template tokens are contextualized, scored against a frozen
random direction, pruned to a keep ratio, and merged by cosine similarity;
the compressed templates then steer the search features through stacked
cross-attention interaction blocks before an anchor-free prediction head.
An analytic MAC model accounts for the compute of every stage.
"""

from .compressor import (
    CompressionResult,
    CorrelationConfig,
    CorrelationStack,
    ScoreProjector,
    compress,
    cosine_argmax,
    guided_merge,
    partition,
)
from .config import RunConfig, b224_config, make_scenarios, toy_config, train_eval_split
from .costs import CostReport, macs_attention, macs_pipeline, savings_summary
from .head import BoxN, HeadMaps, PredictionHead, box_iou, decode
from .interaction import ConvFFN, EncoderState, InteractionBlock, InteractionConfig, InteractionEncoder
from .losses import GtTarget, LossWeights, focal_loss, giou, make_target, total_loss
from .model import ConfigError, ModelConfig, TrackerModel
from .patches import FrameSpec, PatchEmbedding, TemporalEmbedding, TokenStack, stack_templates
from .synthetic import ScenarioSpec, SyntheticScenario, generate_scenario
from .tensor import GradTape, MacCounter, ShapeError, Tensor, read_tensor, write_tensor
from .tracking import TemplateBank, TrackStep, mean_iou, track_sequence
from .training import Adam, TrainingDiverged, train_toy

__version__ = "0.1.0"
