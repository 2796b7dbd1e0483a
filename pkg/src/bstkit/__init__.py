"""Stroke-type classification toolkit for racket-sport broadcast video."""

__version__ = "0.1.0"

from .clipping import (
    ClipPlanConfig,
    ClipWindow,
    RallyTimeline,
    adaptive_clip,
    detect_rallies,
    fixed_width_clip,
    stage_annotations,
)
from .data import (
    CourtGeometry,
    RawFrameDetections,
    SampleStore,
    StrokeSample,
    compute_bones,
    filter_players,
    normalize_and_pad,
    random_shift_augment,
)
from .errors import ConfigError, ValidationError
from .metrics import EvalReport, compute_metrics, evaluate
from .model import BST, ModelConfig, build_model
from .synthetic import SynthSpec, generate
from .training import TrainConfig, load_checkpoint, lr_schedule, train

__all__ = [
    "BST",
    "ClipPlanConfig",
    "ClipWindow",
    "ConfigError",
    "CourtGeometry",
    "EvalReport",
    "ModelConfig",
    "RallyTimeline",
    "RawFrameDetections",
    "SampleStore",
    "StrokeSample",
    "SynthSpec",
    "TrainConfig",
    "ValidationError",
    "adaptive_clip",
    "build_model",
    "compute_bones",
    "compute_metrics",
    "detect_rallies",
    "evaluate",
    "filter_players",
    "fixed_width_clip",
    "generate",
    "load_checkpoint",
    "lr_schedule",
    "normalize_and_pad",
    "random_shift_augment",
    "stage_annotations",
    "train",
    "__version__",
]
