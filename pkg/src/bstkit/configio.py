"""Flat key=value configuration files.

One file can carry clip, model, training and synthesis keys side by side;
each builder picks the keys it owns.  Training keys use the published
hyperparameter names (n_epochs, warm_up_step, sequence_length, ...).
"""

from __future__ import annotations

import math
from pathlib import Path

from .clipping import ADAPTIVE, ClipPlanConfig
from .errors import ConfigError
from .model import ModelConfig
from .synthetic import SynthSpec
from .training import TrainConfig

_REQUIRED = object()


def load_kv(path: str | Path) -> dict[str, str]:
    """Parse `key = value` lines; '#' starts a comment, blanks are skipped."""
    values: dict[str, str] = {}
    for line_no, raw in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{path}:{line_no}: empty key")
        values[key] = value.strip()
    return values


def _take(cfg: dict, key: str, cast, default=_REQUIRED):
    if key not in cfg:
        if default is _REQUIRED:
            raise ConfigError(f"missing required config key {key!r}")
        return default
    try:
        return cast(cfg[key])
    except (ValueError, TypeError):
        raise ConfigError(f"config key {key!r} has invalid value {cfg[key]!r}") from None


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


def _parse_float(raw: str) -> float:
    if raw.strip().lower() in ("inf", "infinity"):
        return math.inf
    return float(raw)


def _parse_channels(raw: str) -> tuple[int, ...]:
    return tuple(int(part) for part in raw.split(",") if part.strip())


def clip_settings(cfg: dict) -> dict:
    """Clip planning parameters; ``fps`` is required, the rest default."""
    fps = _take(cfg, "fps", float)
    if fps <= 0:
        raise ConfigError(f"fps must be positive, got {fps}")
    t = _take(cfg, "t", int, default=int(round(fps / 2)))
    epsilon = _take(cfg, "epsilon", int, default=t // 2)
    plan = ClipPlanConfig(
        t=t,
        epsilon=epsilon,
        max_span_seconds=_take(cfg, "max_span_seconds", _parse_float, default=1.5),
        strategy=_take(cfg, "strategy", str, default=ADAPTIVE),
    )
    gap_seconds = _take(cfg, "gap_threshold_seconds", float, default=3.0)
    return {
        "plan": plan,
        "fps": fps,
        "gap_threshold": int(round(gap_seconds * fps)),
        "total_frames": _take(cfg, "total_frames", int, default=None),
    }


def model_config(cfg: dict) -> ModelConfig:
    return ModelConfig(
        seq_len=_take(cfg, "sequence_length", int),
        n_classes=_take(cfg, "n_classes", int),
        variant=_take(cfg, "variant", str, default="BST"),
        d_model=_take(cfg, "d_model", int, default=64),
        d_attn=_take(cfg, "d_attn", int, default=32),
        n_heads=_take(cfg, "n_heads", int, default=8),
        n_layers_trans1=_take(cfg, "n_layers_trans1", int, default=2),
        n_layers_trans2=_take(cfg, "n_layers_trans2", int, default=2),
        tcn_channels=_take(cfg, "tcn_channels", _parse_channels, default=()),
        tcn_kernel_size=_take(cfg, "tcn_kernel_size", int, default=3),
        dropout=_take(cfg, "dropout", float, default=0.1),
    )


def train_config(cfg: dict, seed: int | None = None) -> TrainConfig:
    if seed is None:
        seed = _take(cfg, "seed", int, default=0)
    low = _take(cfg, "augment_shift_low", float, default=-0.3)
    high = _take(cfg, "augment_shift_high", float, default=0.3)
    return TrainConfig(
        n_epochs=_take(cfg, "n_epochs", int, default=1600),
        early_stop_n_epochs=_take(cfg, "early_stop_n_epochs", int, default=300),
        batch_size=_take(cfg, "batch_size", int, default=128),
        learning_rate=_take(cfg, "learning_rate", float, default=5e-4),
        warm_up_step=_take(cfg, "warm_up_step", int, default=400),
        cosine_annealing_num_cycles=_take(
            cfg, "cosine_annealing_num_cycles", float, default=0.25
        ),
        weight_decay=_take(cfg, "weight_decay", float, default=1e-2),
        label_smoothing=_take(cfg, "label_smoothing", float, default=0.1),
        seed=seed,
        balance_classes=_take(cfg, "balance_classes", _parse_bool, default=False),
        augment_probability=_take(cfg, "augment_probability", float, default=0.3),
        augment_range=(low, high),
    )


def synth_spec(cfg: dict, seed: int | None = None) -> SynthSpec:
    if seed is None:
        seed = _take(cfg, "seed", int, default=0)
    return SynthSpec(
        n_classes=_take(cfg, "n_classes", int, default=4),
        samples_per_class=_take(cfg, "samples_per_class", int, default=50),
        frames_per_stroke=_take(cfg, "frames_per_stroke", int, default=30),
        noise=_take(cfg, "noise", float, default=0.05),
        seed=seed,
        fps=_take(cfg, "fps", float, default=30.0),
        opponent_noise=_take(cfg, "opponent_noise", float, default=0.0),
    )
