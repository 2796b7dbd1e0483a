"""Training loop: smoothed cross-entropy, warm-up cosine schedule, shift
augmentation, early stopping and best-checkpoint selection."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import Tensor

from .data import SampleStore
from .errors import ConfigError, ValidationError
from .metrics import evaluate, store_tensors
from .model import BST, ModelConfig

CHECKPOINT_FORMAT_VERSION = 1

HISTORY_HEADER = ["epoch", "train_loss", "val_acc", "val_macro_f1", "lr"]


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters (defaults follow the training recipe)."""

    n_epochs: int = 1600
    early_stop_n_epochs: int = 300
    batch_size: int = 128
    learning_rate: float = 5e-4
    warm_up_step: int = 400
    cosine_annealing_num_cycles: float = 0.25
    weight_decay: float = 1e-2
    label_smoothing: float = 0.1
    seed: int = 0
    balance_classes: bool = False
    augment_probability: float = 0.3
    augment_range: tuple[float, float] = (-0.3, 0.3)

    def __post_init__(self):
        for name in (
            "n_epochs",
            "early_stop_n_epochs",
            "batch_size",
            "learning_rate",
            "warm_up_step",
            "cosine_annealing_num_cycles",
            "weight_decay",
        ):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError(
                f"label_smoothing must be in [0, 1), got {self.label_smoothing}"
            )
        if not 0.0 <= self.augment_probability <= 1.0:
            raise ConfigError(
                f"augment_probability must be in [0, 1], "
                f"got {self.augment_probability}"
            )
        object.__setattr__(self, "augment_range", tuple(self.augment_range))


def smoothed_cross_entropy(
    probabilities, target, smoothing: float = 0.1
) -> Tensor:
    """Cross entropy against the smoothed target distribution
    (1 - smoothing) * one-hot + smoothing / K, from probabilities.

    Accepts a single (K,) row with an int target or a (B, K) batch with a
    (B,) target vector; batches reduce to the mean.  Probabilities are
    floored at 1e-12 before the log.
    """
    p = torch.as_tensor(probabilities)
    single = p.dim() == 1
    if single:
        p = p.unsqueeze(0)
    t = torch.as_tensor(target, dtype=torch.long, device=p.device).reshape(-1)
    if len(t) != len(p):
        raise ValidationError(f"{len(t)} targets for {len(p)} probability rows")
    k = p.shape[-1]
    if len(t) and (t.min() < 0 or t.max() >= k):
        raise ValidationError(f"target out of range [0, {k})")
    log_p = p.clamp_min(1e-12).log()
    nll = -log_p.gather(-1, t[:, None]).squeeze(-1)
    uniform = -log_p.mean(dim=-1)
    loss = (1.0 - smoothing) * nll + smoothing * uniform
    return loss.mean()


def smoothed_cross_entropy_from_logits(
    logits: Tensor, target: Tensor, smoothing: float = 0.1
) -> Tensor:
    """Numerically stable form used inside the training loop; agrees with
    ``smoothed_cross_entropy`` applied to softmax(logits)."""
    log_p = logits.log_softmax(dim=-1)
    nll = -log_p.gather(-1, target[:, None]).squeeze(-1)
    uniform = -log_p.mean(dim=-1)
    return ((1.0 - smoothing) * nll + smoothing * uniform).mean()


def lr_schedule(step: int, total_steps: int, config: TrainConfig) -> float:
    """Linear warm-up to the base rate, then cosine decay over the
    remaining steps covering ``cosine_annealing_num_cycles`` cycles
    (0.25 cycles ends exactly at zero)."""
    if config.warm_up_step >= total_steps:
        raise ConfigError(
            f"warm_up_step {config.warm_up_step} must be smaller than "
            f"total_steps {total_steps}"
        )
    if not 0 <= step <= total_steps:
        raise ValidationError(f"step {step} outside [0, {total_steps}]")
    if step <= config.warm_up_step:
        return config.learning_rate * (step / config.warm_up_step)
    progress = (step - config.warm_up_step) / (total_steps - config.warm_up_step)
    factor = math.cos(2.0 * math.pi * config.cosine_annealing_num_cycles * progress)
    return config.learning_rate * max(0.0, factor)


def balanced_indices(labels: np.ndarray) -> np.ndarray:
    """Indices with minority classes duplicated up to the majority count.

    Only sampling multiplicity changes; sample contents are untouched.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValidationError("cannot balance an empty label array")
    max_count = np.bincount(labels).max()
    chunks = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        reps = int(np.ceil(max_count / len(idx)))
        chunks.append(np.tile(idx, reps)[:max_count])
    return np.concatenate(chunks)


def shift_augment_batch(
    joints: Tensor,
    shuttle: Tensor,
    positions: Tensor,
    mask: Tensor,
    rng: np.random.Generator,
    probability: float,
    shift_range: tuple[float, float],
) -> tuple[Tensor, Tensor, Tensor]:
    """Per-sample random shift on unmasked frames; bones are untouched by
    construction (translation-invariant)."""
    b = joints.shape[0]
    gates = rng.uniform(size=b)
    shifts = rng.uniform(shift_range[0], shift_range[1], size=b)
    applied = np.where(gates < probability, shifts, 0.0)
    add = torch.as_tensor(applied, dtype=joints.dtype, device=joints.device)
    add = add[:, None] * mask.to(joints.dtype)  # (b, t)
    return (
        joints + add[:, None, :, None, None],
        shuttle + add[:, :, None],
        positions + add[:, None, :, None],
    )


@dataclass
class HistoryRow:
    epoch: int
    train_loss: float
    val_acc: float
    val_macro_f1: float
    lr: float


@dataclass
class TrainResult:
    best_epoch: int
    best_val_macro_f1: float
    history: list[HistoryRow]
    stopped_early: bool


def write_history(rows: list[HistoryRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(HISTORY_HEADER)
        for r in rows:
            writer.writerow(
                [
                    r.epoch,
                    repr(float(r.train_loss)),
                    repr(float(r.val_acc)),
                    repr(float(r.val_macro_f1)),
                    repr(float(r.lr)),
                ]
            )


def train(
    model: BST,
    train_store: SampleStore,
    val_store: SampleStore,
    config: TrainConfig,
    *,
    device: str = "cpu",
    history_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
    eval_fn=None,
    log_fn=None,
) -> TrainResult:
    """Optimize with decoupled weight decay under the warm-up cosine
    schedule; keep the parameters with the best validation macro-F1 and
    stop after ``early_stop_n_epochs`` epochs without improvement."""
    if len(train_store) == 0 or len(val_store) == 0:
        raise ValidationError("train and validation datasets must be non-empty")
    for store, name in ((train_store, "train"), (val_store, "val")):
        if store.labels.max() >= model.config.n_classes:
            raise ValidationError(
                f"{name} labels exceed the configured class count "
                f"{model.config.n_classes}"
            )
        if store.seq_len != model.config.seq_len:
            raise ValidationError(
                f"{name} sequence length {store.seq_len} does not match "
                f"model seq_len {model.config.seq_len}"
            )
    if eval_fn is None:
        eval_fn = evaluate

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    model.to(device)

    tensors = store_tensors(train_store, device=device)
    epoch_indices = (
        balanced_indices(train_store.labels)
        if config.balance_classes
        else np.arange(len(train_store))
    )
    steps_per_epoch = math.ceil(len(epoch_indices) / config.batch_size)
    total_steps = config.n_epochs * steps_per_epoch
    lr_schedule(0, total_steps, config)  # surfaces warm-up misconfiguration

    optimizer = torch.optim.AdamW(
        model.parameters(), lr=0.0, weight_decay=config.weight_decay
    )

    history: list[HistoryRow] = []
    best_state: dict | None = None
    best_f1 = -math.inf
    best_epoch = -1
    stale = 0
    stopped_early = False
    step = 0
    lr = 0.0

    for epoch in range(1, config.n_epochs + 1):
        model.train()
        order = rng.permutation(epoch_indices)
        loss_sum = 0.0
        for batch_no, lo in enumerate(range(0, len(order), config.batch_size)):
            idx = torch.as_tensor(order[lo : lo + config.batch_size])
            joints = tensors["joints"][idx]
            bones = tensors["bones"][idx]
            shuttle = tensors["shuttle"][idx]
            positions = tensors["positions"][idx]
            mask = tensors["mask"][idx]
            labels = tensors["labels"][idx]
            joints, shuttle, positions = shift_augment_batch(
                joints,
                shuttle,
                positions,
                mask,
                rng,
                config.augment_probability,
                config.augment_range,
            )

            step += 1
            lr = lr_schedule(step, total_steps, config)
            for group in optimizer.param_groups:
                group["lr"] = lr

            _, detail = model(
                joints, bones, shuttle, positions, mask, return_detail=True
            )
            loss = smoothed_cross_entropy_from_logits(
                detail["logits"], labels, config.label_smoothing
            )
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite loss {loss.item()} at epoch {epoch}, "
                    f"batch {batch_no}"
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            loss_sum += loss.item() * len(idx)

        report = eval_fn(model, val_store)
        row = HistoryRow(
            epoch=epoch,
            train_loss=loss_sum / len(order),
            val_acc=report.accuracy,
            val_macro_f1=report.macro_f1,
            lr=lr,
        )
        history.append(row)
        if log_fn is not None:
            log_fn(
                f"epoch {epoch}: loss {row.train_loss:.4f} "
                f"val_acc {row.val_acc:.4f} val_f1 {row.val_macro_f1:.4f}"
            )

        if report.macro_f1 > best_f1:
            best_f1 = report.macro_f1
            best_epoch = epoch
            best_state = {
                k: v.detach().clone() for k, v in model.state_dict().items()
            }
            stale = 0
        else:
            stale += 1
            if stale >= config.early_stop_n_epochs:
                stopped_early = True
                break

    assert best_state is not None
    model.load_state_dict(best_state)

    result = TrainResult(
        best_epoch=best_epoch,
        best_val_macro_f1=best_f1,
        history=history,
        stopped_early=stopped_early,
    )
    if history_path is not None:
        write_history(history, history_path)
    if checkpoint_path is not None:
        save_checkpoint(
            checkpoint_path,
            model,
            provenance={
                "best_epoch": best_epoch,
                "val_macro_f1": best_f1,
                "epochs_run": len(history),
                "stopped_early": stopped_early,
                "train_config": asdict(config),
            },
        )
    return result


def save_checkpoint(path: str | Path, model: BST, provenance: dict) -> None:
    """Self-describing checkpoint: format version, config snapshot,
    parameters keyed by canonical names, training provenance."""
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "state_dict": model.state_dict(),
        "provenance": provenance,
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path, device: str = "cpu") -> tuple[BST, dict]:
    payload = torch.load(path, map_location=device, weights_only=True)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValidationError(
            f"checkpoint format version {version} unsupported "
            f"(expected {CHECKPOINT_FORMAT_VERSION})"
        )
    config = ModelConfig.from_dict(payload["model_config"])
    model = BST(config)
    model.load_state_dict(payload["state_dict"])
    model.to(device)
    return model, payload["provenance"]
