"""Classification metrics: accuracy, top-2 accuracy, macro/min F1 and
confusion matrices in raw, row- and column-normalized form."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .data import SampleStore
from .errors import ValidationError

REPORT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    top2_accuracy: float
    macro_f1: float
    min_f1: float
    per_class_f1: tuple[float, ...]
    confusion: np.ndarray  # (K, K) counts; rows = true, columns = predicted
    row_normalized: np.ndarray
    column_normalized: np.ndarray
    n_samples: int
    class_names: tuple[str, ...] | None = None

    @property
    def n_classes(self) -> int:
        return self.confusion.shape[0]

    def to_dict(self) -> dict:
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "accuracy": self.accuracy,
            "top2_accuracy": self.top2_accuracy,
            "macro_f1": self.macro_f1,
            "min_f1": self.min_f1,
            "per_class_f1": list(self.per_class_f1),
            "confusion": self.confusion.tolist(),
            "row_normalized": self.row_normalized.tolist(),
            "column_normalized": self.column_normalized.tolist(),
            "n_samples": self.n_samples,
            "class_names": list(self.class_names) if self.class_names else None,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path: str | Path) -> "EvalReport":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            accuracy=d["accuracy"],
            top2_accuracy=d["top2_accuracy"],
            macro_f1=d["macro_f1"],
            min_f1=d["min_f1"],
            per_class_f1=tuple(d["per_class_f1"]),
            confusion=np.array(d["confusion"], dtype=np.int64),
            row_normalized=np.array(d["row_normalized"]),
            column_normalized=np.array(d["column_normalized"]),
            n_samples=d["n_samples"],
            class_names=tuple(d["class_names"]) if d["class_names"] else None,
        )


def top_k_predictions(probabilities: np.ndarray, k: int = 2) -> np.ndarray:
    """Indices of the k most probable classes per row; probability ties are
    broken toward the lower class index."""
    order = np.argsort(-probabilities, axis=1, kind="stable")
    return order[:, :k]


def compute_metrics(
    probabilities: np.ndarray,
    labels: np.ndarray,
    n_classes: int | None = None,
    class_names=None,
) -> EvalReport:
    """Metrics from per-sample class probabilities and integer labels."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probabilities.ndim != 2 or len(probabilities) != len(labels):
        raise ValidationError(
            f"probabilities {probabilities.shape} incompatible with "
            f"{len(labels)} labels"
        )
    k = n_classes if n_classes is not None else probabilities.shape[1]
    if probabilities.shape[1] != k:
        raise ValidationError(
            f"probabilities have {probabilities.shape[1]} columns, expected {k}"
        )
    if len(labels) and (labels.min() < 0 or labels.max() >= k):
        raise ValidationError(f"labels must lie in [0, {k})")

    preds = probabilities.argmax(axis=1)
    top2 = top_k_predictions(probabilities, 2)
    accuracy = float((preds == labels).mean())
    top2_accuracy = float((top2 == labels[:, None]).any(axis=1).mean())

    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (labels, preds), 1)

    per_class_f1 = []
    for c in range(k):
        tp = confusion[c, c]
        fp = confusion[:, c].sum() - tp
        fn = confusion[c, :].sum() - tp
        if tp + fp + fn == 0:
            warnings.warn(
                f"class {c} absent from labels and predictions; F1 set to 0",
                stacklevel=2,
            )
            per_class_f1.append(0.0)
            continue
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = (
            2 * precision * recall / (precision + recall)
            if precision + recall
            else 0.0
        )
        per_class_f1.append(float(f1))

    row_sums = confusion.sum(axis=1, keepdims=True)
    col_sums = confusion.sum(axis=0, keepdims=True)
    row_normalized = np.divide(
        confusion, row_sums, out=np.zeros((k, k)), where=row_sums > 0
    )
    column_normalized = np.divide(
        confusion, col_sums, out=np.zeros((k, k)), where=col_sums > 0
    )

    return EvalReport(
        accuracy=accuracy,
        top2_accuracy=top2_accuracy,
        macro_f1=float(np.mean(per_class_f1)),
        min_f1=float(np.min(per_class_f1)),
        per_class_f1=tuple(per_class_f1),
        confusion=confusion,
        row_normalized=row_normalized,
        column_normalized=column_normalized,
        n_samples=len(labels),
        class_names=tuple(class_names) if class_names is not None else None,
    )


def store_tensors(store: SampleStore, device="cpu", dtype=torch.float32) -> dict:
    """Model input tensors for a whole sample store."""
    return {
        "joints": torch.as_tensor(store.joints, dtype=dtype, device=device),
        "bones": torch.as_tensor(store.bones, dtype=dtype, device=device),
        "shuttle": torch.as_tensor(store.shuttle, dtype=dtype, device=device),
        "positions": torch.as_tensor(store.positions, dtype=dtype, device=device),
        "mask": torch.as_tensor(
            np.ascontiguousarray(store.mask), dtype=torch.bool, device=device
        ),
        "labels": torch.as_tensor(store.labels, dtype=torch.long, device=device),
    }


@torch.no_grad()
def predict_probs(
    model, store: SampleStore, batch_size: int = 256, device="cpu"
) -> np.ndarray:
    """Class probabilities for every sample, batched, in store order."""
    was_training = model.training
    model.eval()
    tensors = store_tensors(store, device=device)
    chunks = []
    for lo in range(0, len(store), batch_size):
        hi = lo + batch_size
        probs = model(
            tensors["joints"][lo:hi],
            tensors["bones"][lo:hi],
            tensors["shuttle"][lo:hi],
            tensors["positions"][lo:hi],
            tensors["mask"][lo:hi],
        )
        chunks.append(probs.double().cpu().numpy())
    if was_training:
        model.train()
    return np.concatenate(chunks, axis=0)


def evaluate(
    model, store: SampleStore, batch_size: int = 256, device="cpu"
) -> EvalReport:
    """Run the model over a dataset and compute the full report."""
    if len(store) == 0:
        raise ValidationError("cannot evaluate on an empty dataset")
    probs = predict_probs(model, store, batch_size=batch_size, device=device)
    return compute_metrics(
        probs,
        store.labels,
        n_classes=model.config.n_classes,
        class_names=store.class_names,
    )


def emit_confusion_plot(report: EvalReport, path: str | Path) -> list[Path]:
    """Render column- and row-normalized confusion heatmaps to ``path``.

    Numeric sidecar CSVs with the same stem are written next to the image
    so the rendered values stay testable.  Returns the written paths.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    k = report.n_classes
    names = report.class_names or tuple(str(i) for i in range(k))

    fig, axes = plt.subplots(1, 2, figsize=(max(8, k * 0.6), max(4, k * 0.3)))
    panels = (
        ("column-normalized (precision view)", report.column_normalized),
        ("row-normalized (recall view)", report.row_normalized),
    )
    for ax, (title, matrix) in zip(axes, panels):
        im = ax.imshow(matrix, vmin=0.0, vmax=1.0, cmap="viridis")
        ax.set_title(title)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        ax.set_xticks(range(k), names, rotation=90, fontsize=6)
        ax.set_yticks(range(k), names, fontsize=6)
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

    written = [path]
    for suffix, matrix in (
        ("column_normalized", report.column_normalized),
        ("row_normalized", report.row_normalized),
    ):
        sidecar = path.with_name(f"{path.stem}_{suffix}.csv")
        header = ",".join(names)
        np.savetxt(
            sidecar, matrix, delimiter=",", header=header, comments="", fmt="%.10g"
        )
        written.append(sidecar)
    return written
