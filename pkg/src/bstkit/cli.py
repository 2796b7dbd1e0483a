"""Command-line entry point tying the pipeline together.

Subcommands: clip (hit annotations -> clip manifest), ingest (manifest +
feature files -> sample store), synth (synthetic dataset), train, eval,
plot-cm.  Exit code 0 on success, 2 on validation/configuration errors,
1 on runtime errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .clipping import (
    build_manifest,
    read_hit_annotations,
    read_manifest,
    write_manifest,
)
from .configio import (
    clip_settings,
    load_kv,
    model_config,
    synth_spec,
    train_config,
)
from .data import SampleStore, ingest_manifest, read_class_map
from .errors import ConfigError, ValidationError
from .metrics import EvalReport, emit_confusion_plot, evaluate
from .model import build_model
from .synthetic import write_dataset
from .training import CHECKPOINT_FORMAT_VERSION, load_checkpoint, train


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bstkit",
        description="Stroke-type classification toolkit for racket-sport video.",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=(
            f"bstkit {__version__} "
            f"(checkpoint format {CHECKPOINT_FORMAT_VERSION})"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        return p

    p = add("clip", "plan stroke clip windows from hit-frame annotations")
    p.add_argument("--hits", type=Path, required=True, help="match_id,frame,label CSV")

    p = add("ingest", "build a sample store from a manifest and feature files")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--features", type=Path, required=True, help="feature file root")
    p.add_argument("--class-map", type=Path, required=True, help="class_id,class_name CSV")

    add("synth", "generate a synthetic dataset (features, hits, manifest)")

    p = add("train", "train a model on ingested sample stores")
    p.add_argument("--train-data", type=Path, required=True, help="train samples.npz")
    p.add_argument("--val-data", type=Path, required=True, help="validation samples.npz")

    p = add("eval", "evaluate a checkpoint on a sample store")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True, help="samples.npz")

    p = add("plot-cm", "render confusion-matrix heatmaps from a report")
    p.add_argument("--report", type=Path, required=True, help="report JSON")
    return parser


def _load_config(args) -> dict:
    if args.config is None:
        return {}
    return load_kv(args.config)


def _cmd_clip(args) -> None:
    cfg = clip_settings(_load_config(args))
    per_match = read_hit_annotations(args.hits)
    rows = []
    for match_id, hits in per_match.items():
        rows.extend(
            build_manifest(
                match_id,
                hits,
                cfg["plan"],
                fps=cfg["fps"],
                total_frames=cfg["total_frames"],
                gap_threshold=cfg["gap_threshold"],
            )
        )
    args.out.mkdir(parents=True, exist_ok=True)
    out_path = args.out / "manifest.csv"
    write_manifest(rows, out_path)
    print(f"wrote {len(rows)} clip windows to {out_path}")


def _cmd_ingest(args) -> None:
    cfg = _load_config(args)
    seq_len = int(cfg.get("sequence_length", 0))
    if seq_len <= 0:
        raise ConfigError("ingest requires a positive sequence_length in --config")
    rows = read_manifest(args.manifest)
    class_map = read_class_map(args.class_map)
    store = ingest_manifest(rows, args.features, seq_len, class_map)
    args.out.mkdir(parents=True, exist_ok=True)
    out_path = args.out / "samples.npz"
    store.save(out_path)
    print(f"wrote {len(store)} samples ({seq_len} frames each) to {out_path}")


def _cmd_synth(args) -> None:
    spec = synth_spec(_load_config(args), seed=args.seed)
    dataset = write_dataset(spec, args.out)
    print(
        f"wrote {len(dataset.strokes)} strokes over "
        f"{dataset.timeline.n_rallies} rallies to {args.out}"
    )


def _cmd_train(args) -> None:
    cfg = _load_config(args)
    mconfig = model_config(cfg)
    tconfig = train_config(cfg, seed=args.seed)
    train_store = SampleStore.load(args.train_data)
    val_store = SampleStore.load(args.val_data)
    model = build_model(mconfig, seed=tconfig.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    result = train(
        model,
        train_store,
        val_store,
        tconfig,
        history_path=args.out / "history.csv",
        checkpoint_path=args.out / "checkpoint.pt",
        log_fn=print,
    )
    print(
        f"best epoch {result.best_epoch} "
        f"(val macro-F1 {result.best_val_macro_f1:.4f}); "
        f"checkpoint and history written to {args.out}"
    )


def _cmd_eval(args) -> None:
    model, provenance = load_checkpoint(args.checkpoint)
    store = SampleStore.load(args.data)
    report = evaluate(model, store)
    args.out.mkdir(parents=True, exist_ok=True)
    out_path = args.out / "report.json"
    report.save(out_path)
    print(
        f"accuracy {report.accuracy:.4f}  top-2 {report.top2_accuracy:.4f}  "
        f"macro-F1 {report.macro_f1:.4f}  min-F1 {report.min_f1:.4f}"
    )
    print(f"report written to {out_path}")


def _cmd_plot_cm(args) -> None:
    report = EvalReport.load(args.report)
    args.out.mkdir(parents=True, exist_ok=True)
    written = emit_confusion_plot(report, args.out / "confusion_matrices.png")
    print("wrote " + ", ".join(str(p) for p in written))


_COMMANDS = {
    "clip": _cmd_clip,
    "ingest": _cmd_ingest,
    "synth": _cmd_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "plot-cm": _cmd_plot_cm,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 0 for --help, 2 for usage errors
        return int(exc.code or 0)
    try:
        _COMMANDS[args.command](args)
    except (ValidationError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
