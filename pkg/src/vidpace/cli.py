"""``vidpace`` command line: one subcommand per pipeline stage.

Exit codes: 0 success, 1 runtime/config/data error, 2 usage error.
Outputs go to ``--output-dir`` (default ``$VIDPACE_OUTPUT_ROOT/<subcommand>``,
falling back to ``./runs/<subcommand>``).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import typing
from dataclasses import fields
from pathlib import Path

from . import config as config_mod
from .ablation import run_ablation
from .config import TrainConfig, load_config
from .data import (
    DatasetManifest,
    SyntheticConfig,
    build_manifest,
    generate_synthetic,
    ingest_video,
    read_split_file,
)
from .errors import ConfigError, VidpaceError
from .report import emit_report, write_table
from .retrieval import build_gallery, retrieval_eval
from .train import evaluate_classification, finetune, load_checkpoint, pretrain

OUTPUT_ENV = "VIDPACE_OUTPUT_ROOT"


def _train_keys_help() -> str:
    lines = ["config keys (override with --override key=value):"]
    for key, tp, default in config_mod.schema():
        lines.append(f"  {key:<22} default {json.dumps(default)}")
    return "\n".join(lines)


def _synth_keys_help() -> str:
    lines = ["synthetic dataset keys (override with --override key=value):"]
    for f in fields(SyntheticConfig):
        lines.append(f"  {f.name:<18} default {json.dumps(getattr(SyntheticConfig(), f.name))}")
    return "\n".join(lines)


def _synth_config(path: str | None, overrides: list[str]) -> SyntheticConfig:
    cfg = SyntheticConfig()
    data = json.loads(Path(path).read_text()) if path else {}
    items = list(data.items()) + [config_mod.parse_override(o) for o in overrides]
    hints = typing.get_type_hints(SyntheticConfig)
    names = {f.name for f in fields(SyntheticConfig)}
    for key, value in items:
        if key not in names:
            raise ConfigError(f"unknown synthetic config key {key!r}")
        tp = hints[key]
        if key == "velocity_range":
            tp = list[int]
        value = config_mod._coerce(value, tp, key)
        setattr(cfg, key, tuple(value) if key == "velocity_range" else value)
    cfg.validate()
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vidpace", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_, epilog=None):
        p = sub.add_parser(name, help=help_, epilog=epilog,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--output-dir", help="directory for artifacts")
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="config override, dotted keys for sections (repeatable)")
        return p

    p = add("ingest", "index (and decode) a video directory into a manifest")
    p.add_argument("--root", required=True, help="video root; class subdirectories give labels")
    p.add_argument("--train-list", help="UCF-style list of training files")
    p.add_argument("--test-list", help="UCF-style list of test files")
    p.add_argument("--target-fps", type=float)
    p.add_argument("--no-decode", action="store_true", help="only write the manifest")

    add("synth", "generate a synthetic moving-pattern dataset", _synth_keys_help())

    p = add("pretrain", "self-supervised pretraining", _train_keys_help())
    p.add_argument("--manifest", required=True)

    p = add("finetune", "action-classification fine-tuning", _train_keys_help())
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", help="SSL checkpoint; omit to train from scratch")

    p = add("eval", "clip-level classification accuracy", _train_keys_help())
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "test"))

    p = add("retrieve", "nearest-neighbour retrieval (train gallery, test queries)", _train_keys_help())
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--label", help="model label used in the report")

    p = add("ablate", "run a pretext ablation grid", _train_keys_help())
    p.add_argument("--manifest", required=True)
    p.add_argument("--grid", required=True, help='JSON object, e.g. {"norm.g": [16, 8, 4, 2, 1]}')
    p.add_argument("--finetune-epochs", type=int)
    p.add_argument("--no-finetune", action="store_true")

    p = add("report", "plot/tabulate retrieval results")
    p.add_argument("inputs", nargs="*", help="retrieval.json files written by `retrieve`")
    return parser


def _output_dir(args) -> Path:
    if args.output_dir:
        out = Path(args.output_dir)
    else:
        out = Path(os.environ.get(OUTPUT_ENV, "runs")) / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_ingest(args, out: Path) -> str:
    split_spec = {}
    if args.train_list:
        split_spec.update(read_split_file(args.train_list, "train"))
    if args.test_list:
        split_spec.update(read_split_file(args.test_list, "test"))
    manifest = build_manifest(args.root, split_spec, "train" if not args.train_list else "test")
    if not args.no_decode:
        import numpy as np

        frames_dir = out / "frames"
        frames_dir.mkdir(exist_ok=True)
        for e in manifest.entries:
            vol = ingest_video(e.path, args.target_fps)
            target = frames_dir / f"{e.source_id}.npy"
            np.save(target, vol.frames)
            e.path = str(target.resolve())
    manifest.save(out / "manifest.jsonl")
    return f"ingest: {len(manifest)} videos -> {out / 'manifest.jsonl'}"


def _cmd_synth(args, out: Path) -> str:
    cfg = _synth_config(args.config, args.override)
    manifest, _ = generate_synthetic(cfg, out)
    return f"synth: {len(manifest)} videos ({cfg.pattern}) -> {out}"


def _train_config(args) -> TrainConfig:
    return load_config(args.config, args.override)


def _cmd_pretrain(args, out: Path) -> str:
    cfg = _train_config(args)
    manifest = DatasetManifest.load(args.manifest)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    ckpt = pretrain(cfg, manifest, out_dir=out, val_manifest=manifest.split("test"))
    last = ckpt.metrics[-1] if ckpt.metrics else {}
    return (f"pretrain: task={cfg.task} speeds={list(cfg.resolved_speeds())} epochs={ckpt.epoch} "
            f"loss={last.get('loss', float('nan')):.4f} acc={last.get('pretext_acc', float('nan')):.4f} -> {out}")


def _cmd_finetune(args, out: Path) -> str:
    cfg = _train_config(args)
    manifest = DatasetManifest.load(args.manifest)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    ckpt = finetune(args.checkpoint, manifest, cfg, out_dir=out)
    last = ckpt.metrics[-1] if ckpt.metrics else {}
    return f"finetune: epochs={ckpt.epoch} train_acc={last.get('pretext_acc', float('nan')):.4f} -> {out}"


def _cmd_eval(args, out: Path) -> str:
    manifest = DatasetManifest.load(args.manifest)
    result = evaluate_classification(args.checkpoint, manifest, args.split)
    (out / "eval.json").write_text(json.dumps(result, indent=2))
    return f"eval: split={args.split} accuracy={result['accuracy']:.4f} ({result['num_clips']} clips)"


def _cmd_retrieve(args, out: Path) -> str:
    manifest = DatasetManifest.load(args.manifest)
    ckpt = load_checkpoint(args.checkpoint)
    build_gallery(ckpt, manifest).save(out / "gallery")
    acc = retrieval_eval(ckpt, manifest)
    label = args.label or Path(args.checkpoint).stem
    (out / "retrieval.json").write_text(json.dumps({label: acc}, indent=2))
    emit_report({label: acc}, out)
    return "retrieve: " + " ".join(f"top{k}={v:.3f}" for k, v in acc.items())


def _cmd_ablate(args, out: Path) -> str:
    cfg = _train_config(args)
    manifest = DatasetManifest.load(args.manifest)
    grid = json.loads(Path(args.grid).read_text())
    if not isinstance(grid, dict):
        raise ConfigError("grid must be a JSON object of key -> list of values")
    rows = run_ablation(grid, cfg, manifest, out_dir=out, finetune_epochs=args.finetune_epochs,
                        do_finetune=not args.no_finetune)
    if not rows:
        write_table([], out / "results.csv", list(grid) + ["speeds"])
    return f"ablate: {len(rows)} cells -> {out / 'results.csv'}"


def _cmd_report(args, out: Path) -> str:
    results = {}
    for path in args.inputs:
        data = json.loads(Path(path).read_text())
        for label, curve in data.items():
            results[label] = {int(k): float(v) for k, v in curve.items()}
    written = emit_report(results, out)
    return f"report: {len(results)} curves -> {', '.join(str(p) for p in written)}"


COMMANDS = {
    "ingest": _cmd_ingest, "synth": _cmd_synth, "pretrain": _cmd_pretrain, "finetune": _cmd_finetune,
    "eval": _cmd_eval, "retrieve": _cmd_retrieve, "ablate": _cmd_ablate, "report": _cmd_report,
}


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        out = _output_dir(args)
        print(COMMANDS[args.command](args, out))
    except (VidpaceError, OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"vidpace {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
