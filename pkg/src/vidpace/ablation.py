"""Grid runner over the pretext ablation axes (task, direction, speed magnitude, n, g).

A grid maps config keys to value lists, e.g. ``{"norm.g": [16, 8, 4, 2, 1]}``.
Each cell pretrains a model and, when the manifest is labelled, fine-tunes it
and reports test accuracy. Results are written as a long table (one row per
cell) and a wide table (one row per metric, one column per cell).
"""
from __future__ import annotations

import copy
import itertools
import logging
import os
from pathlib import Path
from typing import Any, Mapping, Sequence

from .config import TrainConfig, set_key
from .data import DatasetManifest, FrameVolume
from .report import write_table
from .train import _volumes_for, evaluate_classification, evaluate_pretext, finetune, pretrain

log = logging.getLogger(__name__)

DIRECTION_ALIASES = {"FF": "forward_only", "RW": "rewind_only", "FF+RW": "both"}
METRICS = ("pretext_acc", "heldout_pretext_acc", "finetune_acc")


def grid_cells(grid: Mapping[str, Sequence[Any]]) -> list[dict[str, Any]]:
    if not grid or any(len(v) == 0 for v in grid.values()):
        return []
    keys = list(grid)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def cell_config(base: TrainConfig, cell: Mapping[str, Any]) -> TrainConfig:
    cfg = copy.deepcopy(base)
    for key, value in cell.items():
        if key == "direction_mode":
            value = DIRECTION_ALIASES.get(value, value)
        set_key(cfg, key, value)
    cfg.validate()
    return cfg


def _cell_name(cell: Mapping[str, Any]) -> str:
    return ",".join(f"{k}={v}" for k, v in cell.items())


def run_ablation(
    grid: Mapping[str, Sequence[Any]],
    base: TrainConfig,
    manifest: DatasetManifest,
    volumes: Mapping[str, FrameVolume] | None = None,
    out_dir: str | os.PathLike | None = None,
    finetune_epochs: int | None = None,
    do_finetune: bool = True,
) -> list[dict]:
    cells = grid_cells(grid)
    rows = []
    if cells and volumes is None:
        volumes = _volumes_for(manifest, None)
    test = manifest.split("test")
    for cell in cells:
        cfg = cell_config(base, cell)
        name = _cell_name(cell)
        log.info("ablation cell %s (speeds %s)", name, cfg.resolved_speeds())
        ckpt = pretrain(cfg, manifest, volumes)
        row: dict[str, Any] = dict(cell)
        row["speeds"] = " ".join(str(s) for s in cfg.resolved_speeds())
        row["pretext_acc"] = ckpt.metrics[-1]["pretext_acc"] if ckpt.metrics else float("nan")
        if test.entries:
            row["heldout_pretext_acc"] = evaluate_pretext(
                ckpt.model, cfg, [volumes[e.source_id] for e in test.entries])
        if do_finetune and manifest.labelled and test.entries:
            ft_cfg = copy.deepcopy(cfg)
            ft_cfg.epochs = finetune_epochs
            ft = finetune(ckpt, manifest, ft_cfg, volumes)
            row["finetune_acc"] = evaluate_classification(ft, manifest, "test", volumes)["accuracy"]
        rows.append(row)

    if out_dir is not None:
        out = Path(out_dir)
        axes = list(grid)
        write_table(rows, out / "results.csv", axes + ["speeds", *METRICS])
        wide = []
        for metric in METRICS:
            w = {"metric": metric}
            for cell, row in zip(cells, rows):
                w[_cell_name(cell)] = row.get(metric, "")
            wide.append(w)
        write_table(wide, out / "results_wide.csv", ["metric"] + [_cell_name(c) for c in cells])
    return rows
