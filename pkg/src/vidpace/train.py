"""Pretext pretraining, fine-tuning, classification evaluation and checkpoints.

One SSL epoch draws one fresh tuple (new anchors, new shuffle) per training
video. Optimization is SGD with momentum at a constant learning rate unless
``lr_schedule='cosine'`` is set.

Checkpoints are ``.npz`` archives. Every tensor is stored little-endian under
its module path (``backbone.*``, ``head.*``); ``__meta__`` holds a JSON record
with the format version, config, epoch, head kind and RNG states.
"""
from __future__ import annotations

import copy
import csv
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
import torch
from torch import nn

from .backbones import FeatureExtractor, build_backbone
from .config import TrainConfig
from .data import DatasetManifest, FrameVolume, load_volumes, normalize_pixels, spatial_augment
from .errors import ArchMismatch, ConfigError, DataError
from .heads import ClassifierHead, OrderHead, OrderHeadConfig, SpeedHead, task_loss
from .sampler import ClipSpec, sample_clip, sample_tuple, speed_label

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
METRIC_FIELDS = ("epoch", "loss", "pretext_acc", "val_acc", "wall_time")


class TaskModel(nn.Module):
    """Backbone plus one task head; ``head`` is dropped when fine-tuning."""

    def __init__(self, backbone: FeatureExtractor, head: nn.Module, task: str, n: int = 1):
        super().__init__()
        self.backbone = backbone
        self.head = head
        self.task = task
        self.n = n

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        emb = self.backbone(x)
        if self.task == "psp_order":
            return self.head(emb.reshape(-1, self.n, emb.shape[1]))
        return self.head(emb)


def build_model(cfg: TrainConfig, num_classes: int | None = None) -> TaskModel:
    torch.manual_seed(cfg.seed)
    backbone = build_backbone(cfg.backbone_config())
    d = backbone.embedding_dim
    if cfg.task == "psp_order":
        head = OrderHead(OrderHeadConfig(cfg.n, d, cfg.pair_hidden_dim, cfg.dropout))
    elif cfg.task == "speed_baseline":
        head = SpeedHead(d, len(cfg.resolved_speeds()))
    else:
        if not num_classes:
            raise ConfigError("fine-tuning needs a class count")
        head = ClassifierHead(d, num_classes, cfg.dropout)
    return TaskModel(backbone, head, cfg.task, cfg.n)


@dataclass
class Checkpoint:
    model: TaskModel
    config: TrainConfig
    epoch: int = 0
    num_classes: int | None = None
    rng_state: dict = field(default_factory=dict)
    metrics: list[dict] = field(default_factory=list)


def save_checkpoint(ckpt: Checkpoint, path: str | os.PathLike) -> None:
    arrays = {}
    for k, v in ckpt.model.state_dict().items():
        a = v.detach().cpu().numpy()
        arrays[k] = a.astype(a.dtype.newbyteorder("<"), copy=False)
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": ckpt.config.to_dict(),
        "epoch": ckpt.epoch,
        "task": ckpt.model.task,
        "num_classes": ckpt.num_classes,
        "rng_state": ckpt.rng_state,
    }
    arrays["__meta__"] = np.array(json.dumps(meta))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | os.PathLike) -> Checkpoint:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise DataError(f"unsupported checkpoint version {meta.get('version')}")
        state = {k: torch.from_numpy(z[k].astype(z[k].dtype.newbyteorder("="))) for k in z.files if k != "__meta__"}
    cfg = TrainConfig.from_dict(meta["config"])
    model = build_model(cfg, meta["num_classes"])
    model.load_state_dict(state)
    return Checkpoint(model, cfg, meta["epoch"], meta["num_classes"], meta["rng_state"])


def _rng_state(rng: np.random.Generator) -> dict:
    return {"numpy": rng.bit_generator.state, "torch": torch.get_rng_state().tolist()}


def prepare_clip(pixels: np.ndarray, cfg: TrainConfig, mode: str, rng: np.random.Generator | None) -> np.ndarray:
    crop = spatial_augment(pixels, mode, rng, cfg.resize, cfg.crop_size)
    return normalize_pixels(crop)


def _volumes_for(manifest: DatasetManifest, volumes: Mapping[str, FrameVolume] | None) -> dict[str, FrameVolume]:
    if volumes is None:
        return load_volumes(manifest)
    missing = [e.source_id for e in manifest.entries if e.source_id not in volumes]
    if missing:
        raise DataError(f"no frames for {missing[:3]}")
    return {e.source_id: volumes[e.source_id] for e in manifest.entries}


def pretext_batch(
    vols: list[FrameVolume], cfg: TrainConfig, rng: np.random.Generator, mode: str = "train"
) -> tuple[torch.Tensor, torch.Tensor]:
    """Clips ``(len(vols) * n, 3, m, H, W)`` and labels for the configured pretext task."""
    speeds = cfg.resolved_speeds()
    clips, labels = [], []
    for vol in vols:
        if cfg.task == "psp_order":
            sample = sample_tuple(vol, cfg.n, cfg.m, rng, speeds)
            clips.extend(prepare_clip(c.pixels, cfg, mode, rng) for c in sample.clips)
            labels.append(sample.label)
        elif cfg.task == "speed_baseline":
            for _ in range(cfg.n):
                s = int(rng.choice(speeds))
                clip = sample_clip(vol, ClipSpec(s, int(rng.integers(vol.num_frames)), cfg.m))
                clips.append(prepare_clip(clip.pixels, cfg, mode, rng))
                labels.append(speed_label(s, speeds))
        else:
            raise ConfigError(f"{cfg.task!r} is not a pretext task")
    return torch.from_numpy(np.stack(clips)), torch.tensor(labels, dtype=torch.long)


def classification_batch(
    vols: list[FrameVolume], labels: list[int], cfg: TrainConfig, rng: np.random.Generator
) -> tuple[torch.Tensor, torch.Tensor]:
    clips = []
    for vol in vols:
        clip = sample_clip(vol, ClipSpec(1, int(rng.integers(vol.num_frames)), cfg.m))
        clips.append(prepare_clip(clip.pixels, cfg, "train", rng))
    return torch.from_numpy(np.stack(clips)), torch.tensor(labels, dtype=torch.long)


def _optimizer(model: nn.Module, cfg: TrainConfig, epochs: int):
    opt = torch.optim.SGD(model.parameters(), lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    sched = None
    if cfg.lr_schedule == "cosine" and epochs > 0:
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=epochs)
    return opt, sched


def _write_metrics(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in METRIC_FIELDS})


def _run_epochs(
    model: TaskModel,
    cfg: TrainConfig,
    train_ids: list[str],
    vols: dict[str, FrameVolume],
    make_batch: Callable[[list[str], np.random.Generator], tuple[torch.Tensor, torch.Tensor]],
    out_dir: Path | None,
    num_classes: int | None,
    val_fn: Callable[[TaskModel], float] | None,
) -> Checkpoint:
    epochs = cfg.resolved_epochs
    rng = np.random.default_rng(cfg.seed)
    torch.manual_seed(cfg.seed)
    opt, sched = _optimizer(model, cfg, epochs)
    metrics: list[dict] = []
    ckpt = Checkpoint(model, cfg, 0, num_classes)
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        model.train()
        order = rng.permutation(len(train_ids))
        total_loss, correct, seen, count = 0.0, 0, 0, 0
        for start in range(0, len(order), cfg.batch_videos):
            ids = [train_ids[k] for k in order[start:start + cfg.batch_videos]]
            x, y = make_batch(ids, rng)
            logits = model(x)
            loss = task_loss(logits, y)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total_loss += loss.item() * len(y)
            correct += int((logits.argmax(1) == y).sum())
            seen += len(y)
            count += 1
        if sched is not None:
            sched.step()
        row = {"epoch": epoch, "loss": total_loss / max(seen, 1), "pretext_acc": correct / max(seen, 1)}
        if val_fn is not None and cfg.eval_every and (epoch % cfg.eval_every == 0 or epoch == epochs):
            row["val_acc"] = val_fn(model)
        row["wall_time"] = time.perf_counter() - t0
        metrics.append(row)
        log.info("epoch %d loss %.4f acc %.4f", epoch, row["loss"], row["pretext_acc"])
        ckpt = Checkpoint(model, cfg, epoch, num_classes, _rng_state(rng), metrics)
        if out_dir is not None:
            _write_metrics(out_dir / "metrics.csv", metrics)
            if epoch % cfg.checkpoint_every == 0 or epoch == epochs:
                save_checkpoint(ckpt, out_dir / f"checkpoint_{epoch:04d}.npz")
                save_checkpoint(ckpt, out_dir / "checkpoint_last.npz")
    ckpt.metrics = metrics
    return ckpt


def pretrain(
    config: TrainConfig,
    manifest: DatasetManifest,
    volumes: Mapping[str, FrameVolume] | None = None,
    out_dir: str | os.PathLike | None = None,
    val_manifest: DatasetManifest | None = None,
) -> Checkpoint:
    """Train a backbone on the playback-speed order task (or the speed baseline).

    Each optimization step consumes ``batch_videos * n`` clips.
    """
    config.validate()
    if config.task not in ("psp_order", "speed_baseline"):
        raise ConfigError(f"pretrain needs a pretext task, got {config.task!r}")
    train = manifest.split("train")
    if not train.entries:
        raise DataError("manifest has no training videos")
    vols = _volumes_for(train, volumes)
    ids = [e.source_id for e in train.entries]
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    model = build_model(config)

    val_fn = None
    if val_manifest is not None and val_manifest.entries:
        val_vols = _volumes_for(val_manifest, volumes)
        val_fn = lambda m: evaluate_pretext(m, config, list(val_vols.values()))  # noqa: E731

    return _run_epochs(
        model, config, ids, vols,
        lambda batch_ids, rng: pretext_batch([vols[i] for i in batch_ids], config, rng),
        out, None, val_fn,
    )


def evaluate_pretext(
    model: TaskModel, cfg: TrainConfig, volumes: list[FrameVolume], seed: int = 12345, rounds: int = 1
) -> float:
    """Pretext accuracy on freshly drawn tuples, eval mode and center crops."""
    rng = np.random.default_rng(seed)
    model.eval()
    correct = total = 0
    with torch.no_grad():
        for _ in range(rounds):
            for start in range(0, len(volumes), cfg.batch_videos):
                x, y = pretext_batch(volumes[start:start + cfg.batch_videos], cfg, rng, mode="eval")
                correct += int((model(x).argmax(1) == y).sum())
                total += len(y)
    return correct / max(total, 1)


def _class_count(manifest: DatasetManifest) -> int:
    if manifest.class_names:
        return len(manifest.class_names)
    return max(e.label for e in manifest.entries) + 1


def _check_arch(ssl: TrainConfig, cfg: TrainConfig) -> None:
    keys = ("arch", "width_scale", "m", "crop_size")
    diff = [k for k in keys if getattr(ssl, k) != getattr(cfg, k)]
    if ssl.norm.kind != cfg.norm.kind or ssl.norm.g != cfg.norm.g:
        diff.append("norm")
    if diff:
        raise ArchMismatch(f"checkpoint and config disagree on {diff}")


def finetune(
    ssl_checkpoint: Checkpoint | str | os.PathLike | None,
    manifest: DatasetManifest,
    config: TrainConfig,
    volumes: Mapping[str, FrameVolume] | None = None,
    out_dir: str | os.PathLike | None = None,
) -> Checkpoint:
    """Supervised training of backbone + fresh classification layer.

    ``ssl_checkpoint=None`` trains from random initialization (the scratch
    baseline). The pretext head is discarded; all layers stay trainable.
    """
    config = copy.deepcopy(config)
    config.task = "finetune_classify"
    config.validate()
    if not manifest.labelled:
        raise DataError("fine-tuning needs a labelled manifest")
    train = manifest.split("train")
    if not train.entries:
        raise DataError("manifest has no training videos")
    num_classes = _class_count(manifest)
    model = build_model(config, num_classes)
    if ssl_checkpoint is not None:
        if not isinstance(ssl_checkpoint, Checkpoint):
            ssl_checkpoint = load_checkpoint(ssl_checkpoint)
        _check_arch(ssl_checkpoint.config, config)
        model.backbone.load_state_dict(ssl_checkpoint.model.backbone.state_dict())
    vols = _volumes_for(train, volumes)
    labels = {e.source_id: e.label for e in train.entries}
    ids = [e.source_id for e in train.entries]
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    return _run_epochs(
        model, config, ids, vols,
        lambda batch_ids, rng: classification_batch(
            [vols[i] for i in batch_ids], [labels[i] for i in batch_ids], config, rng),
        out, num_classes, None,
    )


def eval_clips(vol: FrameVolume, cfg: TrainConfig, clips_per_video: int | None = None) -> np.ndarray:
    """Speed-1 clips at evenly spaced anchors, center-cropped: ``(k, 3, m, H, W)``."""
    k = clips_per_video or cfg.clips_per_video
    span = cfg.m
    room = max(vol.num_frames - span, 0)
    if k == 1:
        anchors = [room // 2]
    else:
        anchors = [int(round(j * room / (k - 1))) for j in range(k)]
    return np.stack([prepare_clip(sample_clip(vol, ClipSpec(1, a, cfg.m)).pixels, cfg, "eval", None)
                     for a in anchors])


def evaluate_classification(
    checkpoint: Checkpoint | str | os.PathLike,
    manifest: DatasetManifest,
    split: str = "test",
    volumes: Mapping[str, FrameVolume] | None = None,
) -> dict:
    """Clip-level top-1 accuracy plus per-class accuracy and confusion matrix."""
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    cfg, model = checkpoint.config, checkpoint.model
    part = manifest.split(split)
    if not part.entries:
        raise DataError(f"split {split!r} is empty")
    vols = _volumes_for(part, volumes)
    nc = checkpoint.num_classes or _class_count(manifest)
    confusion = np.zeros((nc, nc), dtype=np.int64)
    model.eval()
    with torch.no_grad():
        for e in part.entries:
            x = torch.from_numpy(eval_clips(vols[e.source_id], cfg))
            pred = model(x).argmax(1)
            for p in pred.tolist():
                confusion[e.label, p] += 1
    total = confusion.sum()
    per_class = {}
    names = manifest.class_names or [str(c) for c in range(nc)]
    for c in range(nc):
        row = confusion[c].sum()
        per_class[names[c]] = float(confusion[c, c] / row) if row else float("nan")
    return {
        "accuracy": float(np.trace(confusion) / total),
        "per_class": per_class,
        "confusion": confusion.tolist(),
        "num_clips": int(total),
    }
