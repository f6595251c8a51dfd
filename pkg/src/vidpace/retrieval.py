"""Nearest-neighbour clip retrieval with cosine distance.

Galleries hold unit-normalized retrieval features (final conv block, max
pooled over space per temporal slice). An index is saved as ``<prefix>.npy``
(float32, little-endian, rows = clips) plus ``<prefix>.json`` with the row
ids, labels and metadata.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from .backbones import extract_retrieval_features
from .data import DatasetManifest, FrameVolume
from .errors import DataError, EmptyIndex, EmptySplit
from .train import Checkpoint, _volumes_for, eval_clips, load_checkpoint

DEFAULT_KS = (1, 5, 10, 20, 50)
POOLING_SPEC = "max over HxW per temporal slice, flattened time-major"
# distances are rounded before ranking so mathematically tied rows (e.g. a
# vector and its rescaled copy) stay tied despite last-ulp differences
DISTANCE_DECIMALS = 12


@dataclass
class FeatureIndex:
    features: np.ndarray  # (N, D), unit rows
    source_ids: list[str]
    labels: list[int | None]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features)
        if self.features.ndim != 2:
            raise DataError(f"features must be 2-D, got {self.features.shape}")
        if not len(self.source_ids) == len(self.labels) == len(self.features):
            raise DataError("features, ids and labels must have equal length")

    def __len__(self) -> int:
        return len(self.features)

    @classmethod
    def from_raw(cls, raw, source_ids, labels, metadata=None) -> "FeatureIndex":
        return cls(unit_rows(raw), list(source_ids), list(labels), dict(metadata or {}))

    def save(self, prefix: str | os.PathLike) -> None:
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        np.save(prefix.with_suffix(".npy"), self.features.astype("<f4"))
        sidecar = {"source_ids": self.source_ids, "labels": self.labels, "metadata": self.metadata}
        prefix.with_suffix(".json").write_text(json.dumps(sidecar))

    @classmethod
    def load(cls, prefix: str | os.PathLike) -> "FeatureIndex":
        prefix = Path(prefix)
        feats = np.load(prefix.with_suffix(".npy"))
        side = json.loads(prefix.with_suffix(".json").read_text())
        return cls(feats, side["source_ids"], side["labels"], side["metadata"])


def unit_rows(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0):
        raise DataError("zero feature vector cannot be normalized")
    return x / norms[:, None]


def cosine_distances(features: np.ndarray, query: np.ndarray) -> np.ndarray:
    return np.round(1.0 - features @ query, DISTANCE_DECIMALS)


def model_hash(model: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for k, v in sorted(model.state_dict().items()):
        h.update(k.encode())
        h.update(v.detach().cpu().numpy().tobytes())
    return h.hexdigest()[:16]


def _features_for_split(
    checkpoint: Checkpoint,
    manifest: DatasetManifest,
    split: str,
    volumes: Mapping[str, FrameVolume] | None,
    clips_per_video: int | None,
) -> FeatureIndex:
    part = manifest.split(split)
    if not part.entries:
        raise EmptySplit(f"split {split!r} is empty")
    cfg = checkpoint.config
    k = clips_per_video or cfg.clips_per_video
    vols = _volumes_for(part, volumes)
    rows, ids, labels = [], [], []
    for e in part.entries:
        x = torch.from_numpy(eval_clips(vols[e.source_id], cfg, k))
        raw, _ = extract_retrieval_features(checkpoint.model.backbone, x)
        rows.append(raw.double().numpy())
        ids.extend(f"{e.source_id}#{j}" for j in range(len(x)))
        labels.extend([e.label] * len(x))
    meta = {"model_hash": model_hash(checkpoint.model.backbone), "pooling": POOLING_SPEC,
            "clips_per_video": k, "split": split}
    return FeatureIndex.from_raw(np.concatenate(rows), ids, labels, meta)


def build_gallery(
    checkpoint: Checkpoint | str | os.PathLike,
    manifest: DatasetManifest,
    volumes: Mapping[str, FrameVolume] | None = None,
    clips_per_video: int | None = None,
    split: str = "train",
) -> FeatureIndex:
    """Index speed-1, center-cropped clips (evenly spaced anchors) of one split."""
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    return _features_for_split(checkpoint, manifest, split, volumes, clips_per_video)


def query_topk(index: FeatureIndex, query, k: int) -> list[tuple[str, int | None, float]]:
    """``k`` nearest rows by cosine distance; equal distances keep insertion order."""
    if len(index) == 0:
        raise EmptyIndex("gallery is empty")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    dist = cosine_distances(index.features, unit_rows(query)[0])
    order = np.argsort(dist, kind="stable")[:k]
    return [(index.source_ids[i], index.labels[i], float(dist[i])) for i in order]


def topk_accuracy(index: FeatureIndex, queries: FeatureIndex, ks: Sequence[int] = DEFAULT_KS) -> dict[int, float]:
    """Fraction of query rows whose k nearest gallery rows contain their label."""
    if len(index) == 0:
        raise EmptyIndex("gallery is empty")
    if len(queries) == 0:
        return {k: float("nan") for k in ks}
    kmax = max(ks)
    gallery_labels = np.asarray(index.labels)
    hits = {k: 0 for k in ks}
    for q, label in zip(queries.features, queries.labels):
        dist = cosine_distances(index.features, q)
        ranked = gallery_labels[np.argsort(dist, kind="stable")[:kmax]]
        match = ranked == label
        for k in ks:
            hits[k] += bool(match[:k].any())
    return {k: hits[k] / len(queries) for k in ks}


def retrieval_eval(
    checkpoint: Checkpoint | str | os.PathLike,
    manifest: DatasetManifest,
    volumes: Mapping[str, FrameVolume] | None = None,
    ks: Sequence[int] | None = None,
) -> dict[int, float]:
    """Train-split gallery, test-split queries, top-k accuracy table."""
    if not isinstance(checkpoint, Checkpoint):
        checkpoint = load_checkpoint(checkpoint)
    gallery = build_gallery(checkpoint, manifest, volumes, split="train")
    queries = _features_for_split(checkpoint, manifest, "test", volumes, None)
    return topk_accuracy(gallery, queries, ks or checkpoint.config.retrieval_ks)
