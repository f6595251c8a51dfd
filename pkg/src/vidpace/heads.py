"""Pretext classifiers: pairwise order head over n! permutations and the speed baseline."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import factorial

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ArityMismatch, LabelOutOfRange


@dataclass
class OrderHeadConfig:
    n: int = 3
    embedding_dim: int = 512
    pair_hidden_dim: int = 512
    dropout: float = 0.5

    @property
    def num_classes(self) -> int:
        return factorial(self.n)

    @property
    def num_pairs(self) -> int:
        return self.n * (self.n - 1) // 2


class OrderHead(nn.Module):
    """Encode every input-position pair (i < j) and classify the tuple order.

    Linear layers keep PyTorch's default fan-in uniform initialization.
    """

    def __init__(self, cfg: OrderHeadConfig):
        super().__init__()
        self.cfg = cfg
        self.pairs = list(combinations(range(cfg.n), 2))
        self.pair_fc = nn.Linear(2 * cfg.embedding_dim, cfg.pair_hidden_dim)
        self.dropout = nn.Dropout(cfg.dropout)
        self.fc = nn.Linear(cfg.pair_hidden_dim * len(self.pairs), cfg.num_classes)

    def forward(self, emb: torch.Tensor) -> torch.Tensor:
        """``emb``: ``(B, n, d)`` in shuffled input order -> ``(B, n!)`` logits."""
        if emb.dim() != 3 or emb.shape[1] != self.cfg.n or emb.shape[2] != self.cfg.embedding_dim:
            raise ArityMismatch(
                f"expected (B, {self.cfg.n}, {self.cfg.embedding_dim}) embeddings, got {tuple(emb.shape)}"
            )
        i, j = zip(*self.pairs)
        pair_in = torch.cat([emb[:, list(i)], emb[:, list(j)]], dim=2)  # (B, P, 2d)
        codes = F.relu(self.pair_fc(pair_in))
        return self.fc(self.dropout(codes.flatten(1)))


def pairwise_encode(embeddings: torch.Tensor, head: OrderHead, mode: str = "eval") -> torch.Tensor:
    """Order logits for a single tuple ``(n, d)`` or a batch ``(B, n, d)``."""
    single = embeddings.dim() == 2
    x = embeddings[None] if single else embeddings
    head.train(mode == "train")
    with torch.set_grad_enabled(mode == "train"):
        out = head(x)
    return out[0] if single else out


class SpeedHead(nn.Module):
    def __init__(self, embedding_dim: int, num_speeds: int, zero_init: bool = False):
        super().__init__()
        self.embedding_dim = embedding_dim
        self.fc = nn.Linear(embedding_dim, num_speeds)
        if zero_init:
            nn.init.zeros_(self.fc.weight)
            nn.init.zeros_(self.fc.bias)

    def forward(self, emb: torch.Tensor) -> torch.Tensor:
        if emb.shape[-1] != self.embedding_dim:
            raise ArityMismatch(f"expected embeddings of dim {self.embedding_dim}, got {emb.shape[-1]}")
        return self.fc(emb)


class ClassifierHead(nn.Module):
    """Randomly initialized classification layer appended for fine-tuning."""

    def __init__(self, embedding_dim: int, num_classes: int, dropout: float = 0.5):
        super().__init__()
        self.dropout = nn.Dropout(dropout)
        self.fc = nn.Linear(embedding_dim, num_classes)

    def forward(self, emb: torch.Tensor) -> torch.Tensor:
        return self.fc(self.dropout(emb))


def task_loss(logits: torch.Tensor, labels) -> torch.Tensor:
    """Mean cross-entropy; a 1-D ``logits`` is treated as a batch of one."""
    if logits.dim() == 1:
        logits = logits[None]
    labels = torch.as_tensor(labels, dtype=torch.long, device=logits.device).reshape(-1)
    if labels.numel() != logits.shape[0]:
        raise ArityMismatch(f"{labels.numel()} labels for {logits.shape[0]} rows of logits")
    if labels.numel() and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise LabelOutOfRange(f"labels must lie in [0, {logits.shape[1]})")
    return F.cross_entropy(logits, labels)
