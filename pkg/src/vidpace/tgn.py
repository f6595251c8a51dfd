"""Layer-dependable temporal group normalization.

The temporal axis of a feature map is cut into ``p`` contiguous groups of a
fixed element size ``g``; mean and variance are taken per (channel, group)
over batch, the group's frames, height and width. Because ``g`` is fixed
while a layer's temporal size ``t`` shrinks with depth, deeper layers get
fewer groups (``p = t / g``, or a single group once ``t <= g``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, IndivisibleError, ShapeMismatch

NORM_KINDS = ("bn", "tgn")


@dataclass(frozen=True)
class GroupPlan:
    temporal_size: int
    element_size: int
    group_count: int

    @property
    def group_size(self) -> int:
        return self.temporal_size // self.group_count

    @property
    def boundaries(self) -> list[tuple[int, int]]:
        s = self.group_size
        return [(i * s, (i + 1) * s) for i in range(self.group_count)]


def plan_groups(t: int, g: int) -> GroupPlan:
    if t < 1 or g < 1:
        raise ConfigError(f"temporal size and group size must be positive, got t={t}, g={g}")
    if t <= g:
        return GroupPlan(t, g, 1)
    if t % g:
        raise IndivisibleError(f"temporal size {t} is not divisible by group size {g}")
    return GroupPlan(t, g, t // g)


@dataclass
class TGNParams:
    gamma: torch.Tensor  # (C,) or (C, p) with per-group affine
    beta: torch.Tensor
    eps: float = 1e-5


@dataclass
class TGNState:
    running_mean: torch.Tensor  # (C, p)
    running_var: torch.Tensor  # (C, p)
    momentum: float = 0.1
    num_batches_tracked: int = 0

    @classmethod
    def fresh(cls, channels: int, groups: int, momentum: float = 0.1, dtype=torch.float32) -> "TGNState":
        return cls(torch.zeros(channels, groups, dtype=dtype), torch.ones(channels, groups, dtype=dtype), momentum)


def _normalize_cfirst(
    x: torch.Tensor,
    groups: int,
    gamma: torch.Tensor,
    beta: torch.Tensor,
    eps: float,
    running_mean: torch.Tensor | None,
    running_var: torch.Tensor | None,
    momentum: float,
    training: bool,
) -> torch.Tensor:
    """Core on channel-first ``(B, C, T, H, W)``; updates running stats in place."""
    B, C, T, H, W = x.shape
    xg = x.reshape(B, C, groups, T // groups, H, W)
    if training:
        mean = xg.mean(dim=(0, 3, 4, 5))
        var = (xg - mean[None, :, :, None, None, None]).pow(2).mean(dim=(0, 3, 4, 5))
        if running_mean is not None:
            count = B * (T // groups) * H * W
            with torch.no_grad():
                unbiased = var.detach() * (count / (count - 1) if count > 1 else 1.0)
                running_mean.mul_(1 - momentum).add_(momentum * mean.detach())
                running_var.mul_(1 - momentum).add_(momentum * unbiased)
    else:
        if running_mean is None:
            raise ConfigError("eval mode needs running statistics")
        mean, var = running_mean, running_var
    xhat = (xg - mean[None, :, :, None, None, None]) / torch.sqrt(var + eps)[None, :, :, None, None, None]
    if gamma.dim() == 1:
        gamma = gamma[:, None]
        beta = beta[:, None]
    y = xhat * gamma[None, :, :, None, None, None] + beta[None, :, :, None, None, None]
    return y.reshape(B, C, T, H, W)


def tgn_forward(
    x: torch.Tensor,
    plan: GroupPlan,
    params: TGNParams,
    state: TGNState | None = None,
    mode: str = "train",
) -> torch.Tensor:
    """Normalize a ``(B, T, C, H, W)`` feature map by temporal groups.

    In train mode batch statistics are used and ``state`` (if given) is
    updated by exponential moving average; eval mode reads ``state``.
    """
    if x.dim() != 5:
        raise ShapeMismatch(f"expected a 5-D (B, T, C, H, W) tensor, got shape {tuple(x.shape)}")
    if x.shape[1] != plan.temporal_size:
        raise ShapeMismatch(f"temporal size {x.shape[1]} != plan {plan.temporal_size}")
    if x.shape[2] != params.gamma.shape[0]:
        raise ShapeMismatch(f"channels {x.shape[2]} != params {params.gamma.shape[0]}")
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    y = _normalize_cfirst(
        x.transpose(1, 2),
        plan.group_count,
        params.gamma,
        params.beta,
        params.eps,
        state.running_mean if state is not None else None,
        state.running_var if state is not None else None,
        state.momentum if state is not None else 0.0,
        mode == "train",
    )
    if state is not None and mode == "train":
        state.num_batches_tracked += 1
    return y.transpose(1, 2)


def tgn_reference_oracle(x, plan: GroupPlan, params: TGNParams) -> np.ndarray:
    """Train-mode TGN by explicit summation loops, for checking ``tgn_forward``.

    ``x`` is ``(B, T, C, H, W)``; all arithmetic is done in Python floats.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 5:
        raise ShapeMismatch(f"expected 5-D input, got {x.shape}")
    B, T, C, H, W = x.shape
    if T != plan.temporal_size or C != len(params.gamma):
        raise ShapeMismatch("input does not match plan/params")
    gamma = np.asarray(params.gamma.detach().cpu() if torch.is_tensor(params.gamma) else params.gamma, np.float64)
    beta = np.asarray(params.beta.detach().cpu() if torch.is_tensor(params.beta) else params.beta, np.float64)
    y = np.empty_like(x)
    for c in range(C):
        for gi, (t0, t1) in enumerate(plan.boundaries):
            total, count = 0.0, 0
            for b in range(B):
                for t in range(t0, t1):
                    for h in range(H):
                        for w in range(W):
                            total += x[b, t, c, h, w]
                            count += 1
            mean = total / count
            sq = 0.0
            for b in range(B):
                for t in range(t0, t1):
                    for h in range(H):
                        for w in range(W):
                            d = x[b, t, c, h, w] - mean
                            sq += d * d
            std = (sq / count + params.eps) ** 0.5
            g_ = gamma[c, gi] if gamma.ndim == 2 else gamma[c]
            b_ = beta[c, gi] if beta.ndim == 2 else beta[c]
            for b in range(B):
                for t in range(t0, t1):
                    for h in range(H):
                        for w in range(W):
                            y[b, t, c, h, w] = g_ * (x[b, t, c, h, w] - mean) / std + b_
    return y


class TemporalGroupNorm(nn.Module):
    """TGN layer for channel-first ``(B, C, T, H, W)`` activations."""

    def __init__(
        self,
        num_channels: int,
        temporal_size: int,
        g: int = 2,
        eps: float = 1e-5,
        momentum: float = 0.1,
        per_group_affine: bool = False,
    ):
        super().__init__()
        self.plan = plan_groups(temporal_size, g)
        self.num_channels = num_channels
        self.eps = eps
        self.momentum = momentum
        p = self.plan.group_count
        shape = (num_channels, p) if per_group_affine else (num_channels,)
        self.weight = nn.Parameter(torch.ones(shape))
        self.bias = nn.Parameter(torch.zeros(shape))
        self.register_buffer("running_mean", torch.zeros(num_channels, p))
        self.register_buffer("running_var", torch.ones(num_channels, p))
        self.register_buffer("num_batches_tracked", torch.tensor(0, dtype=torch.long))

    @property
    def group_count(self) -> int:
        return self.plan.group_count

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 5 or x.shape[1] != self.num_channels or x.shape[2] != self.plan.temporal_size:
            raise ShapeMismatch(
                f"expected (B, {self.num_channels}, {self.plan.temporal_size}, H, W), got {tuple(x.shape)}"
            )
        if self.training:
            self.num_batches_tracked += 1
        return _normalize_cfirst(
            x, self.plan.group_count, self.weight, self.bias, self.eps,
            self.running_mean, self.running_var, self.momentum, self.training,
        )

    def extra_repr(self) -> str:
        return (f"{self.num_channels}, t={self.plan.temporal_size}, g={self.plan.element_size}, "
                f"p={self.plan.group_count}, eps={self.eps}, momentum={self.momentum}")


def attach_norm(
    channels: int,
    temporal_size: int,
    norm_kind: str = "tgn",
    g: int = 2,
    eps: float = 1e-5,
    momentum: float = 0.1,
    per_group_affine: bool = False,
) -> nn.Module:
    """Normalization layer for a conv output of known post-pooling temporal size."""
    kind = norm_kind.lower()
    if kind == "bn":
        return nn.BatchNorm3d(channels, eps=eps, momentum=momentum)
    if kind == "tgn":
        return TemporalGroupNorm(channels, temporal_size, g, eps, momentum, per_group_affine)
    raise ConfigError(f"norm kind must be one of {NORM_KINDS}, got {norm_kind!r}")
