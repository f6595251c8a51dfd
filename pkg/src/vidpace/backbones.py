"""3D-CNN feature extractors (C3D, R3D, R(2+1)D) with pluggable normalization.

Every model consumes channel-first clips ``(B, 3, m, H, W)`` and returns a
``(B, embedding_dim)`` vector after global spatio-temporal average pooling.
``feature_map`` exposes the final conv activations used for retrieval.
The temporal size seen by each normalization layer is computed while the
network is built, so TGN group plans follow the real pooling schedule.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .data import DEFAULT_CROP, normalize_pixels
from .errors import ConfigError, ShapeMismatch
from .tgn import TemporalGroupNorm, attach_norm

ARCHS = ("c3d", "r3d", "r2plus1d")
C3D_WIDTHS = (64, 128, 256, 512, 512)
RESNET_WIDTHS = (64, 128, 256, 512)


@dataclass
class BackboneConfig:
    arch: str = "r3d"
    width_scale: float = 1.0
    norm_kind: str = "tgn"
    g: int = 2
    eps: float = 1e-5
    momentum: float = 0.1
    per_group_affine: bool = False
    clip_len: int = 16
    crop_size: int = DEFAULT_CROP

    def validate(self) -> None:
        if self.arch not in ARCHS:
            raise ConfigError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if not 0 < self.width_scale <= 1:
            raise ConfigError(f"width_scale must be in (0, 1], got {self.width_scale}")
        if self.clip_len < 2 or self.crop_size < 1:
            raise ConfigError("clip_len must be >= 2 and crop_size >= 1")

    @property
    def embedding_dim(self) -> int:
        return scaled(512, self.width_scale)


def scaled(channels: int, scale: float) -> int:
    return max(1, int(round(channels * scale)))


def _conv_out(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


class FeatureExtractor(nn.Module):
    """Common surface: ``forward`` -> embedding, ``feature_map`` -> last conv block."""

    config: BackboneConfig
    stage_temporal_sizes: list[int]

    def feature_map(self, x: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self._check_input(x)
        return F.adaptive_avg_pool3d(self.feature_map(x), 1).flatten(1)

    def _check_input(self, x: torch.Tensor) -> None:
        if x.dim() != 5 or x.shape[1] != 3 or x.shape[2] != self.config.clip_len:
            raise ShapeMismatch(f"expected (B, 3, {self.config.clip_len}, H, W), got {tuple(x.shape)}")

    @property
    def embedding_dim(self) -> int:
        return self.config.embedding_dim

    def stage_plans(self) -> list[tuple[int, int]]:
        """(temporal size, group count) at the output norm layer of each stage."""
        out = []
        for stage, t in zip(self.stages, self.stage_temporal_sizes):
            norms = [m for m in stage.modules() if isinstance(m, (TemporalGroupNorm, nn.BatchNorm3d))]
            p = norms[-1].group_count if isinstance(norms[-1], TemporalGroupNorm) else 1
            out.append((t, p))
        return out


class ConvNormReLU(nn.Sequential):
    def __init__(self, cin, cout, kernel, stride, padding, t_out, cfg: BackboneConfig):
        super().__init__(
            nn.Conv3d(cin, cout, kernel, stride=stride, padding=padding, bias=False),
            _norm(cout, t_out, cfg),
            nn.ReLU(inplace=True),
        )


def _norm(channels: int, t: int, cfg: BackboneConfig) -> nn.Module:
    return attach_norm(channels, t, cfg.norm_kind, cfg.g, cfg.eps, cfg.momentum, cfg.per_group_affine)


class C3D(FeatureExtractor):
    """Nine 3x3x3 convolutions in five stages; the last one is Conv5b.

    Pooling halves time after stages 1-3 and keeps it after stage 4, giving
    temporal sizes (16, 8, 4, 2, 2) for 16-frame clips.
    """

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.config = cfg
        widths = [scaled(w, cfg.width_scale) for w in C3D_WIDTHS]
        convs_per_stage = (1, 1, 2, 2, 2)
        halve_time = (True, True, True, False, False)
        t, cin = cfg.clip_len, 3
        stages, self.stage_temporal_sizes = [], []
        for k, (w, reps) in enumerate(zip(widths, convs_per_stage)):
            layers = []
            self.stage_temporal_sizes.append(t)
            for _ in range(reps):
                layers.append(ConvNormReLU(cin, w, 3, 1, 1, t, cfg))
                cin = w
            if k < 4:
                kt = 2 if halve_time[k] and t > 1 else 1
                layers.append(nn.MaxPool3d((kt, 2, 2), (kt, 2, 2), ceil_mode=True))
                t = _conv_out(t, kt, kt, 0) if kt > 1 else t
            stages.append(nn.Sequential(*layers))
        self.stages = nn.ModuleList(stages)
        _init_weights(self)

    def feature_map(self, x):
        for s in self.stages:
            x = s(x)
        return x


class BasicBlock(nn.Module):
    def __init__(self, cin, cout, stride, t_in, cfg: BackboneConfig, factorized: bool):
        super().__init__()
        t_out = _conv_out(t_in, 3, stride, 1)
        if factorized:
            self.conv1 = _split_conv(cin, cout, stride, t_in, cfg)
            self.conv2 = _split_conv(cout, cout, 1, t_out, cfg)
        else:
            self.conv1 = nn.Conv3d(cin, cout, 3, stride, 1, bias=False)
            self.conv2 = nn.Conv3d(cout, cout, 3, 1, 1, bias=False)
        self.norm1 = _norm(cout, t_out, cfg)
        self.norm2 = _norm(cout, t_out, cfg)
        self.downsample = None
        if stride != 1 or cin != cout:
            self.downsample = nn.Sequential(
                nn.Conv3d(cin, cout, 1, stride, bias=False), _norm(cout, t_out, cfg)
            )
        self.t_out = t_out

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = F.relu(self.norm1(self.conv1(x)), inplace=True)
        out = self.norm2(self.conv2(out))
        return F.relu(out + identity, inplace=True)


def _split_conv(cin, cout, stride, t_in, cfg, k: int = 3) -> nn.Sequential:
    """(2+1)D factorization: 1xkxk spatial conv, norm, ReLU, then kx1x1 temporal conv.

    The hidden width keeps the parameter count of the full kxkxk kernel.
    """
    mid = max(1, (k * k * k * cin * cout) // (k * k * cin + k * cout))
    return nn.Sequential(
        nn.Conv3d(cin, mid, (1, k, k), (1, stride, stride), (0, k // 2, k // 2), bias=False),
        _norm(mid, t_in, cfg),
        nn.ReLU(inplace=True),
        nn.Conv3d(mid, cout, (k, 1, 1), (stride, 1, 1), (k // 2, 0, 0), bias=False),
    )


class ResNet3D(FeatureExtractor):
    """R3D-18 (``factorized=False``) or R(2+1)D-18: stem + four residual stages."""

    def __init__(self, cfg: BackboneConfig, factorized: bool):
        super().__init__()
        self.config = cfg
        widths = [scaled(w, cfg.width_scale) for w in RESNET_WIDTHS]
        t = cfg.clip_len
        w0 = widths[0]
        if factorized:
            mid = scaled(45, cfg.width_scale)
            stem = nn.Sequential(
                nn.Conv3d(3, mid, (1, 7, 7), (1, 2, 2), (0, 3, 3), bias=False),
                _norm(mid, t, cfg), nn.ReLU(inplace=True),
                nn.Conv3d(mid, w0, (3, 1, 1), 1, (1, 0, 0), bias=False),
                _norm(w0, t, cfg), nn.ReLU(inplace=True),
            )
        else:
            stem = nn.Sequential(
                nn.Conv3d(3, w0, (3, 7, 7), (1, 2, 2), (1, 3, 3), bias=False),
                _norm(w0, t, cfg), nn.ReLU(inplace=True),
            )
        stages = [stem]
        self.stage_temporal_sizes = [t]
        cin = w0
        for k, w in enumerate(widths):
            stride = 1 if k == 0 else 2
            blocks = []
            t_stage = _conv_out(t, 3, stride, 1)
            self.stage_temporal_sizes.append(t_stage)
            for b in range(2):
                s = stride if b == 0 else 1
                blocks.append(BasicBlock(cin, w, s, t, cfg, factorized))
                t = blocks[-1].t_out
                cin = w
            stages.append(nn.Sequential(*blocks))
        self.stages = nn.ModuleList(stages)
        _init_weights(self)

    def feature_map(self, x):
        for s in self.stages:
            x = s(x)
        return x


def _init_weights(model: nn.Module) -> None:
    for mod in model.modules():
        if isinstance(mod, nn.Conv3d):
            nn.init.kaiming_normal_(mod.weight, mode="fan_out", nonlinearity="relu")
        elif isinstance(mod, (nn.BatchNorm3d, TemporalGroupNorm)):
            nn.init.ones_(mod.weight)
            nn.init.zeros_(mod.bias)


def build_backbone(config: BackboneConfig, seed: int | None = None) -> FeatureExtractor:
    config.validate()
    with torch.random.fork_rng(devices=[]):
        if seed is not None:
            torch.manual_seed(seed)
        if config.arch == "c3d":
            return C3D(config)
        return ResNet3D(config, factorized=config.arch == "r2plus1d")


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def clips_to_tensor(clips) -> torch.Tensor:
    """uint8 ``(m, H, W, 3)`` or ``(B, m, H, W, 3)`` -> normalized ``(B, 3, m, H, W)``."""
    if torch.is_tensor(clips):
        return clips
    arr = np.asarray(clips)
    if arr.ndim == 4:
        arr = arr[None]
    if arr.ndim != 5 or arr.shape[-1] != 3:
        raise ShapeMismatch(f"expected (B, m, H, W, 3) clips, got {arr.shape}")
    return torch.from_numpy(np.stack([normalize_pixels(c) for c in arr]))


def extract_features(model: FeatureExtractor, clips, mode: str = "eval") -> torch.Tensor:
    """Embeddings for one clip or a batch; eval mode runs without gradients."""
    x = clips_to_tensor(clips)
    if mode == "eval":
        model.eval()
        with torch.no_grad():
            return model(x)
    if mode != "train":
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    model.train()
    return model(x)


def retrieval_pool(fmap: torch.Tensor) -> torch.Tensor:
    """Max over the spatial extent of each temporal slice, flattened time-major."""
    B, C, T = fmap.shape[:3]
    pooled = F.adaptive_max_pool3d(fmap, (T, 1, 1)).reshape(B, C, T)
    return pooled.transpose(1, 2).reshape(B, T * C)


def extract_retrieval_features(model: FeatureExtractor, clips) -> tuple[torch.Tensor, torch.Tensor]:
    """(raw max-pooled features, unit-normalized copy) in eval mode."""
    x = clips_to_tensor(clips)
    model._check_input(x)
    model.eval()
    with torch.no_grad():
        feats = retrieval_pool(model.feature_map(x))
    return feats, F.normalize(feats, dim=1)
