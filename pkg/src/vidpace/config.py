"""Training configuration schema, JSON loading and ``key=value`` overrides.

Keys are flat except for the ``norm`` section, addressed with dotted paths
(``norm.g=2``). Unknown keys are rejected and every override is checked
against the declared field type.
"""
from __future__ import annotations

import json
import os
import types
import typing
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, Sequence

from .backbones import ARCHS, BackboneConfig
from .errors import ConfigError
from .sampler import DIRECTION_MODES, resolve_speeds
from .tgn import NORM_KINDS

TASKS = ("psp_order", "speed_baseline", "finetune_classify")
DEFAULT_EPOCHS = {"psp_order": 300, "speed_baseline": 300, "finetune_classify": 150}


@dataclass
class NormConfig:
    kind: str = "tgn"
    g: int = 2
    eps: float = 1e-5
    momentum: float = 0.1
    per_group_affine: bool = False


@dataclass
class TrainConfig:
    task: str = "psp_order"
    n: int = 3
    m: int = 16
    speeds: list[int] | None = None  # explicit speed set; overrides direction_mode/speed_magnitude
    direction_mode: str = "both"
    speed_magnitude: int | None = None
    arch: str = "c3d"
    width_scale: float = 1.0
    norm: NormConfig = field(default_factory=NormConfig)
    epochs: int | None = None  # None -> 300 for pretext tasks, 150 for fine-tuning
    lr: float = 0.001
    lr_schedule: str = "constant"
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_videos: int = 8
    dropout: float = 0.5
    pair_hidden_dim: int = 512
    resize: list[int] = field(default_factory=lambda: [127, 171])
    crop_size: int = 112
    seed: int = 0
    checkpoint_every: int = 10
    eval_every: int = 0  # 0 disables per-epoch held-out evaluation
    clips_per_video: int = 1
    retrieval_ks: list[int] = field(default_factory=lambda: [1, 5, 10, 20, 50])

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.direction_mode not in DIRECTION_MODES:
            raise ConfigError(f"direction_mode must be one of {DIRECTION_MODES}")
        if self.arch not in ARCHS:
            raise ConfigError(f"arch must be one of {ARCHS}")
        if self.norm.kind not in NORM_KINDS:
            raise ConfigError(f"norm.kind must be one of {NORM_KINDS}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError("lr_schedule must be 'constant' or 'cosine'")
        positive = dict(n=self.n, m=self.m, lr=self.lr, batch_videos=self.batch_videos,
                        crop_size=self.crop_size, checkpoint_every=self.checkpoint_every,
                        clips_per_video=self.clips_per_video, pair_hidden_dim=self.pair_hidden_dim,
                        g=self.norm.g, eps=self.norm.eps)
        for k, v in positive.items():
            if v <= 0:
                raise ConfigError(f"{k} must be positive, got {v}")
        if self.epochs is not None and self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.momentum < 0 or self.weight_decay < 0 or not 0 <= self.dropout < 1:
            raise ConfigError("momentum/weight_decay must be >= 0 and dropout in [0, 1)")
        if len(self.resize) != 2 or min(self.resize) < self.crop_size:
            raise ConfigError(f"resize {self.resize} must be two sizes >= crop_size {self.crop_size}")
        self.resolved_speeds()

    def resolved_speeds(self) -> tuple[int, ...]:
        if self.speeds is not None:
            speeds = tuple(sorted(int(s) for s in self.speeds))
            if len(speeds) != self.n or len(set(speeds)) != self.n or 0 in speeds:
                raise ConfigError(f"speeds {self.speeds} must be {self.n} distinct nonzero integers")
            return speeds
        return resolve_speeds(self.n, self.direction_mode, self.speed_magnitude)

    @property
    def resolved_epochs(self) -> int:
        return self.epochs if self.epochs is not None else DEFAULT_EPOCHS[self.task]

    @property
    def batch_clips(self) -> int:
        return self.batch_videos * (self.n if self.task != "finetune_classify" else 1)

    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig(
            arch=self.arch, width_scale=self.width_scale, norm_kind=self.norm.kind, g=self.norm.g,
            eps=self.norm.eps, momentum=self.norm.momentum, per_group_affine=self.norm.per_group_affine,
            clip_len=self.m, crop_size=self.crop_size,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        cfg = cls()
        for key, value in _flatten(data).items():
            set_key(cfg, key, value)
        cfg.validate()
        return cfg


def _flatten(data: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in data.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def schema(obj=None, prefix: str = "") -> list[tuple[str, Any, Any]]:
    """(dotted key, type, default) for every leaf field."""
    obj = obj if obj is not None else TrainConfig()
    hints = typing.get_type_hints(type(obj))
    rows = []
    for f in fields(obj):
        value = getattr(obj, f.name)
        if is_dataclass(value):
            rows.extend(schema(value, f"{prefix}{f.name}."))
        else:
            rows.append((f"{prefix}{f.name}", hints[f.name], value))
    return rows


def _coerce(value: Any, tp: Any, key: str) -> Any:
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        errors = []
        for a in args:
            if a is type(None):
                continue
            try:
                return _coerce(value, a, key)
            except ConfigError as exc:
                errors.append(str(exc))
        raise ConfigError("; ".join(errors))
    if origin in (list, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return [_coerce(v, args[0], key) for v in value]
    if tp is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key}: expected a bool, got {value!r}")
    if tp is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        raise ConfigError(f"{key}: expected an int, got {value!r}")
    if tp is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(f"{key}: expected a number, got {value!r}")
    if tp is str:
        if isinstance(value, str):
            return value
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    raise ConfigError(f"{key}: unsupported field type {tp}")


def set_key(cfg: TrainConfig, key: str, value: Any) -> None:
    *parents, leaf = key.split(".")
    target = cfg
    for p in parents:
        if not hasattr(target, p) or not is_dataclass(getattr(target, p)):
            raise ConfigError(f"unknown config key {key!r}")
        target = getattr(target, p)
    names = {f.name for f in fields(target)}
    if leaf not in names or is_dataclass(getattr(target, leaf)):
        raise ConfigError(f"unknown config key {key!r}")
    tp = typing.get_type_hints(type(target))[leaf]
    setattr(target, leaf, _coerce(value, tp, key))


def parse_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def apply_overrides(cfg: TrainConfig, overrides: Sequence[str]) -> TrainConfig:
    for text in overrides:
        set_key(cfg, *parse_override(text))
    cfg.validate()
    return cfg


def load_config(path: str | os.PathLike | None = None, overrides: Sequence[str] = ()) -> TrainConfig:
    """Read a JSON config (missing keys take defaults) and apply overrides."""
    data = json.loads(Path(path).read_text()) if path else {}
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    cfg = TrainConfig.from_dict(data)
    return apply_overrides(cfg, overrides)
