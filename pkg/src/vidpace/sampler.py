"""Playback-speed clip sampling, tuple construction and permutation labels.

A clip at speed ``s`` starting at anchor ``i`` takes ``m`` frames with stride
``s``. Negative speeds walk backwards from the anchor, so the clip is the
video played in reverse. Indices wrap around the end of the video.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import factorial
from typing import Sequence

import numpy as np

from .data import FrameVolume
from .errors import (
    ConfigError,
    InvalidPermutation,
    InvalidSpec,
    LabelOutOfRange,
    UnknownSpeed,
    UnsupportedTupleSize,
)

MAX_TUPLE_SIZE = 6
DIRECTION_MODES = ("both", "forward_only", "rewind_only")


@dataclass(frozen=True)
class ClipSpec:
    speed: int
    anchor: int
    length: int = 16

    def validate(self, num_frames: int | None = None) -> None:
        if self.speed == 0:
            raise InvalidSpec("speed must be nonzero")
        if self.length < 2:
            raise InvalidSpec(f"clip length must be >= 2, got {self.length}")
        if num_frames is not None and not 0 <= self.anchor < num_frames:
            raise InvalidSpec(f"anchor {self.anchor} outside [0, {num_frames})")


@dataclass
class Clip:
    spec: ClipSpec
    indices: np.ndarray  # (m,) int64 frame indices in playback order
    pixels: np.ndarray  # (m, H, W, 3)

    @property
    def speed(self) -> int:
        return self.spec.speed


@dataclass
class TupleSample:
    clips: list[Clip]  # network input order (shuffled)
    canonical_speeds: tuple[int, ...]  # ascending
    permutation: tuple[int, ...]  # canonical position -> input position
    label: int

    @property
    def input_speeds(self) -> tuple[int, ...]:
        return tuple(c.speed for c in self.clips)


def tuple_speeds(n: int) -> tuple[int, ...]:
    """Speed set of an ``n``-clip tuple, ascending by signed value.

    n=2 is {-3, +3}; odd n collects {+1, +(2k+1), -(2k+1)} for k = 1..(n-1)/2;
    even n > 2 adds -1 to the set for n-1.
    """
    if not 2 <= n <= MAX_TUPLE_SIZE:
        raise UnsupportedTupleSize(f"n must be in [2, {MAX_TUPLE_SIZE}], got {n}")
    if n == 2:
        speeds = {3, -3}
    elif n % 2:
        speeds = {1}
        for k in range(1, (n - 1) // 2 + 1):
            speeds |= {2 * k + 1, -(2 * k + 1)}
    else:
        speeds = set(tuple_speeds(n - 1)) | {-1}
    return tuple(sorted(speeds))


def resolve_speeds(
    n: int,
    direction_mode: str = "both",
    magnitude: int | None = None,
) -> tuple[int, ...]:
    """Speed set for the ablation axes (playback direction, speed magnitude).

    ``forward_only`` uses {1, 3, ..., 2n-1}, ``rewind_only`` its negation.
    ``magnitude`` replaces the outer speed of the mixed-direction set and is
    only defined for n=2 ({-s, s}) and n=3 ({-s, 1, s}).
    """
    if not 2 <= n <= MAX_TUPLE_SIZE:
        raise UnsupportedTupleSize(f"n must be in [2, {MAX_TUPLE_SIZE}], got {n}")
    if direction_mode not in DIRECTION_MODES:
        raise ConfigError(f"unknown direction_mode {direction_mode!r}")
    if direction_mode == "forward_only":
        if magnitude is not None:
            raise ConfigError("speed magnitude only applies to direction_mode='both'")
        return tuple(range(1, 2 * n, 2))
    if direction_mode == "rewind_only":
        if magnitude is not None:
            raise ConfigError("speed magnitude only applies to direction_mode='both'")
        return tuple(sorted(-s for s in range(1, 2 * n, 2)))
    if magnitude is None:
        return tuple_speeds(n)
    if magnitude < 2:
        raise ConfigError(f"speed magnitude must be >= 2, got {magnitude}")
    if n == 2:
        return (-magnitude, magnitude)
    if n == 3:
        return (-magnitude, 1, magnitude)
    raise ConfigError("speed magnitude is only defined for n in {2, 3}")


def clip_indices(spec: ClipSpec, num_frames: int) -> np.ndarray:
    spec.validate(num_frames)
    steps = np.arange(spec.length, dtype=np.int64)
    return (spec.anchor + steps * spec.speed) % num_frames


def sample_clip(volume: FrameVolume, spec: ClipSpec) -> Clip:
    idx = clip_indices(spec, volume.num_frames)
    return Clip(spec=spec, indices=idx, pixels=volume.frames[idx])


def permutation_to_label(perm: Sequence[int]) -> int:
    """Lexicographic rank of ``perm`` among permutations of ``range(len(perm))``."""
    perm = [int(p) for p in perm]
    n = len(perm)
    if sorted(perm) != list(range(n)):
        raise InvalidPermutation(f"{perm} is not a permutation of 0..{n - 1}")
    rank = 0
    remaining = list(range(n))
    for pos, p in enumerate(perm):
        digit = remaining.index(p)
        rank += digit * factorial(n - 1 - pos)
        remaining.pop(digit)
    return rank


def label_to_permutation(label: int, n: int) -> tuple[int, ...]:
    if n < 1:
        raise InvalidPermutation(f"n must be positive, got {n}")
    if not 0 <= label < factorial(n):
        raise LabelOutOfRange(f"label {label} outside [0, {factorial(n)})")
    remaining = list(range(n))
    out = []
    for pos in range(n):
        digit, label = divmod(label, factorial(n - 1 - pos))
        out.append(remaining.pop(digit))
    return tuple(out)


def permutation_from_speeds(input_speeds: Sequence[int]) -> tuple[int, ...]:
    """Canonical-to-input mapping implied by the speeds in input order."""
    canonical = sorted(input_speeds)
    if len(set(canonical)) != len(canonical):
        raise InvalidPermutation("speeds in a tuple must be distinct")
    where = {s: j for j, s in enumerate(input_speeds)}
    return tuple(where[s] for s in canonical)


def sample_tuple(
    volume: FrameVolume,
    n: int,
    m: int,
    rng: np.random.Generator,
    speeds: Sequence[int] | None = None,
) -> TupleSample:
    """Draw one shuffled tuple of clips from ``volume``.

    Every clip gets its own uniform anchor; frames may repeat across clips.
    """
    canonical = tuple(sorted(speeds)) if speeds is not None else tuple_speeds(n)
    if len(canonical) != n:
        raise ConfigError(f"got {len(canonical)} speeds for n={n}")
    if m < 2:
        raise InvalidSpec(f"clip length must be >= 2, got {m}")
    anchors = rng.integers(0, volume.num_frames, size=n)
    perm = tuple(int(p) for p in rng.permutation(n))
    clips: list[Clip | None] = [None] * n
    for c, (s, a) in enumerate(zip(canonical, anchors)):
        clips[perm[c]] = sample_clip(volume, ClipSpec(int(s), int(a), m))
    return TupleSample(
        clips=clips,  # type: ignore[arg-type]
        canonical_speeds=canonical,
        permutation=perm,
        label=permutation_to_label(perm),
    )


def speed_label(speed: int, speed_set: Sequence[int]) -> int:
    ordered = sorted(speed_set)
    if speed not in ordered:
        raise UnknownSpeed(f"speed {speed} not in {ordered}")
    return ordered.index(speed)
