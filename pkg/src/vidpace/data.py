"""Video decoding, dataset manifests, synthetic motion videos and spatial augmentation.

Frames are stored as ``uint8`` arrays shaped ``(L, H, W, 3)`` in RGB order.
The synthetic dataset layout on disk is::

    root/
      manifest.jsonl          one {"source_id", "path", "label", "split"} per line
      metadata.jsonl          one {"source_id", "velocity", "direction", ...} per line
      <class_name>/<source_id>.npy   raw (L, H, W, 3) uint8 array

``.npy`` files are the package's raw container; any video readable by OpenCV
and directories of image frames are accepted as well.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import cv2
import numpy as np

from .errors import ConfigError, DataError, DecodeError, EmptyVideoError, MissingSplitError

VIDEO_EXTENSIONS = (".npy", ".avi", ".mp4", ".mkv", ".webm", ".mov", ".mpg")
IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")
SPLITS = ("train", "test")

# Per-channel normalization applied after scaling to [0, 1].
PIXEL_MEAN = (0.485, 0.456, 0.406)
PIXEL_STD = (0.229, 0.224, 0.225)

DEFAULT_RESIZE = (127, 171)
DEFAULT_CROP = 112

DIRECTIONS = ("right", "down", "left", "up")
_DIRECTION_VECTORS = {"right": (0, 1), "down": (1, 0), "left": (0, -1), "up": (-1, 0)}


@dataclass
class FrameVolume:
    frames: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[-1] != 3:
            raise DataError(f"expected (L, H, W, 3) frames, got {self.frames.shape}")
        if len(self.frames) == 0:
            raise EmptyVideoError(f"{self.source_id or 'video'} has no frames")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]


def _read_image_dir(path: Path) -> list[np.ndarray]:
    files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)
    frames = []
    for f in files:
        img = cv2.imread(str(f), cv2.IMREAD_COLOR)
        if img is None:
            raise DecodeError(f"cannot decode frame {f}")
        frames.append(cv2.cvtColor(img, cv2.COLOR_BGR2RGB))
    return frames


def _read_capture(path: Path, target_fps: float | None) -> list[np.ndarray]:
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise DecodeError(f"cannot open video {path}")
    src_fps = cap.get(cv2.CAP_PROP_FPS) or 0.0
    frames = []
    try:
        while True:
            ok, img = cap.read()
            if not ok:
                break
            frames.append(cv2.cvtColor(img, cv2.COLOR_BGR2RGB))
    finally:
        cap.release()
    if target_fps and src_fps > 0 and frames and abs(src_fps - target_fps) > 1e-6:
        duration = len(frames) / src_fps
        count = max(1, int(round(duration * target_fps)))
        pick = np.minimum((np.arange(count) * src_fps / target_fps).astype(int), len(frames) - 1)
        frames = [frames[i] for i in pick]
    return frames


def ingest_video(file_path: str | os.PathLike, target_fps: float | None = None) -> FrameVolume:
    """Decode a video file, ``.npy`` frame stack or directory of images.

    ``target_fps`` resamples by nearest-frame selection; it is ignored for
    sources without a frame rate (``.npy`` and image directories).
    """
    path = Path(file_path)
    if not path.exists():
        raise DecodeError(f"{path} does not exist")
    source_id = path.stem
    if path.is_dir():
        frames = _read_image_dir(path)
        arr = np.stack(frames) if frames else np.zeros((0, 1, 1, 3), np.uint8)
    elif path.suffix.lower() == ".npy":
        try:
            arr = np.load(path, allow_pickle=False)
        except (ValueError, OSError) as exc:
            raise DecodeError(f"cannot decode {path}: {exc}") from exc
        if arr.dtype != np.uint8 or arr.ndim != 4 or arr.shape[-1] != 3:
            raise DecodeError(f"{path}: expected uint8 (L, H, W, 3), got {arr.dtype} {arr.shape}")
    else:
        frames = _read_capture(path, target_fps)
        if not frames:
            # OpenCV reports unreadable containers as empty streams.
            raise DecodeError(f"{path} yielded no decodable frames")
        arr = np.stack(frames)
    if len(arr) == 0:
        raise EmptyVideoError(f"{path} contains no frames")
    return FrameVolume(np.ascontiguousarray(arr), source_id=source_id)


@dataclass
class ManifestEntry:
    source_id: str
    path: str
    label: int | None
    split: str


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    class_names: list[str] | None = None

    def __post_init__(self):
        ids = [e.source_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise DataError("source_id values must be unique")
        labelled = {e.label is not None for e in self.entries}
        if len(labelled) > 1:
            raise DataError("labels must be present for all entries or for none")
        for e in self.entries:
            if e.split not in SPLITS:
                raise DataError(f"bad split {e.split!r} for {e.source_id}")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def labelled(self) -> bool:
        return bool(self.entries) and self.entries[0].label is not None

    def split(self, name: str) -> "DatasetManifest":
        return DatasetManifest([e for e in self.entries if e.split == name], self.class_names)

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            for e in self.entries:
                fh.write(json.dumps(asdict(e)) + "\n")
        if self.class_names is not None:
            Path(str(path) + ".classes").write_text("\n".join(self.class_names) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "DatasetManifest":
        entries = []
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    entries.append(ManifestEntry(**json.loads(line)))
        classes_file = Path(str(path) + ".classes")
        names = classes_file.read_text().split() if classes_file.exists() else None
        base = Path(path).parent
        for e in entries:
            if not os.path.isabs(e.path):
                e.path = str(base / e.path)
        return cls(entries, names)


def _discover(root: Path) -> list[Path]:
    found = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames.sort()
        here = Path(dirpath)
        for name in sorted(filenames):
            if Path(name).suffix.lower() in VIDEO_EXTENSIONS:
                found.append(here / name)
    return found


def read_split_file(path: str | os.PathLike, split: str) -> dict[str, str]:
    """Parse a UCF-101 style list (``Class/video.avi [label]`` per line)."""
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            out[line.split()[0]] = split
    return out


def build_manifest(
    root_dir: str | os.PathLike,
    split_spec: Mapping[str, str] | None = None,
    default_split: str = "train",
) -> DatasetManifest:
    """Index every video under ``root_dir``.

    Videos inside first-level subdirectories take the directory name as their
    class; videos directly under the root give an unlabelled (SSL) manifest.
    ``split_spec`` maps root-relative paths to ``train``/``test``; unlisted
    files fall into ``default_split``.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise DataError(f"{root} is not a directory")
    files = _discover(root)
    rel = [f.relative_to(root).as_posix() for f in files]
    split_spec = dict(split_spec or {})
    missing = sorted(set(split_spec) - set(rel))
    if missing:
        raise MissingSplitError(f"split_spec references files not on disk: {missing[:5]}")

    depths = {len(Path(r).parts) for r in rel}
    if depths == {1} or not rel:
        class_names = None
    elif depths == {2}:
        class_names = sorted({Path(r).parts[0] for r in rel})
    else:
        raise DataError("videos must sit either directly under root or in class subdirectories")

    entries = []
    for r in rel:
        label = class_names.index(Path(r).parts[0]) if class_names else None
        source_id = Path(r).with_suffix("").as_posix().replace("/", "__")
        entries.append(ManifestEntry(source_id, str(root / r), label, split_spec.get(r, default_split)))
    return DatasetManifest(entries, class_names)


@dataclass
class SyntheticConfig:
    num_videos: int = 8
    frames_per_video: int = 48
    height: int = 40
    width: int = 40
    pattern: str = "moving_square"
    velocity_range: tuple[int, int] = (1, 2)
    seed: int = 0
    test_fraction: float = 0.0
    object_size: int | None = None
    background_noise: float = 0.0  # static per-video texture amplitude in [0, 1]
    frame_noise: float = 0.0  # i.i.d. per-frame pixel noise std in [0, 1]
    tail_length: int = 0  # dim trail behind the square; gives motion an arrow of time

    def validate(self) -> None:
        if self.pattern not in ("moving_square", "moving_gradient"):
            raise ConfigError(f"unknown pattern {self.pattern!r}")
        lo, hi = self.velocity_range
        if not 1 <= lo <= hi:
            raise ConfigError(f"velocity_range must satisfy 1 <= lo <= hi, got {self.velocity_range}")
        if hi >= min(self.height, self.width):
            raise ConfigError("velocity exceeds the frame's spatial extent")
        if self.num_videos < 1 or self.frames_per_video < 1:
            raise ConfigError("num_videos and frames_per_video must be positive")
        if self.tail_length < 0:
            raise ConfigError("tail_length must be >= 0")
        if not 0.0 <= self.test_fraction < 1.0:
            raise ConfigError("test_fraction must be in [0, 1)")

    def min_frames_for(self, m: int, max_speed: int) -> int:
        return (m - 1) * abs(max_speed) + 1


@dataclass
class SyntheticVideo:
    volume: FrameVolume
    direction: str
    velocity: tuple[int, int]  # (dy, dx) pixels per frame
    positions: np.ndarray = field(repr=False)  # (L, 2) top-left (y, x) before wrapping


def _render(cfg: SyntheticConfig, rng: np.random.Generator, direction: str, speed: int) -> SyntheticVideo:
    H, W, L = cfg.height, cfg.width, cfg.frames_per_video
    dy, dx = (speed * d for d in _DIRECTION_VECTORS[direction])
    base = rng.uniform(0.0, 0.25, size=3)
    bg = np.broadcast_to(base, (H, W, 3)).copy()
    if cfg.background_noise > 0:
        bg += cfg.background_noise * rng.uniform(-1, 1, size=(H, W, 1))
    color = rng.uniform(0.6, 1.0, size=3)
    start = rng.integers(0, [H, W])
    positions = start[None, :] + np.arange(L)[:, None] * np.array([dy, dx])[None, :]

    frames = np.empty((L, H, W, 3), np.float64)
    if cfg.pattern == "moving_square":
        size = cfg.object_size or max(2, min(H, W) // 4)
        ys, xs = np.arange(size), np.arange(size)
        uy, ux = _DIRECTION_VECTORS[direction]
        tail = np.arange(1, cfg.tail_length + 1)
        tail_color = base + 0.5 * (color - base)
        for t in range(L):
            f = bg.copy()
            if cfg.tail_length:
                # tail sits behind the square along the motion axis
                if ux:
                    trows = (positions[t, 0] + ys) % H
                    tcols = (positions[t, 1] + (size - 1 if ux < 0 else 0) - ux * tail) % W
                else:
                    trows = (positions[t, 0] + (size - 1 if uy < 0 else 0) - uy * tail) % H
                    tcols = (positions[t, 1] + xs) % W
                f[np.ix_(trows, tcols)] = tail_color
            rows = (positions[t, 0] + ys) % H
            cols = (positions[t, 1] + xs) % W
            f[np.ix_(rows, cols)] = color
            frames[t] = f
    else:
        period = max(4, min(H, W) // 2)
        yy, xx = np.mgrid[0:H, 0:W]
        phase = rng.uniform(0, 2 * np.pi)
        along = xx if dx else yy
        stripes = 0.5 + 0.5 * np.sin(2 * np.pi * along / period + phase)
        tex = bg + stripes[..., None] * (color - base)
        for t in range(L):
            frames[t] = np.roll(tex, shift=(positions[t, 0] - start[0], positions[t, 1] - start[1]), axis=(0, 1))
    if cfg.frame_noise > 0:
        frames += rng.normal(0.0, cfg.frame_noise, size=frames.shape)
    pixels = np.clip(np.rint(frames * 255.0), 0, 255).astype(np.uint8)
    return SyntheticVideo(FrameVolume(pixels), direction, (int(dy), int(dx)), positions)


def generate_synthetic(
    config: SyntheticConfig,
    out_dir: str | os.PathLike | None = None,
) -> tuple[DatasetManifest, dict[str, SyntheticVideo]]:
    """Render translating-pattern videos labelled by motion direction.

    Directions cycle through right/down/left/up so classes stay balanced;
    speeds are drawn uniformly from ``velocity_range``. When ``out_dir`` is
    given the dataset is written in the layout described in the module
    docstring.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    lo, hi = config.velocity_range
    n_test = int(round(config.num_videos * config.test_fraction))
    test_ids = set(rng.permutation(config.num_videos)[:n_test].tolist())

    entries, videos = [], {}
    for k in range(config.num_videos):
        direction = DIRECTIONS[k % len(DIRECTIONS)]
        speed = int(rng.integers(lo, hi + 1))
        vid = _render(config, rng, direction, speed)
        sid = f"synth_{k:05d}"
        vid.volume.source_id = sid
        videos[sid] = vid
        path = f"{direction}/{sid}.npy"
        split = "test" if k in test_ids else "train"
        entries.append(ManifestEntry(sid, path, DIRECTIONS.index(direction), split))
    manifest = DatasetManifest(entries, list(DIRECTIONS))

    if out_dir is not None:
        root = Path(out_dir)
        for sid, vid in videos.items():
            target = root / vid.direction / f"{sid}.npy"
            target.parent.mkdir(parents=True, exist_ok=True)
            np.save(target, vid.volume.frames)
        manifest.save(root / "manifest.jsonl")
        with open(root / "metadata.jsonl", "w") as fh:
            for sid, vid in videos.items():
                fh.write(json.dumps({"source_id": sid, "direction": vid.direction,
                                     "velocity": list(vid.velocity)}) + "\n")
        (root / "synthetic_config.json").write_text(json.dumps(asdict(config), indent=2))
        for e in manifest.entries:
            e.path = str(root / e.path)
    return manifest, videos


def load_volumes(manifest: DatasetManifest) -> dict[str, FrameVolume]:
    out = {}
    for e in manifest.entries:
        vol = ingest_video(e.path)
        vol.source_id = e.source_id
        out[e.source_id] = vol
    return out


def crop_offset(
    mode: str,
    rng: np.random.Generator | None = None,
    resize: Sequence[int] = DEFAULT_RESIZE,
    crop: int = DEFAULT_CROP,
) -> tuple[int, int]:
    rh, rw = resize
    if crop > rh or crop > rw:
        raise ConfigError(f"crop {crop} larger than resized frame {tuple(resize)}")
    if mode == "eval":
        return (rh - crop) // 2, (rw - crop) // 2
    if mode != "train":
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    if rng is None:
        raise ConfigError("train-mode augmentation needs an rng")
    return int(rng.integers(0, rh - crop + 1)), int(rng.integers(0, rw - crop + 1))


def spatial_augment(
    pixels: np.ndarray,
    mode: str,
    rng: np.random.Generator | None = None,
    resize: Sequence[int] = DEFAULT_RESIZE,
    crop: int = DEFAULT_CROP,
) -> np.ndarray:
    """Resize every frame to ``resize`` then take one ``crop``x``crop`` window.

    The same window is used for all frames of the clip: random in train mode,
    centered (floor) in eval mode.
    """
    pixels = np.asarray(pixels)
    if pixels.ndim == 3:
        pixels = pixels[None]
    rh, rw = resize
    oy, ox = crop_offset(mode, rng, resize, crop)
    if pixels.shape[1:3] != (rh, rw):
        pixels = np.stack([cv2.resize(f, (rw, rh), interpolation=cv2.INTER_LINEAR) for f in pixels])
    return np.ascontiguousarray(pixels[:, oy:oy + crop, ox:ox + crop])


def normalize_pixels(pixels: np.ndarray) -> np.ndarray:
    """uint8 ``(m, H, W, 3)`` -> float32 ``(3, m, H, W)`` standardized per channel."""
    x = pixels.astype(np.float32) / 255.0
    x = (x - np.asarray(PIXEL_MEAN, np.float32)) / np.asarray(PIXEL_STD, np.float32)
    return np.ascontiguousarray(x.transpose(3, 0, 1, 2))


def iter_labelled(manifest: DatasetManifest) -> Iterable[tuple[str, int]]:
    for e in manifest.entries:
        if e.label is None:
            raise DataError("manifest has no labels")
        yield e.source_id, e.label
