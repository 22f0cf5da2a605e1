"""Dataset indexing, image decoding, augmentation and batch streams."""

from __future__ import annotations

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import rng as rngmod
from .errors import DatasetError, ImageError

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")
TARGET_SIZE = (168, 168)


# ---------------------------------------------------------------------------
# Image decoding and resampling


def _bilinear_gather(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample ``img`` (H, W, C) at float pixel-centre coordinates.

    Coordinates are clamped to the image, which fills out-of-range samples
    with the nearest edge pixel.
    """
    h, w = img.shape[:2]
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[..., None]
    fx = (xs - x0)[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bottom = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bottom * fy


def resize_bilinear(img: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize with half-pixel centres and no antialiasing."""
    h, w = img.shape[:2]
    oh, ow = size
    if (h, w) == (oh, ow):
        return img.copy()
    ys = (np.arange(oh) + 0.5) * (h / oh) - 0.5
    xs = (np.arange(ow) + 0.5) * (w / ow) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return _bilinear_gather(img, yy, xx)


def decode_image(path: str | Path) -> np.ndarray:
    """Decode to an (H, W, 3) uint8 array; grayscale is replicated."""
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("L", "LA", "P", "1", "I", "I;16", "F"):
                gray = np.asarray(im.convert("L"))
                return np.repeat(gray[:, :, None], 3, axis=2)
            return np.asarray(im.convert("RGB"))
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise ImageError(path, exc) from exc


def load_image(path: str | Path, target: tuple[int, int] = TARGET_SIZE, dtype=np.float32) -> np.ndarray:
    """Decoded image resized to ``target`` with values in [0, 1]."""
    raw = decode_image(path).astype(np.float64) / 255.0
    return np.clip(resize_bilinear(raw, target), 0.0, 1.0).astype(dtype)


# ---------------------------------------------------------------------------
# Dataset index


@dataclass
class DatasetIndex:
    """Sorted (path, class id) pairs from a ``root/<class>/<image>`` layout."""

    root: Path
    class_names: list[str]
    samples: list[tuple[str, int]]
    skipped: list[str] = field(default_factory=list)
    target: tuple[int, int] = TARGET_SIZE
    cache_size: int = 1024

    def __post_init__(self):
        self._cache: OrderedDict[int, np.ndarray] = OrderedDict()

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def labels(self) -> np.ndarray:
        return np.array([c for _, c in self.samples], dtype=np.int64)

    @property
    def counts(self) -> dict[str, int]:
        counts = np.bincount(self.labels, minlength=len(self.class_names))
        return dict(zip(self.class_names, counts.tolist()))

    def load(self, i: int) -> np.ndarray:
        img = self._cache.get(i)
        if img is None:
            img = load_image(self.samples[i][0], self.target)
            img.setflags(write=False)
            if self.cache_size:
                self._cache[i] = img
                if len(self._cache) > self.cache_size:
                    self._cache.popitem(last=False)
        else:
            self._cache.move_to_end(i)
        return img

    def subsample(self, n: int, seed: int) -> "DatasetIndex":
        """Class-balanced random subset of about ``n`` samples, kept in path order."""
        labels = self.labels
        picked = []
        for c in range(len(self.class_names)):
            members = np.flatnonzero(labels == c)
            share = round(n * len(members) / len(labels))
            perm = rngmod.fisher_yates(len(members), rngmod.stream(rngmod.SHUFFLE, seed, c))
            picked.extend(members[perm[:share]].tolist())
        picked.sort()
        return DatasetIndex(self.root, list(self.class_names), [self.samples[i] for i in picked],
                            target=self.target, cache_size=self.cache_size)


def _decodable(path: Path) -> bool:
    try:
        with Image.open(path) as im:
            im.verify()
        return True
    except Exception:  # PIL raises a wide range of types on corrupt files
        return False


def scan_dataset(root: str | Path, check: bool = True) -> DatasetIndex:
    """Index ``root/<class_name>/*.{png,jpg,jpeg}``.

    Class ids follow sorted class-directory names. Files that fail to decode
    are left out and listed in ``skipped``.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    class_dirs = sorted((d for d in root.iterdir() if d.is_dir() and not d.name.startswith(".")),
                        key=lambda d: d.name)
    if len(class_dirs) < 2:
        raise DatasetError(f"{root} must contain at least two class directories, found {len(class_dirs)}")
    samples: list[tuple[str, int]] = []
    skipped: list[str] = []
    for cid, d in enumerate(class_dirs):
        files = sorted(str(p) for p in d.iterdir()
                       if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS)
        good = 0
        for f in files:
            if check and not _decodable(Path(f)):
                skipped.append(f)
                continue
            samples.append((f, cid))
            good += 1
        if good == 0:
            raise DatasetError(f"class directory {d} has no decodable images")
    samples.sort(key=lambda s: s[0])
    if skipped:
        log.warning("skipped %d undecodable files", len(skipped))
    return DatasetIndex(root, [d.name for d in class_dirs], samples, skipped)


def write_skip_report(index: DatasetIndex, path: str | Path) -> None:
    Path(path).write_text("".join(f"{p}\n" for p in index.skipped))


@dataclass
class ArraySource:
    """In-memory stand-in for a DatasetIndex (fixtures, synthetic data)."""

    images: np.ndarray
    labels: np.ndarray
    class_names: list[str]

    def __len__(self) -> int:
        return len(self.labels)

    def load(self, i: int) -> np.ndarray:
        return self.images[i]


# ---------------------------------------------------------------------------
# Augmentation


@dataclass(frozen=True)
class AugmentPolicy:
    flip_prob: float = 0.5
    rotation_degrees: float = 2.0
    brightness: tuple[float, float] = (0.8, 1.2)
    zoom: tuple[float, float] = (0.95, 1.05)
    shift_fraction: float = 0.01
    enabled: bool = True


@dataclass(frozen=True)
class AugmentParams:
    flip: bool
    angle: float
    zoom: float
    shift_x: float
    shift_y: float
    brightness: float

    @classmethod
    def identity(cls) -> "AugmentParams":
        return cls(False, 0.0, 1.0, 0.0, 0.0, 1.0)


def sample_params(policy: AugmentPolicy, gen: np.random.Generator) -> AugmentParams:
    u = gen.random(6)
    lo_b, hi_b = policy.brightness
    lo_z, hi_z = policy.zoom
    r, s = policy.rotation_degrees, policy.shift_fraction
    return AugmentParams(
        flip=bool(u[0] < policy.flip_prob),
        angle=float(-r + 2 * r * u[1]),
        zoom=float(lo_z + (hi_z - lo_z) * u[2]),
        shift_x=float(-s + 2 * s * u[3]),
        shift_y=float(-s + 2 * s * u[4]),
        brightness=float(lo_b + (hi_b - lo_b) * u[5]),
    )


def apply_params(image: np.ndarray, p: AugmentParams) -> np.ndarray:
    """Flip, then one combined rotate/zoom/shift warp, then brightness and clamp."""
    img = image[:, ::-1] if p.flip else image
    h, w = img.shape[:2]
    if p.angle != 0.0 or p.zoom != 1.0 or p.shift_x != 0.0 or p.shift_y != 0.0:
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        theta = math.radians(p.angle)
        cos, sin = math.cos(theta), math.sin(theta)
        yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
        # invert out = R * zoom * (in - c) + c + shift
        dy = yy - cy - p.shift_y * h
        dx = xx - cx - p.shift_x * w
        src_x = (cos * dx + sin * dy) / p.zoom + cx
        src_y = (-sin * dx + cos * dy) / p.zoom + cy
        img = _bilinear_gather(np.asarray(img, dtype=np.float64), src_y, src_x)
    out = np.asarray(img, dtype=np.float64) * p.brightness
    return np.clip(out, 0.0, 1.0).astype(image.dtype)


def augment(image: np.ndarray, policy: AugmentPolicy, key: Sequence[int]) -> np.ndarray:
    """Augmented copy of ``image``; randomness is keyed by ``key``."""
    if not policy.enabled:
        return image.copy()
    return apply_params(image, sample_params(policy, rngmod.stream(rngmod.AUGMENT, *key)))


# ---------------------------------------------------------------------------
# Batches


@dataclass
class Batch:
    images: np.ndarray
    labels: np.ndarray
    indices: np.ndarray


def one_hot(labels: np.ndarray, classes: int, dtype=np.float32) -> np.ndarray:
    out = np.zeros((len(labels), classes), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1
    return out


def epoch_order(subset: Sequence[int], seed: int, epoch: int) -> np.ndarray:
    subset = np.asarray(subset, dtype=np.int64)
    return subset[rngmod.fisher_yates(len(subset), rngmod.stream(rngmod.SHUFFLE, seed, epoch))]


def batches(
    source,
    subset: Sequence[int],
    batch_size: int = 32,
    epoch: int = 0,
    seed: int = 0,
    train: bool = False,
    policy: Optional[AugmentPolicy] = None,
    dtype=np.float32,
) -> Iterator[Batch]:
    """Stream of batches over ``subset``.

    Training streams are shuffled per (seed, epoch) and every sample is
    augmented with key (seed, epoch, sample index); evaluation streams keep
    the subset order and only normalise.
    """
    subset = np.asarray(subset, dtype=np.int64)
    if len(subset) == 0:
        raise DatasetError("cannot batch an empty subset")
    if batch_size < 1:
        raise DatasetError("batch size must be positive")
    policy = policy or AugmentPolicy()
    order = epoch_order(subset, seed, epoch) if train else subset
    labels = np.asarray(source.labels)
    classes = len(source.class_names)
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        imgs = []
        for i in idx.tolist():
            img = source.load(i)
            if train:
                img = augment(img, policy, (seed, epoch, i))
            imgs.append(img)
        yield Batch(np.stack(imgs).astype(dtype, copy=False), one_hot(labels[idx], classes, dtype), idx)
