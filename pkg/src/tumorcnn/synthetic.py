"""Procedural image classes for fixtures and smoke runs.

Each class is a distinct texture family (horizontal bars, vertical bars, a
bright disc, a checkerboard) with randomised frequency, phase, position and
noise, rendered as a single-channel image.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from . import rng as rngmod

CLASS_NAMES = ["bars_h", "bars_v", "disc", "checker"]


def pattern(cls: int, gen: np.random.Generator, size: int = 168) -> np.ndarray:
    """Grayscale (size, size) image in [0, 1] drawn from class ``cls``."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    period = gen.uniform(0.08, 0.16)
    phase = gen.uniform(0, 1)
    if cls == 0:
        img = (np.sin(2 * np.pi * (yy / period + phase)) > 0).astype(float)
    elif cls == 1:
        img = (np.sin(2 * np.pi * (xx / period + phase)) > 0).astype(float)
    elif cls == 2:
        cy, cx = gen.uniform(0.3, 0.7, size=2)
        r = gen.uniform(0.15, 0.3)
        img = (((yy - cy) ** 2 + (xx - cx) ** 2) < r * r).astype(float)
    elif cls == 3:
        a = np.sin(2 * np.pi * (yy / period + phase)) > 0
        b = np.sin(2 * np.pi * (xx / period + phase)) > 0
        img = (a ^ b).astype(float)
    else:
        raise ValueError(f"unknown synthetic class {cls}")
    img = 0.15 + 0.7 * img + gen.normal(0, 0.05, img.shape)
    return np.clip(img, 0.0, 1.0)


def make_arrays(per_class: int, seed: int = 0, classes: int = 4, size: int = 168) -> tuple[np.ndarray, np.ndarray]:
    """(images (N, size, size, 3) float32, labels (N,)) ordered class by class."""
    images, labels = [], []
    for c in range(classes):
        for i in range(per_class):
            g = pattern(c, rngmod.stream(99, seed, c, i), size)
            images.append(np.repeat(g[:, :, None], 3, axis=2))
            labels.append(c)
    return np.stack(images).astype(np.float32), np.array(labels, dtype=np.int64)


def write_dataset(root: str | Path, per_class: int, seed: int = 0, classes: int = 4, size: int = 168) -> Path:
    """Write ``root/<class>/<nnnn>.png`` grayscale files."""
    root = Path(root)
    for c in range(classes):
        d = root / CLASS_NAMES[c]
        d.mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            g = pattern(c, rngmod.stream(99, seed, c, i), size)
            Image.fromarray(np.round(g * 255).astype(np.uint8), mode="L").save(d / f"{i:04d}.png")
    return root
