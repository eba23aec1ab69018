"""PNG dataset layout, loading with a seeded split, and a synthetic ellipse generator.

Layout::

    <dir>/images/<stem>.png   8-bit gray or RGB
    <dir>/masks/<stem>.png    8-bit, foreground >= 128
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "DataError",
    "SegmentationSample",
    "load_sample",
    "load_dataset",
    "split_samples",
    "generate_synthetic",
    "write_png",
    "read_png",
    "stack_batch",
]

MASK_THRESHOLD = 128


class DataError(Exception):
    """Dataset directory is missing, empty, or inconsistent."""


@dataclass
class SegmentationSample:
    image: np.ndarray  # 1×3×S×S float in [0, 1]
    mask: np.ndarray  # 1×1×S×S in {0, 1}
    source_id: str

    def __post_init__(self):
        if self.image.shape[2:] != self.mask.shape[2:]:
            raise DataError(f"{self.source_id}: image {self.image.shape} and mask {self.mask.shape} differ in size")


def write_png(path, array: np.ndarray) -> None:
    """Write uint8 gray (H×W) or RGB (H×W×3) atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".png.tmp")
    os.close(fd)
    try:
        Image.fromarray(np.asarray(array, dtype=np.uint8)).save(tmp, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im)


def _load_image(path: Path, size: int) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("RGB")
        if im.size != (size, size):
            im = im.resize((size, size), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1)[None]


def _load_mask(path: Path, size: int) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("L")
        if im.size != (size, size):
            im = im.resize((size, size), Image.NEAREST)
        arr = np.asarray(im)
    return (arr >= MASK_THRESHOLD).astype(np.float32)[None, None]


def load_sample(image_path, mask_path, size: int, source_id: str = "") -> SegmentationSample:
    return SegmentationSample(_load_image(Path(image_path), size), _load_mask(Path(mask_path), size), source_id)


def _stems(folder: Path) -> dict[str, Path]:
    return {p.stem: p for p in sorted(folder.glob("*.png"))}


def load_dataset(root, image_size: int = 256, seed: int = 0, val_fraction: float = 0.2):
    """Load every image/mask pair under ``root`` and split it.

    Returns ``(train, val)`` lists of :class:`SegmentationSample`; samples are
    read in lexicographic stem order and shuffled with ``seed`` before the
    split, so membership is reproducible.
    """
    samples = load_samples(root, image_size)
    return split_samples(samples, seed, val_fraction)


def load_samples(root, image_size: int = 256) -> list[SegmentationSample]:
    root = Path(root)
    img_dir, mask_dir = root / "images", root / "masks"
    if not img_dir.is_dir() or not mask_dir.is_dir():
        raise DataError(f"{root}: expected images/ and masks/ subdirectories")
    images, masks = _stems(img_dir), _stems(mask_dir)
    if not images:
        raise DataError(f"{root}: no PNG images found")
    missing = sorted(set(images) - set(masks))
    if missing:
        raise DataError(f"{root}: no mask for image stem(s): {', '.join(missing)}")
    return [load_sample(images[s], masks[s], image_size, s) for s in sorted(images)]


def split_samples(samples, seed: int = 0, val_fraction: float = 0.2):
    samples = list(samples)
    if not samples:
        raise DataError("cannot split an empty dataset")
    order = np.random.default_rng(seed).permutation(len(samples))
    n_val = int(round(len(samples) * val_fraction))
    if len(samples) > 1:
        n_val = min(max(n_val, 1), len(samples) - 1)
    else:
        n_val = 0
    val = [samples[i] for i in sorted(order[:n_val])]
    train = [samples[i] for i in sorted(order[n_val:])]
    return train, val


def stack_batch(samples) -> tuple[np.ndarray, np.ndarray]:
    return (
        np.concatenate([s.image for s in samples], axis=0),
        np.concatenate([s.mask for s in samples], axis=0),
    )


def _ellipse(rng: np.random.Generator, size: int) -> np.ndarray:
    a = rng.uniform(0.12, 0.4) * size
    b = rng.uniform(0.12, 0.4) * size
    r = max(a, b)
    cy = rng.uniform(r, size - r)
    cx = rng.uniform(r, size - r)
    angle = rng.uniform(0.0, np.pi)
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    dy, dx = yy - cy, xx - cx
    c, s = np.cos(angle), np.sin(angle)
    u = (dx * c + dy * s) / a
    v = (-dx * s + dy * c) / b
    return u * u + v * v <= 1.0


def synthetic_pair(rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
    """One noisy RGB image (uint8 H×W×3) and its ellipse mask (uint8 {0,255})."""
    mask = _ellipse(rng, size)
    background = rng.uniform(0.15, 0.45, size=3)
    foreground = np.clip(background + rng.choice([-1.0, 1.0]) * rng.uniform(0.25, 0.45, size=3), 0.0, 1.0)
    img = np.where(mask[..., None], foreground, background)
    img = img + rng.normal(0.0, 0.06, size=img.shape)
    img = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    return img, mask.astype(np.uint8) * 255


def generate_synthetic(root, n: int, size: int = 64, seed: int = 0) -> list[str]:
    """Write ``n`` image/mask pairs of filled ellipses on noisy backgrounds."""
    if size % 4:
        raise DataError(f"synthetic image size must be divisible by 4, got {size}")
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    stems = []
    for i in range(n):
        img, mask = synthetic_pair(rng, size)
        stem = f"synth_{i:04d}"
        write_png(root / "images" / f"{stem}.png", img)
        write_png(root / "masks" / f"{stem}.png", mask)
        stems.append(stem)
    return stems
