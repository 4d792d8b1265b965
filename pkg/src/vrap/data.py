"""Dataset ingestion and the bundled synthetic 10-class 32x32 dataset.

On-disk format: a directory of lossless PNG files plus ``manifest.json``::

    {"format": "vrap-dataset", "version": 1, "name": ..., "classes": [...],
     "image_shape": [H, W, C],
     "splits": {"train": [{"path": "train/3/00017.png", "label": 3}, ...],
                "test": [...]}}

Paths are relative to the manifest's directory.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import DatasetMissingError
from .types import Image

CACHE_ENV = "VRAP_CACHE_DIR"
BUNDLED_NAME = "shapes10"
BUNDLED_VERSION = 2
CLASSES = (
    "disk",
    "square",
    "triangle",
    "ring",
    "plus",
    "cross",
    "hstripes",
    "vstripes",
    "checker",
    "diamond",
)


def cache_dir() -> Path:
    """Default cache for generated datasets and trained weights (``$VRAP_CACHE_DIR``)."""
    root = os.environ.get(CACHE_ENV)
    return Path(root) if root else Path.home() / ".cache" / "vrap"


def _shape_mask(kind: int, u: np.ndarray, v: np.ndarray, rng) -> np.ndarray:
    # u, v: coordinates relative to the object centre, in units of its radius
    if kind == 0:
        return u**2 + v**2 <= 1.0
    if kind == 1:
        return (np.abs(u) <= 0.85) & (np.abs(v) <= 0.85)
    if kind == 2:
        return (v <= 0.8) & (v >= 1.7 * np.abs(u) - 0.9)
    if kind == 3:
        r = np.sqrt(u**2 + v**2)
        return (r <= 1.0) & (r >= 0.55)
    if kind == 4:
        return ((np.abs(u) <= 0.28) & (np.abs(v) <= 1.0)) | ((np.abs(v) <= 0.28) & (np.abs(u) <= 1.0))
    if kind == 5:
        a, b = (u + v) / np.sqrt(2), (u - v) / np.sqrt(2)
        return ((np.abs(a) <= 0.25) & (np.abs(b) <= 1.05)) | ((np.abs(b) <= 0.25) & (np.abs(a) <= 1.05))
    box = (np.abs(u) <= 1.0) & (np.abs(v) <= 1.0)
    period = rng.uniform(0.45, 0.65)
    if kind == 6:
        return box & (np.mod(v / period, 1.0) < 0.5)
    if kind == 7:
        return box & (np.mod(u / period, 1.0) < 0.5)
    if kind == 8:
        return box & ((np.floor(u / period) + np.floor(v / period)) % 2 == 0)
    return np.abs(u) + np.abs(v) <= 1.0


def _color(rng) -> np.ndarray:
    return rng.uniform(0.0, 1.0, size=3)


def _blob(kind: int, rng, xx, yy, radius, cy, cx, angle, size, supersample) -> np.ndarray:
    ca, sa = np.cos(angle), np.sin(angle)
    du, dv = (xx - cx) / radius, (yy - cy) / radius
    u, v = ca * du + sa * dv, -sa * du + ca * dv
    mask = _shape_mask(kind, u, v, rng).astype(np.float64)
    return mask.reshape(size, supersample, size, supersample).mean(axis=(1, 3))


def render_sample(label: int, rng, size: int = 32, supersample: int = 4, clutter: int = 2, noise: float = 0.05) -> np.ndarray:
    """One anti-aliased ``(size, size, 3)`` image of class ``label``.

    A shape of the class over a tinted gradient background with ``clutter``
    small distractor blobs and additive Gaussian noise.
    """
    fg = _color(rng)
    bg = _color(rng)
    while np.abs(fg - bg).sum() < 0.4:
        bg = _color(rng)
    n = size * supersample
    grid = (np.arange(n) + 0.5) / supersample
    yy, xx = np.meshgrid(grid, grid, indexing="ij")

    ramp = rng.uniform(-0.15, 0.15, size=(2, 3))
    ys, xs = np.meshgrid(np.linspace(-1, 1, size), np.linspace(-1, 1, size), indexing="ij")
    img = bg + ys[..., None] * ramp[0] + xs[..., None] * ramp[1]
    for _ in range(clutter):
        kind = int(rng.integers(0, len(CLASSES)))
        radius = rng.uniform(0.06, 0.1) * size
        cy, cx = rng.uniform(0.1, 0.9, size=2) * size
        m = _blob(kind, rng, xx, yy, radius, cy, cx, rng.uniform(0, 2 * np.pi), size, supersample)[..., None]
        img = m * _color(rng) + (1.0 - m) * img

    radius = rng.uniform(0.2, 0.3) * size
    cy, cx = rng.uniform(0.38, 0.62, size=2) * size
    m = _blob(label, rng, xx, yy, radius, cy, cx, rng.uniform(-0.25, 0.25), size, supersample)[..., None]
    img = m * fg + (1.0 - m) * img
    img = img + rng.normal(0.0, noise, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def write_png(path: Path, pixels: np.ndarray) -> None:
    """Write ``[0, 1]`` pixels as an 8-bit PNG (values ``round(255 * x)``)."""
    path = Path(path)
    if path.suffix.lower() != ".png":
        raise ValueError(f"refusing lossy or unknown image format {path.suffix!r}; use .png")
    arr = np.clip(np.rint(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(arr).save(path, format="PNG")


def read_png(path: Path) -> np.ndarray:
    """Read an image as float64 ``(H, W, C)`` in ``[0, 1]``."""
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB") if im.mode not in ("L", "RGB") else im, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[..., None]
    return arr / 255.0


def generate_dataset(root: Path, train_per_class: int = 500, test_per_class: int = 100, seed: int = 0) -> Path:
    """Render the synthetic shapes dataset into ``root`` and write its manifest."""
    root = Path(root)
    splits = {"train": train_per_class, "test": test_per_class}
    manifest = {
        "format": "vrap-dataset",
        "version": 1,
        "name": BUNDLED_NAME,
        "dataset_version": BUNDLED_VERSION,
        "classes": list(CLASSES),
        "image_shape": [32, 32, 3],
        "splits": {},
    }
    for offset, (split, per_class) in enumerate(splits.items()):
        rng = np.random.default_rng([seed, offset])
        entries = []
        for n in range(per_class):
            for label in range(len(CLASSES)):
                rel = f"{split}/{label}/{n:05d}.png"
                write_png(root / rel, render_sample(label, rng))
                entries.append({"path": rel, "label": label})
        manifest["splits"][split] = entries
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return root


def resolve_dataset(locator: str) -> Path:
    """Map a locator to a dataset directory.

    ``"bundled"`` names the synthetic dataset, generated into the cache on
    first use; anything else is a directory holding ``manifest.json``.
    """
    if locator in ("bundled", f"bundled:{BUNDLED_NAME}"):
        root = cache_dir() / "datasets" / f"{BUNDLED_NAME}-v{BUNDLED_VERSION}"
        if not (root / "manifest.json").exists():
            tmp = root.with_name(root.name + f".tmp{os.getpid()}")
            generate_dataset(tmp)
            try:
                tmp.rename(root)
            except OSError:
                if not (root / "manifest.json").exists():
                    raise
        return root
    root = Path(locator)
    if not (root / "manifest.json").is_file():
        raise DatasetMissingError(f"no manifest.json under {root}")
    return root


def load_split(locator: str, split: str = "test", limit: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Load one split as ``(pixels (N, H, W, C), labels (N,))``."""
    root = resolve_dataset(locator)
    manifest = json.loads((root / "manifest.json").read_text())
    try:
        entries = manifest["splits"][split]
    except KeyError:
        raise DatasetMissingError(f"dataset {root} has no split {split!r}") from None
    if limit is not None:
        entries = entries[:limit]
    if not entries:
        return np.zeros((0, *manifest["image_shape"])), np.zeros(0, dtype=np.int64)
    pixels = np.stack([read_png(root / e["path"]) for e in entries])
    labels = np.array([int(e["label"]) for e in entries], dtype=np.int64)
    return pixels, labels


def load_images(locator: str, split: str = "test", limit: int | None = None) -> list[Image]:
    pixels, labels = load_split(locator, split, limit)
    return [Image(p, int(y)) for p, y in zip(pixels, labels)]
