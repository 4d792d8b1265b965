"""Grad-CAM heatmaps and a scalar for how far attention moves onto a patch."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeMismatchError, ZeroMassError
from .types import ClassifierAdapter, Image, Placement, validate_placement


@dataclass(frozen=True, eq=False)
class Heatmap:
    values: np.ndarray
    source_layer: str = "features"

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ShapeMismatchError(f"heatmap must be 2-D, got {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __eq__(self, other):
        if not isinstance(other, Heatmap):
            return NotImplemented
        return self.source_layer == other.source_layer and np.array_equal(self.values, other.values)

    __hash__ = None


def bilinear_resize(grid: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resize a 2-D map with half-pixel-centred bilinear interpolation.

    Same-size resizing is the identity.
    """
    grid = np.asarray(grid, dtype=np.float64)
    gh, gw = grid.shape

    def coords(n_out, n_in):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = coords(height, gh)
    x0, x1, fx = coords(width, gw)
    top = grid[y0][:, x0] * (1 - fx) + grid[y0][:, x1] * fx
    bottom = grid[y1][:, x0] * (1 - fx) + grid[y1][:, x1] * fx
    return top * (1 - fy)[:, None] + bottom * fy[:, None]


def cam_from_maps(activations, gradients, height: int, width: int) -> np.ndarray:
    """Grad-CAM arithmetic on ``(K, h, w)`` activations and gradients.

    Channel weights are the spatial means of the gradients; the weighted sum
    is rectified, resized to ``(height, width)`` and min-max normalized.
    A map with no positive evidence comes back all zero. A constant positive
    map comes back all ones.
    """
    acts = np.asarray(activations, dtype=np.float64)
    grads = np.asarray(gradients, dtype=np.float64)
    if acts.shape != grads.shape or acts.ndim != 3:
        raise ShapeMismatchError(f"activations {acts.shape} and gradients {grads.shape} must match as (K, h, w)")
    weights = grads.mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(weights, acts, axes=1), 0.0)
    cam = bilinear_resize(cam, height, width)
    lo, hi = cam.min(), cam.max()
    if hi <= 0.0:
        return np.zeros_like(cam)
    if hi == lo:
        return np.ones_like(cam)
    return (cam - lo) / (hi - lo)


def grad_cam(image: Image, target_class: int, model: ClassifierAdapter, layer: str | None = None) -> Heatmap:
    """Grad-CAM heatmap of ``target_class`` on ``image``.

    Raises :class:`~vrap.errors.UnsupportedModelError` for adapters without
    activation maps.
    """
    acts, grads = model.activation_maps(image.pixels, int(target_class), layer)
    values = cam_from_maps(acts, grads, image.height, image.width)
    return Heatmap(values, layer or "features")


def window_mass_ratio(heatmap: Heatmap, placement: Placement, h: int, w: int) -> float:
    total = float(heatmap.values.sum())
    if total <= 0.0:
        raise ZeroMassError("heatmap has zero total mass")
    i, j = placement
    return float(heatmap.values[i : i + h, j : j + w].sum()) / total


def attention_shift_score(clean_map: Heatmap, adv_map: Heatmap, placement: Placement, h: int, w: int) -> float:
    """Share of ``adv_map`` inside the patch window minus the clean map's share.

    Positive when attention moved onto the patch.
    """
    if clean_map.shape != adv_map.shape:
        raise ShapeMismatchError(f"heatmap shapes differ: {clean_map.shape} vs {adv_map.shape}")
    if not validate_placement((*adv_map.shape, 1), (h, w, 1), placement):
        raise ShapeMismatchError(f"window {(h, w)} at {tuple(placement)} outside map {adv_map.shape}")
    return window_mass_ratio(adv_map, placement, h, w) - window_mass_ratio(clean_map, placement, h, w)


def _jet(values: np.ndarray) -> np.ndarray:
    from matplotlib import colormaps

    return colormaps["jet"](np.clip(values, 0.0, 1.0))[..., :3]


def overlay(image: Image, heatmap: Heatmap, placement: Placement | None = None, h: int = 0, w: int = 0,
            alpha: float = 0.5) -> np.ndarray:
    """Blend a colour-mapped heatmap over the image; outline the patch window in white."""
    base = image.pixels if image.channels == 3 else np.repeat(image.pixels[..., :1], 3, axis=2)
    out = (1 - alpha) * base + alpha * _jet(heatmap.values)
    if placement is not None and h and w:
        i, j = placement
        out[i, j : j + w] = 1.0
        out[i + h - 1, j : j + w] = 1.0
        out[i : i + h, j] = 1.0
        out[i : i + h, j + w - 1] = 1.0
    return np.clip(out, 0.0, 1.0)


def save_heatmap(path, heatmap: Heatmap) -> None:
    """Write the heatmap as a grayscale PNG."""
    from .data import write_png

    write_png(Path(path), heatmap.values[..., None])


def save_overlay(path, image: Image, heatmap: Heatmap, placement: Placement | None = None, h: int = 0, w: int = 0) -> None:
    from .data import write_png

    write_png(Path(path), overlay(image, heatmap, placement, h, w))
