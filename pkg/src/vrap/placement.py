"""Pasting patches into images and cutting reference patches out of them."""
from __future__ import annotations

import math

import numpy as np

from .errors import DomainError, InvalidPlacementError, ShapeMismatchError
from .types import Image, Placement, validate_placement


def _check(image_shape, patch_shape, placement) -> None:
    if len(patch_shape) == 3 and len(image_shape) == 3 and patch_shape[2] != image_shape[2]:
        raise ShapeMismatchError(f"patch has {patch_shape[2]} channels, image {image_shape[2]}")
    if not validate_placement(image_shape, patch_shape, placement):
        raise InvalidPlacementError(
            f"patch {tuple(patch_shape[:2])} at {tuple(placement)} overflows image {tuple(image_shape[:2])}"
        )


def paste_pixels(pixels: np.ndarray, values: np.ndarray, placement) -> np.ndarray:
    """Array form of :func:`paste`; returns a new ``(H, W, C)`` array."""
    _check(pixels.shape, values.shape, placement)
    i, j = placement
    h, w = values.shape[:2]
    out = np.array(pixels, dtype=np.float64, copy=True)
    out[i : i + h, j : j + w] = values
    return out


def paste(image: Image, patch_values, placement: Placement) -> Image:
    """Return ``image`` with ``patch_values`` written over the window at ``placement``."""
    values = np.asarray(patch_values, dtype=np.float64)
    return Image(paste_pixels(image.pixels, values, placement), image.label)


def extract_pixels(pixels: np.ndarray, placement, h: int, w: int) -> np.ndarray:
    _check(pixels.shape, (h, w), placement)
    i, j = placement
    return np.array(pixels[i : i + h, j : j + w], dtype=np.float64, copy=True)


def extract(image: Image, placement: Placement, h: int, w: int) -> np.ndarray:
    """Copy of the ``(h, w, C)`` window of ``image`` at ``placement``."""
    return extract_pixels(image.pixels, placement, h, w)


def paste_many(pixels: np.ndarray, values: np.ndarray, placements) -> np.ndarray:
    """Stack of copies of one image, each with ``values`` pasted at one placement.

    ``values`` is either one ``(h, w, C)`` patch or one patch per placement.
    """
    placements = list(placements)
    values = np.asarray(values, dtype=np.float64)
    per_item = values.ndim == 4
    h, w = values.shape[-3:-1]
    out = np.repeat(np.asarray(pixels, dtype=np.float64)[None], len(placements), axis=0)
    for n, loc in enumerate(placements):
        _check(pixels.shape, values.shape[-3:], loc)
        i, j = loc
        out[n, i : i + h, j : j + w] = values[n] if per_item else values
    return out


def patch_shape_for(image: Image | tuple, patch_size: float) -> tuple[int, int]:
    """Patch side lengths for a relative size (ratio of side lengths, not areas)."""
    if not 0 < patch_size <= 1:
        raise DomainError(f"patch_size must lie in (0, 1], got {patch_size}")
    H, W = (image.shape if isinstance(image, Image) else tuple(image))[:2]
    return _round_half_up(patch_size * H), _round_half_up(patch_size * W)


def _round_half_up(x: float) -> int:
    # x > 0 here, so half-up equals half-away-from-zero
    return max(1, int(math.floor(x + 0.5)))
