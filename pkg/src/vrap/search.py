"""Local search for the poorest (minimum-loss) patch position.

Positions are searched along each axis separately with a stride, and the two
axis winners are combined. Candidates that fall off the image are clamped to
the border and deduplicated.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InvalidPlacementError
from .types import ClassifierAdapter, Image, Placement, validate_placement


@dataclass(frozen=True)
class SearchWindow:
    center: Placement
    k: int
    tau: int

    def __post_init__(self):
        if self.k < 0 or self.tau < 1:
            raise DomainError(f"search window needs k >= 0 and tau >= 1, got k={self.k}, tau={self.tau}")
        object.__setattr__(self, "center", Placement(int(self.center[0]), int(self.center[1])))

    def offsets(self) -> list[int]:
        m = self.k // self.tau
        return [n * self.tau for n in range(-m, m + 1)]


def _axis_values(center: int, offsets, upper: int) -> list[int]:
    return sorted({min(max(center + d, 0), upper) for d in offsets})


def _pick(losses: dict, center: Placement) -> Placement:
    """Minimum-loss placement; ties go to ``center``, then to the smallest (i, j)."""
    best = min(losses.values())
    tied = [p for p, v in losses.items() if v == best]
    return center if center in tied else min(tied)


def _evaluate(pixels, labels, values, requests, model) -> list[float]:
    """Loss of each ``(image index, placement)`` request, in one model call."""
    if not requests:
        return []
    h, w = values.shape[1:3]
    batch = np.empty((len(requests),) + pixels.shape[1:], dtype=np.float64)
    for n, (b, (i, j)) in enumerate(requests):
        batch[n] = pixels[b]
        batch[n, i : i + h, j : j + w] = values[b]
    return [float(v) for v in model.loss(batch, labels[[b for b, _ in requests]], reduction="none")]


def axis_search_many(pixels, labels, values, centers, k: int, tau: int, model: ClassifierAdapter):
    """Axis-decomposed search for a batch of independent (image, patch) pairs.

    Returns a list of ``(placement, loss)``. Each image's result is the
    minimum-loss member of ``{(i, j), (i*, j), (i, j*), (i*, j*)}``.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    H, W = pixels.shape[1:3]
    h, w = values.shape[1:3]
    offsets = SearchWindow(Placement(0, 0), k, tau).offsets()
    centers = [Placement(int(c[0]), int(c[1])) for c in centers]
    for c in centers:
        if not validate_placement((H, W), (h, w), c):
            raise InvalidPlacementError(f"search center {tuple(c)} is not a valid placement")

    seen: list[dict] = [dict() for _ in centers]
    requests = []
    for b, (i, j) in enumerate(centers):
        cand = {Placement(ii, j) for ii in _axis_values(i, offsets, H - h)}
        cand |= {Placement(i, jj) for jj in _axis_values(j, offsets, W - w)}
        requests.extend((b, p) for p in sorted(cand))
    for (b, p), v in zip(requests, _evaluate(pixels, labels, values, requests, model)):
        seen[b][p] = v

    winners = []
    for b, c in enumerate(centers):
        best_i = _pick({p: v for p, v in seen[b].items() if p.j == c.j}, c).i
        best_j = _pick({p: v for p, v in seen[b].items() if p.i == c.i}, c).j
        winners.append((best_i, best_j))
    extra = [(b, Placement(*ij)) for b, ij in enumerate(winners) if Placement(*ij) not in seen[b]]
    for (b, p), v in zip(extra, _evaluate(pixels, labels, values, extra, model)):
        seen[b][p] = v

    results = []
    for b, c in enumerate(centers):
        best_i, best_j = winners[b]
        final = {p: seen[b][p] for p in (c, Placement(best_i, c.j), Placement(c.i, best_j), Placement(best_i, best_j))}
        p = _pick(final, c)
        results.append((p, final[p]))
    return results


def brute_force_many(pixels, labels, values, centers, k: int, tau: int, model: ClassifierAdapter):
    """Exact argmin over the full strided grid around each center."""
    pixels = np.asarray(pixels, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    H, W = pixels.shape[1:3]
    h, w = values.shape[1:3]
    centers = [Placement(int(c[0]), int(c[1])) for c in centers]
    offsets = SearchWindow(Placement(0, 0), k, tau).offsets()
    requests = []
    for b, c in enumerate(centers):
        if not validate_placement((H, W), (h, w), c):
            raise InvalidPlacementError(f"search center {tuple(c)} is not a valid placement")
        grid = {
            Placement(ii, jj)
            for ii in _axis_values(c.i, offsets, H - h)
            for jj in _axis_values(c.j, offsets, W - w)
        }
        requests.extend((b, p) for p in sorted(grid))
    seen: list[dict] = [dict() for _ in centers]
    for (b, p), v in zip(requests, _evaluate(pixels, labels, values, requests, model)):
        seen[b][p] = v
    results = []
    for b, c in enumerate(centers):
        p = _pick(seen[b], c)
        results.append((p, seen[b][p]))
    return results


def _single(search, image: Image, patch_values, window: SearchWindow, model) -> Placement:
    values = np.asarray(patch_values, dtype=np.float64)
    (p, _), = search(image.pixels[None], np.array([image.label]), values[None], [window.center], window.k, window.tau, model)
    return p


def axis_search(image: Image, patch_values, window: SearchWindow, model: ClassifierAdapter) -> Placement:
    """Approximate poorest placement near ``window.center`` (two axis sweeps, combined).

    Never returns a placement with higher loss than the center.
    """
    return _single(axis_search_many, image, patch_values, window, model)


def brute_force_search(image: Image, patch_values, window: SearchWindow, model: ClassifierAdapter) -> Placement:
    """Exact poorest placement over the full strided grid; same tie-breaking as :func:`axis_search`."""
    return _single(brute_force_many, image, patch_values, window, model)
