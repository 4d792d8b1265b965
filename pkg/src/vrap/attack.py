"""The visually-realistic patch attack and its fixed-position PGD baseline.

Both run on one batched engine: a batch of independent attacks, one per
image, advanced in lock-step so each model call covers the whole batch.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidPlacementError, ShapeMismatchError
from .placement import patch_shape_for
from .search import axis_search_many
from .transforms import GAMMA_FLOOR, GammaParams, project_linf, tv_gradient, tv_loss
from .types import AttackConfig, ClassifierAdapter, Image, Patch, Placement, validate_placement


@dataclass(eq=False)
class AttackResult:
    """Outcome of one attack.

    ``loss_trace[t]`` is the classifier loss J at the start of iteration
    ``t``, measured at the placement used for that iteration's step.
    """

    patch: Patch
    final_placement: Placement
    loss_trace: list[float]
    gamma_trace: list[tuple[float, float]]
    position_trace: list[Placement]
    initial_placement: Placement
    clean_misclassified: bool = False
    label: int = -1
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "epsilon": self.patch.epsilon,
            "patch_shape": list(self.patch.shape),
            "initial_placement": list(self.initial_placement),
            "final_placement": list(self.final_placement),
            "position_trace": [list(p) for p in self.position_trace],
            "loss_trace": [float(v) for v in self.loss_trace],
            "gamma_trace": [[float(a), float(b)] for a, b in self.gamma_trace],
            "clean_misclassified": self.clean_misclassified,
        }

    def __eq__(self, other):
        if not isinstance(other, AttackResult):
            return NotImplemented
        return (
            self.patch == other.patch
            and self.final_placement == other.final_placement
            and self.initial_placement == other.initial_placement
            and self.loss_trace == other.loss_trace
            and self.gamma_trace == other.gamma_trace
            and self.position_trace == other.position_trace
        )

    __hash__ = None


def initial_placement(image_shape, patch_shape, seed: int) -> Placement:
    """Uniformly random valid placement drawn from ``seed``."""
    H, W = image_shape[:2]
    h, w = patch_shape[:2]
    rng = np.random.default_rng(seed)
    i = int(rng.integers(0, H - h + 1))
    j = int(rng.integers(0, W - w + 1))
    return Placement(i, j)


def _composite(deltas, lam, gam, use_gamma: bool):
    """Gamma-transformed patches plus the partials the engine needs."""
    if not use_gamma:
        ones = np.ones_like(deltas)
        return deltas, ones, None, None
    lam = lam[:, None, None, None]
    gam = gam[:, None, None, None]
    base = np.clip(deltas, GAMMA_FLOOR, 1.0)
    powered = base**gam
    raw = lam * powered
    live = raw <= 1.0
    values = np.clip(raw, 0.0, 1.0)
    d_delta = np.where(live, lam * gam * base ** (gam - 1.0), 0.0)
    d_lam = np.where(live, powered, 0.0)
    d_gam = np.where(live, raw * np.log(base), 0.0)
    return values, d_delta, d_lam, d_gam


def _window_grads(pixels, labels, values, placements, model):
    h, w = values.shape[1:3]
    batch = pixels.copy()
    for b, (i, j) in enumerate(placements):
        batch[b, i : i + h, j : j + w] = values[b]
    losses, grad = model.loss_and_gradient(batch, labels)
    window = np.empty_like(values)
    for b, (i, j) in enumerate(placements):
        window[b] = grad[b, i : i + h, j : j + w]
    return np.asarray(losses, dtype=np.float64), window


def patch_objective_gradients(
    image: Image,
    delta,
    placement: Placement,
    model: ClassifierAdapter,
    params: GammaParams | None = GammaParams(),
    tv_weight: float = 0.0,
):
    """Value and gradients of ``J(x +_{i,j} G(delta, lam, gamma)) + tv_weight * TV(delta)``.

    Returns ``(value, grad_delta, grad_lam, grad_gamma)``. With ``params=None``
    the gamma transform is skipped and the lam/gamma gradients are ``None``.
    """
    delta = np.asarray(delta, dtype=np.float64)
    if not validate_placement(image.shape, delta.shape, placement):
        raise InvalidPlacementError(f"patch {delta.shape[:2]} does not fit at {tuple(placement)}")
    use_gamma = params is not None
    lam = np.array([params.lam if use_gamma else 1.0])
    gam = np.array([params.gamma if use_gamma else 1.0])
    values, d_delta, d_lam, d_gam = _composite(delta[None], lam, gam, use_gamma)
    losses, window = _window_grads(image.pixels[None], np.array([image.label]), values, [placement], model)
    g_delta = window[0] * d_delta[0] + tv_weight * tv_gradient(delta)
    value = float(losses[0]) + tv_weight * tv_loss(delta)
    if not use_gamma:
        return value, g_delta, None, None
    return value, g_delta, float(np.sum(window[0] * d_lam[0])), float(np.sum(window[0] * d_gam[0]))


StepCallback = Callable[[int, np.ndarray, np.ndarray], None]


def run_attacks(
    pixels: np.ndarray,
    labels,
    references: np.ndarray,
    starts: Sequence[Placement],
    config: AttackConfig,
    model: ClassifierAdapter,
    *,
    search: bool = True,
    use_gamma: bool = True,
    tv_weight: float | None = None,
    callback: StepCallback | None = None,
):
    """Batched engine behind :func:`vrap_attack` and :func:`fixed_position_attack`.

    ``pixels`` is ``(B, H, W, C)`` and ``references`` ``(B, h, w, C)``.
    ``callback(t, deltas, references)`` sees the iterates after every step.
    Returns per-image dicts of raw results.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    references = np.asarray(references, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    B = pixels.shape[0]
    if references.shape[0] != B or references.shape[3] != pixels.shape[3]:
        raise ShapeMismatchError(f"references {references.shape} do not match images {pixels.shape}")
    placements = [Placement(int(p[0]), int(p[1])) for p in starts]
    for p in placements:
        if not validate_placement(pixels.shape[1:], references.shape[1:], p):
            raise InvalidPlacementError(f"start placement {tuple(p)} does not fit")

    eps = float(config.epsilon)
    alpha = config.step_size
    beta = config.gamma_step
    lo, hi = config.gamma_bounds
    tv_w = config.tv_weight if tv_weight is None else tv_weight
    do_search = search and config.search_range >= config.search_stride

    deltas = references.copy()
    lam = np.ones(B)
    gam = np.ones(B)
    loss_trace = np.zeros((config.iterations, B))
    gamma_trace = np.zeros((config.iterations, B, 2))
    position_trace: list[list[Placement]] = []

    for t in range(config.iterations):
        values, d_delta, _, _ = _composite(deltas, lam, gam, use_gamma)
        if do_search:
            found = axis_search_many(
                pixels, labels, values, placements, config.search_range, config.search_stride, model
            )
            placements = [p for p, _ in found]
        position_trace.append(list(placements))

        losses, window = _window_grads(pixels, labels, values, placements, model)
        loss_trace[t] = losses
        grad = window * d_delta
        if tv_w:
            grad = grad + tv_w * np.stack([tv_gradient(d) for d in deltas])
        deltas = project_linf(deltas + alpha * np.sign(grad), references, eps)

        if use_gamma:
            values, _, d_lam, d_gam = _composite(deltas, lam, gam, True)
            _, window = _window_grads(pixels, labels, values, placements, model)
            g_lam = np.sum(window * d_lam, axis=(1, 2, 3))
            g_gam = np.sum(window * d_gam, axis=(1, 2, 3))
            lam = np.clip(lam - beta * g_lam, lo, hi)
            gam = np.clip(gam - beta * g_gam, lo, hi)
        gamma_trace[t, :, 0] = lam
        gamma_trace[t, :, 1] = gam

        if callback is not None:
            callback(t, deltas, references)

    return [
        {
            "delta": deltas[b],
            "final_placement": placements[b],
            "loss_trace": loss_trace[:, b].tolist(),
            "gamma_trace": [tuple(x) for x in gamma_trace[:, b].tolist()],
            "position_trace": [step[b] for step in position_trace],
        }
        for b in range(B)
    ]


def _result(raw: dict, reference, eps: float, start: Placement, image: Image, misclassified: bool) -> AttackResult:
    return AttackResult(
        patch=Patch(raw["delta"], reference, eps),
        final_placement=raw["final_placement"],
        loss_trace=raw["loss_trace"],
        gamma_trace=raw["gamma_trace"],
        position_trace=raw["position_trace"],
        initial_placement=start,
        clean_misclassified=misclassified,
        label=image.label,
    )


def _clean_misclassified(images: Sequence[Image], model: ClassifierAdapter) -> np.ndarray:
    preds = model.predict(np.stack([im.pixels for im in images]))
    wrong = preds != np.array([im.label for im in images])
    if wrong.any():
        warnings.warn(f"{int(wrong.sum())} image(s) already misclassified before the attack", stacklevel=3)
    return wrong


def vrap_attack_batch(
    images: Sequence[Image],
    references: Sequence[np.ndarray],
    config: AttackConfig,
    model: ClassifierAdapter,
    seeds: Sequence[int] | None = None,
    callback: StepCallback | None = None,
) -> list[AttackResult]:
    """Run :func:`vrap_attack` on many images at once.

    Image ``n`` draws its start placement from ``seeds[n]`` (default
    ``config.seed + n``). Batching can change the recorded losses in their
    last bits relative to single runs, since BLAS reduces batched products
    in a different order.
    """
    images = list(images)
    if not images:
        return []
    if seeds is None:
        seeds = [config.seed + n for n in range(len(images))]
    refs = [np.asarray(r, dtype=np.float64) for r in references]
    for im, ref in zip(images, refs):
        h, w = patch_shape_for(im, config.patch_size)
        if ref.shape != (h, w, im.channels):
            raise ShapeMismatchError(f"reference shape {ref.shape} != expected {(h, w, im.channels)}")
    starts = [initial_placement(im.shape, ref.shape, s) for im, ref, s in zip(images, refs, seeds)]
    wrong = _clean_misclassified(images, model)
    raw = run_attacks(
        np.stack([im.pixels for im in images]),
        [im.label for im in images],
        np.stack(refs),
        starts,
        config,
        model,
        search=True,
        use_gamma=config.optimize_gamma,
        callback=callback,
    )
    return [
        _result(r, ref, config.epsilon, s, im, bool(bad))
        for r, ref, s, im, bad in zip(raw, refs, starts, images, wrong)
    ]


def vrap_attack(
    image: Image,
    reference,
    config: AttackConfig,
    model: ClassifierAdapter,
    callback: StepCallback | None = None,
) -> AttackResult:
    """Optimize a patch in the epsilon-ball of ``reference`` at the poorest nearby position.

    Each iteration: move the patch to the minimum-loss placement found by axis
    search, take a projected sign-ascent step on delta (loss plus weighted
    total variation, through the gamma transform), then a plain descent step
    on (lam, gamma), clamped to ``config.gamma_bounds``.
    """
    return vrap_attack_batch([image], [reference], config, model, seeds=[config.seed], callback=callback)[0]


def fixed_position_attack_batch(
    images: Sequence[Image],
    references: Sequence[np.ndarray],
    placements: Sequence[Placement],
    config: AttackConfig,
    model: ClassifierAdapter,
    callback: StepCallback | None = None,
) -> list[AttackResult]:
    images = list(images)
    if not images:
        return []
    refs = [np.asarray(r, dtype=np.float64) for r in references]
    shapes = {r.shape for r in refs}
    if len(shapes) != 1:
        raise ShapeMismatchError(f"references must share one shape, got {sorted(shapes)}")
    wrong = _clean_misclassified(images, model)
    starts = [Placement(int(p[0]), int(p[1])) for p in placements]
    raw = run_attacks(
        np.stack([im.pixels for im in images]),
        [im.label for im in images],
        np.stack(refs),
        starts,
        config,
        model,
        search=False,
        use_gamma=False,
        tv_weight=0.0,
        callback=callback,
    )
    return [
        _result(r, ref, config.epsilon, s, im, bool(bad))
        for r, ref, s, im, bad in zip(raw, refs, starts, images, wrong)
    ]


def fixed_position_attack(
    image: Image,
    reference,
    placement: Placement,
    config: AttackConfig,
    model: ClassifierAdapter,
    callback: StepCallback | None = None,
) -> AttackResult:
    """Plain L-inf PGD on the patch at a fixed placement, without position search.

    The gamma transform and the TV term are off as well.

    Uses the same step size ``epsilon / T`` and start ``delta_0 = reference``.
    """
    return fixed_position_attack_batch([image], [reference], [placement], config, model, callback)[0]
