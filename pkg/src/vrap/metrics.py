"""Rates of attack success and position irrelevance. Print robustness is scored here too."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateGridError, EmptyDatasetError, InvalidPlacementError
from .placement import paste_many
from .transforms import simulate_print
from .types import ClassifierAdapter, Image, Patch, Placement, validate_placement

# upper bound on images per predict call
CHUNK = 1024


@dataclass(frozen=True)
class Rate:
    numerator: int
    denominator: int

    @property
    def value(self) -> float:
        return self.numerator / self.denominator

    def as_dict(self) -> dict:
        return {"numerator": self.numerator, "denominator": self.denominator, "rate": self.value}


def _predict(model: ClassifierAdapter, batch: np.ndarray) -> np.ndarray:
    if len(batch) <= CHUNK:
        return np.asarray(model.predict(batch))
    return np.concatenate([model.predict(batch[s : s + CHUNK]) for s in range(0, len(batch), CHUNK)])


def asr_counts(dataset: Sequence[tuple[Image, Patch, Placement]], model: ClassifierAdapter) -> Rate:
    """Numerator and denominator behind :func:`attack_success_rate`."""
    dataset = list(dataset)
    if not dataset:
        raise EmptyDatasetError("attack success rate of an empty dataset")
    adv, clean = [], []
    for image, patch, loc in dataset:
        if not validate_placement(image, patch, loc):
            raise InvalidPlacementError(f"patch {patch.shape[:2]} does not fit at {tuple(loc)}")
        i, j = loc
        x = image.pixels.copy()
        x[i : i + patch.h, j : j + patch.w] = patch.delta
        adv.append(x)
        x = image.pixels.copy()
        x[i : i + patch.h, j : j + patch.w] = patch.reference
        clean.append(x)
    labels = np.array([im.label for im, _, _ in dataset])
    preds = _predict(model, np.stack(adv + clean))
    fooled = preds[: len(dataset)] != labels
    intact = preds[len(dataset) :] == labels
    return Rate(int(np.sum(fooled & intact)), len(dataset))


def attack_success_rate(dataset: Sequence[tuple[Image, Patch, Placement]], model: ClassifierAdapter) -> float:
    """Fraction of images fooled by the adversarial patch whose reference patch,
    pasted at the same placement, is still classified correctly."""
    return asr_counts(dataset, model).value


def pir_grid(image_shape, patch_shape, tau: int) -> list[Placement]:
    """Placements ``(tau*a, tau*b)`` with ``0 <= tau*a <= H-h`` and ``0 <= tau*b <= W-w``."""
    H, W = image_shape[:2]
    h, w = patch_shape[:2]
    return [Placement(i, j) for i in range(0, H - h + 1, tau) for j in range(0, W - w + 1, tau)]


def pir_denominator(image_shape, patch_shape, tau: int) -> int:
    """``floor((H-h)/tau) * floor((W-w)/tau)``."""
    H, W = image_shape[:2]
    h, w = patch_shape[:2]
    return ((H - h) // tau) * ((W - w) // tau)


@dataclass(frozen=True)
class PirCounts:
    misclassified: int
    scanned: int
    denominator: int
    predictions: tuple = field(default=(), compare=False, repr=False)

    @property
    def pir(self) -> float:
        return self.misclassified / self.denominator

    @property
    def normalized(self) -> float:
        return self.misclassified / self.scanned


def pir_counts(image: Image, patch: Patch, tau: int, model: ClassifierAdapter, keep_predictions: bool = False) -> PirCounts:
    if tau < 1:
        raise DegenerateGridError(f"tau must be >= 1, got {tau}")
    if not validate_placement(image, patch, Placement(0, 0)):
        raise InvalidPlacementError(f"patch {patch.shape[:2]} larger than image {image.shape[:2]}")
    denom = pir_denominator(image.shape, patch.shape, tau)
    if denom == 0:
        raise DegenerateGridError(
            f"PIR grid is empty: floor((H-h)/tau) * floor((W-w)/tau) = 0 for image {image.shape[:2]}, "
            f"patch {patch.shape[:2]}, tau {tau}"
        )
    grid = pir_grid(image.shape, patch.shape, tau)
    preds = _predict(model, paste_many(image.pixels, patch.delta, grid))
    wrong = preds != image.label
    kept = tuple((tuple(p), int(c)) for p, c in zip(grid, preds)) if keep_predictions else ()
    return PirCounts(int(wrong.sum()), len(grid), denom, kept)


def position_irrelevant_rate(image: Image, patch: Patch, tau: int, model: ClassifierAdapter) -> float:
    """Misclassifications over the strided placement grid, divided by
    ``floor((H-h)/tau) * floor((W-w)/tau)``.

    The grid includes both ends of each axis, so it holds more placements than
    the denominator counts and the rate can exceed 1.
    """
    return pir_counts(image, patch, tau, model).pir


def print_robustness_counts(
    image: Image, patch: Patch, placement: Placement, trials: int, deviation: float, seed: int, model: ClassifierAdapter
) -> Rate:
    variants = simulate_print(patch.delta, trials, deviation, seed)
    preds = _predict(model, paste_many(image.pixels, np.stack(variants), [placement] * trials))
    return Rate(int(np.sum(preds != image.label)), trials)


def print_robustness(
    image: Image, patch: Patch, placement: Placement, trials: int, deviation: float, seed: int, model: ClassifierAdapter
) -> float:
    """Fraction of simulated prints of the patch that still fool the model."""
    return print_robustness_counts(image, patch, placement, trials, deviation, seed, model).value


def quantize_patch(patch: Patch) -> Patch:
    """The patch as it survives an 8-bit lossless round-trip.

    Both delta and reference are quantized; rounding may move delta up to
    half a level past the budget, so the budget is widened by ``1/255``.
    """
    q = lambda a: np.rint(np.asarray(a) * 255.0) / 255.0
    return Patch(q(patch.delta), q(patch.reference), min(1.0, patch.epsilon + 1 / 255))


@dataclass
class EvalReport:
    """Aggregated metrics with the counts that produced them."""

    asr: float
    asr_counts: Rate
    pir_per_image: dict
    pir_counts: dict
    mean_pir: float
    mean_pir_normalized: float
    print_robustness: float | None = None
    print_counts: Rate | None = None
    asr_quantized: float | None = None
    asr_quantized_counts: Rate | None = None
    attention_shift: float | None = None
    extras: dict = field(default_factory=dict)

    def to_json_dict(self, config_echo: dict | None = None, versions: dict | None = None) -> dict:
        counts = {
            "asr": self.asr_counts.as_dict(),
            "pir": {
                str(k): {"misclassified": c.misclassified, "scanned": c.scanned, "denominator": c.denominator}
                for k, c in self.pir_counts.items()
            },
        }
        if self.print_counts is not None:
            counts["print_robustness"] = self.print_counts.as_dict()
        if self.asr_quantized_counts is not None:
            counts["asr_quantized"] = self.asr_quantized_counts.as_dict()
        return {
            "asr": self.asr,
            "asr_quantized": self.asr_quantized,
            "pir": self.mean_pir,
            "pir_normalized": self.mean_pir_normalized,
            "pir_per_image": {str(k): v for k, v in self.pir_per_image.items()},
            "print_robustness": self.print_robustness,
            "attention_shift": self.attention_shift,
            "counts": counts,
            "config_echo": config_echo or {},
            "versions": versions or {},
            **({"extras": self.extras} if self.extras else {}),
        }


def evaluate(
    items: Iterable[tuple[object, Image, Patch, Placement]],
    model: ClassifierAdapter,
    tau: int,
    print_trials: int = 0,
    print_deviation: float = 0.05,
    print_seed: int = 0,
) -> EvalReport:
    """Score ``(id, image, patch, placement)`` items by ASR and per-image PIR.

    The 8-bit ASR is always included. With ``print_trials`` > 0 the report
    also pools print robustness over all items."""
    items = list(items)
    if not items:
        raise EmptyDatasetError("nothing to evaluate")
    dataset = [(im, p, loc) for _, im, p, loc in items]
    asr = asr_counts(dataset, model)
    asr_q = asr_counts([(im, quantize_patch(p), loc) for im, p, loc in dataset], model)
    per, counts = {}, {}
    for key, im, p, _ in items:
        c = pir_counts(im, p, tau, model)
        per[key], counts[key] = c.pir, c
    report = EvalReport(
        asr=asr.value,
        asr_counts=asr,
        pir_per_image=per,
        pir_counts=counts,
        mean_pir=float(np.mean(list(per.values()))),
        mean_pir_normalized=float(np.mean([c.normalized for c in counts.values()])),
        asr_quantized=asr_q.value,
        asr_quantized_counts=asr_q,
    )
    if print_trials:
        hits = sum(
            print_robustness_counts(im, p, loc, print_trials, print_deviation, print_seed, model).numerator
            for _, im, p, loc in items
        )
        report.print_counts = Rate(hits, print_trials * len(items))
        report.print_robustness = report.print_counts.value
    return report
