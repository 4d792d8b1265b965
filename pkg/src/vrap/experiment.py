"""Experiment plumbing shared by the CLI and the acceptance suite.

Covers reference patches, running a batch of attacks, scoring them,
patch bundles on disk and sweep grids.

Patch bundle layout::

    metadata.json       deterministic: config echo, seed, traces, placements
    run.json            timestamps and library versions
    patch_0000.png      round(255 * delta) for image 0
    reference_0000.png  round(255 * reference) for image 0
    ...
"""
from __future__ import annotations

import csv
import itertools
import json
import platform
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image as PILImage

from .attack import AttackResult, fixed_position_attack_batch, initial_placement, vrap_attack_batch
from .data import load_split, read_png, write_png
from .errors import BundleCorruptError, EmptyDatasetError, UnsupportedModelError, ZeroMassError
from .explain import attention_shift_score, grad_cam
from .metrics import EvalReport, asr_counts, evaluate
from .placement import extract_pixels, paste_pixels, patch_shape_for
from .types import AttackConfig, ClassifierAdapter, Image, Patch, Placement

BUNDLE_FORMAT = "vrap-bundle"
BUNDLE_VERSION = 1


def versions() -> dict:
    import torch

    from . import __version__

    return {"vrap": __version__, "numpy": np.__version__, "torch": torch.__version__, "python": platform.python_version()}


def load_dataset_images(locator: str, split: str, first: int, count: int) -> list[Image]:
    pixels, labels = load_split(locator, split, first + count)
    return [Image(p, int(y)) for p, y in zip(pixels[first:], labels[first:])]


def donor_references(locator: str, split: str, count: int, shape: tuple[int, int], seed: int) -> list[np.ndarray]:
    """Centre crops of ``shape`` from ``count`` donor images drawn with ``seed``.

    Donor choice does not depend on ``shape``, so sweeps over patch size
    crop the same donors.
    """
    pixels, _ = load_split(locator, split)
    if len(pixels) == 0:
        raise EmptyDatasetError(f"no donor images in split {split!r}")
    idx = np.random.default_rng(seed).integers(0, len(pixels), size=count)
    h, w = shape
    H, W = pixels.shape[1:3]
    at = ((H - h) // 2, (W - w) // 2)
    return [extract_pixels(pixels[k], at, h, w).copy() for k in idx]


def file_reference(path, shape: tuple[int, int], channels: int = 3) -> np.ndarray:
    """An external image resized (bilinear) to the patch shape."""
    h, w = shape
    with PILImage.open(path) as im:
        im = im.convert("RGB" if channels == 3 else "L").resize((w, h), PILImage.BILINEAR)
        arr = np.asarray(im, dtype=np.float64) / 255.0
    return arr.reshape(h, w, channels)


def references_for(source, locator: str, images: Sequence[Image], patch_size: float) -> list[np.ndarray]:
    """Reference patches per a config ``reference_patch_source`` section."""
    if not images:
        return []
    shape = patch_shape_for(images[0], patch_size)
    if source.source == "external-image-file":
        ref = file_reference(source.path, shape, images[0].channels)
        return [ref.copy() for _ in images]
    return donor_references(locator, source.donor_split, len(images), shape, source.seed)


def run_attacks_for(method: str, images, references, config: AttackConfig, model: ClassifierAdapter) -> list[AttackResult]:
    """VRAP, or the fixed-position baseline at the placement VRAP would start from."""
    images = list(images)
    if method == "vrap":
        return vrap_attack_batch(images, references, config, model)
    seeds = [config.seed + n for n in range(len(images))]
    starts = [initial_placement(im.shape, np.shape(r), s) for im, r, s in zip(images, references, seeds)]
    return fixed_position_attack_batch(images, references, starts, config, model)


def attention_shifts(images, patches, placements, model: ClassifierAdapter, limit: int, layer: str | None = None):
    """Attention shift for the first ``limit`` successful attacks.

    An attack succeeds when the patched image is misclassified and the same
    image with the reference patch is not. Each heatmap targets the class the
    model predicts for that input. Returns ``(scores, skipped)``, where skipped
    images had an all-zero heatmap.
    """
    scores, skipped = [], 0
    for image, patch, loc in zip(images, patches, placements):
        if len(scores) >= limit:
            break
        adv = paste_pixels(image.pixels, patch.delta, loc)
        clean = paste_pixels(image.pixels, patch.reference, loc)
        pred_adv, pred_clean = model.predict(np.stack([adv, clean]))
        if pred_adv == image.label or pred_clean != image.label:
            continue
        try:
            clean_map = grad_cam(Image(clean, image.label), int(pred_clean), model, layer)
            adv_map = grad_cam(Image(adv, image.label), int(pred_adv), model, layer)
            scores.append(attention_shift_score(clean_map, adv_map, loc, patch.h, patch.w))
        except ZeroMassError:
            skipped += 1
    return scores, skipped


def score(images, patches, placements, model: ClassifierAdapter, evaluation) -> EvalReport:
    """All metrics of a batch of patches, per a config ``evaluation`` section."""
    items = [(n, im, p, loc) for n, (im, p, loc) in enumerate(zip(images, patches, placements))]
    report = evaluate(items, model, evaluation.tau, evaluation.print_trials, evaluation.print_deviation,
                      evaluation.print_seed)
    if evaluation.attention and evaluation.attention_limit:
        try:
            scores, skipped = attention_shifts(images, patches, placements, model, evaluation.attention_limit,
                                               evaluation.layer)
        except UnsupportedModelError:
            scores, skipped = [], 0
        report.extras["attention_scores"] = scores
        report.extras["attention_skipped"] = skipped
        report.attention_shift = float(np.mean(scores)) if scores else None
    return report


# -- bundles ---------------------------------------------------------------


def write_bundle(out_dir, results: Sequence[AttackResult], image_indices: Sequence[int], meta: dict) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for n, r in enumerate(results):
        write_png(out / f"patch_{n:04d}.png", r.patch.delta)
        write_png(out / f"reference_{n:04d}.png", r.patch.reference)
    first = results[0].patch if results else None
    doc = {
        "format": BUNDLE_FORMAT,
        "format_version": BUNDLE_VERSION,
        **meta,
        "epsilon": first.epsilon if first else None,
        "patch_shape": list(first.shape) if first else None,
        "image_indices": [int(i) for i in image_indices],
        "results": [r.to_dict() for r in results],
    }
    (out / "metadata.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    (out / "run.json").write_text(json.dumps({"created": time.strftime("%Y-%m-%dT%H:%M:%S%z"), "versions": versions()},
                                             indent=1) + "\n")
    return out


@dataclass
class Bundle:
    root: Path
    metadata: dict
    patches: list
    placements: list

    @property
    def epsilon(self) -> float:
        return float(self.metadata["epsilon"])


def read_bundle(root) -> Bundle:
    """Load a bundle, with patches as stored (8-bit) and their budget widened by one level."""
    root = Path(root)
    try:
        meta = json.loads((root / "metadata.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise BundleCorruptError(f"{root}: unreadable metadata.json ({exc})") from None
    if meta.get("format") != BUNDLE_FORMAT:
        raise BundleCorruptError(f"{root}: not a {BUNDLE_FORMAT} directory")
    eps = min(1.0, float(meta["epsilon"]) + 1 / 255)
    patches, placements = [], []
    for n, res in enumerate(meta["results"]):
        try:
            delta = read_png(root / f"patch_{n:04d}.png")
            ref = read_png(root / f"reference_{n:04d}.png")
            patches.append(Patch(delta, ref, eps))
        except (OSError, ValueError) as exc:
            raise BundleCorruptError(f"{root}: patch {n}: {exc}") from None
        if list(delta.shape) != meta["patch_shape"]:
            raise BundleCorruptError(f"{root}: patch {n} has shape {delta.shape}, metadata says {meta['patch_shape']}")
        placements.append(Placement(*res["final_placement"]))
    return Bundle(root, meta, patches, placements)


def bundle_images(bundle: Bundle) -> list[Image]:
    meta = bundle.metadata
    indices = meta["image_indices"]
    if not indices:
        return []
    pixels, labels = load_split(meta["dataset_locator"], meta["split"], max(indices) + 1)
    return [Image(pixels[i], int(labels[i])) for i in indices]


def dump_placements(path, bundle: Bundle, images, model: ClassifierAdapter, tau: int) -> None:
    """Write one JSON line per (image, grid placement) with the predicted class."""
    from .metrics import pir_counts

    with open(path, "w") as f:
        for n, (im, p, loc) in enumerate(zip(images, bundle.patches, bundle.placements)):
            adv, clean = model.predict(
                np.stack([paste_pixels(im.pixels, p.delta, loc), paste_pixels(im.pixels, p.reference, loc)])
            )
            f.write(json.dumps({"image": n, "kind": "asr", "placement": list(loc), "label": im.label,
                                "adv_pred": int(adv), "reference_pred": int(clean)}) + "\n")
            c = pir_counts(im, p, tau, model, keep_predictions=True)
            for (i, j), pred in c.predictions:
                f.write(json.dumps({"image": n, "kind": "pir", "placement": [i, j], "label": im.label,
                                    "pred": pred, "denominator": c.denominator}) + "\n")


# -- sweeps ------------------------------------------------------------------

SWEEP_AXES = ("method", "epsilon", "patch_size", "search_stride", "search_range")
TABLE_COLUMNS = ("cell", *SWEEP_AXES, "n_images", "asr", "asr_float", "pir", "pir_normalized", "print_robustness",
                 "attention_shift")


def sweep_cells(cfg) -> list[dict]:
    """Cartesian product of the sweep axes, each cell a full set of axis values."""
    base = {"method": cfg.method, **{k: getattr(cfg.attack, k) for k in SWEEP_AXES[1:]}}
    axes = cfg.sweep.axes() if cfg.sweep else {}
    names = [a for a in SWEEP_AXES if a in axes]
    cells = []
    for values in itertools.product(*(axes[a] for a in names)):
        cells.append({**base, **dict(zip(names, values))})
    return cells


def write_table(out_dir, rows: list[dict]) -> None:
    out = Path(out_dir)
    rows = sorted(rows, key=lambda r: r["cell"])
    with open(out / "results.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=TABLE_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k) for k in TABLE_COLUMNS})
    (out / "results.json").write_text(json.dumps(rows, indent=1, sort_keys=True) + "\n")


def plot_sweep(out_dir, rows: list[dict]) -> list[Path]:
    """Line plots of ASR and PIR against each swept numeric axis; best effort."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return []
    written = []
    labels = {"epsilon": "epsilon (/255)", "search_stride": "tau (stride)", "search_range": "k (range)",
              "patch_size": "patch size"}
    for axis in ("epsilon", "search_stride", "search_range", "patch_size"):
        if len({r[axis] for r in rows}) < 2:
            continue
        others = [a for a in SWEEP_AXES if a != axis and len({r[a] for r in rows}) > 1]
        fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
        groups: dict = {}
        for r in rows:
            groups.setdefault(tuple(r[a] for a in others), []).append(r)
        for key, members in sorted(groups.items(), key=lambda kv: str(kv[0])):
            members = sorted(members, key=lambda r: r[axis])
            name = ", ".join(f"{a}={v}" for a, v in zip(others, key)) or None
            for ax, metric in zip(axes, ("asr", "pir")):
                ax.plot([r[axis] for r in members], [r[metric] for r in members], marker="o", label=name)
        for ax, metric in zip(axes, ("ASR", "PIR")):
            ax.set_xlabel(labels[axis])
            ax.set_ylabel(metric)
            ax.grid(alpha=0.3)
        if others:
            axes[1].legend(fontsize=7)
        fig.tight_layout()
        path = Path(out_dir) / f"plot_{axis}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        written.append(path)
    return written
