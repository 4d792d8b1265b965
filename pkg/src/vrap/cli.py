"""Command line entry point: ``vrap {attack,sweep,evaluate,train,explain}``.

Exit codes: 0 success, 1 runtime failure, 2 invalid config or empty
dataset, 3 missing model weights. Diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path

import numpy as np

from . import experiment as ex
from .config import RunConfig, load_config, parse_config
from .errors import ConfigError, DatasetMissingError, EmptyDatasetError, MissingWeightsError, VrapError, ZeroMassError
from .metrics import asr_counts
from .models import load_adapter, train_small_classifier

log = logging.getLogger("vrap")


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _images(cfg: RunConfig):
    images = ex.load_dataset_images(cfg.dataset_locator, cfg.split, cfg.first_image, cfg.num_images)
    if not images:
        raise EmptyDatasetError(
            f"no images selected from {cfg.dataset_locator!r} split {cfg.split!r} "
            f"(first_image={cfg.first_image}, num_images={cfg.num_images})"
        )
    return images


def _attack_and_bundle(cfg: RunConfig, model, out: Path, overrides: dict | None = None, method: str | None = None):
    """Attack the configured images and persist the bundle. Returns (images, results)."""
    overrides = dict(overrides or {})
    if "epsilon" in overrides:
        # sweep values are in 8-bit levels like the config itself
        overrides["epsilon"] = float(overrides["epsilon"])
    attack_cfg = cfg.attack.to_attack_config(**overrides)
    method = method or cfg.method
    images = _images(cfg)
    refs = ex.references_for(cfg.reference_patch_source, cfg.dataset_locator, images, attack_cfg.patch_size)
    results = ex.run_attacks_for(method, images, refs, attack_cfg, model)
    meta = {
        "config": cfg.echo(),
        "overrides": overrides,
        "method": method,
        "seed": attack_cfg.seed,
        "dataset_locator": cfg.dataset_locator,
        "split": cfg.split,
    }
    indices = range(cfg.first_image, cfg.first_image + len(images))
    ex.write_bundle(out, results, indices, meta)
    return images, results


def _float_asr(images, results, model):
    return asr_counts([(im, r.patch, r.final_placement) for im, r in zip(images, results)], model)


def cmd_attack(cfg: RunConfig, args) -> int:
    model = load_adapter(cfg.model.to_spec())
    out = Path(cfg.output_dir)
    images, results = _attack_and_bundle(cfg, model, out)
    stored = ex.read_bundle(out)
    pre = _float_asr(images, results, model)
    post = asr_counts(list(zip(images, stored.patches, stored.placements)), model)
    levels = [int(np.max(np.abs(np.rint(p.delta * 255) - np.rint(p.reference * 255)))) for p in stored.patches]
    summary = {
        "asr": post.value,
        "asr_float": pre.value,
        "counts": {"asr": post.as_dict(), "asr_float": pre.as_dict()},
        "max_level_deviation": max(levels),
        "n_images": len(images),
    }
    _write_json(out / "summary.json", summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _report(cfg: RunConfig, bundle: ex.Bundle, images, model, out: Path, dump: bool) -> dict:
    report = ex.score(images, bundle.patches, bundle.placements, model, cfg.evaluation)
    meta = bundle.metadata
    report.extras["bundle"] = {
        "epsilon": meta["epsilon"],
        "patch_shape": meta["patch_shape"],
        "method": meta["method"],
        "seed": meta["seed"],
    }
    doc = report.to_json_dict(config_echo=cfg.echo(), versions=ex.versions())
    _write_json(out / "report.json", doc)
    if dump:
        ex.dump_placements(out / "placements.jsonl", bundle, images, model, cfg.evaluation.tau)
    return doc


def cmd_evaluate(cfg: RunConfig, args) -> int:
    if not args.bundle:
        raise ConfigError("evaluate needs --bundle DIR")
    model = load_adapter(cfg.model.to_spec())
    bundle = ex.read_bundle(args.bundle)
    images = ex.bundle_images(bundle)
    out = Path(args.output_dir) if args.output_dir else Path(args.bundle)
    doc = _report(cfg, bundle, images, model, out, args.dump_placements)
    if cfg.formats.heatmaps:
        _heatmaps(bundle, images, model, out / "heatmaps", cfg.evaluation.layer)
    print(json.dumps({k: doc[k] for k in ("asr", "pir", "pir_normalized", "print_robustness", "attention_shift")},
                     sort_keys=True))
    return 0


def _sweep_cell(cfg_doc: dict, index: int, cell: dict, out_dir: str, dump: bool) -> dict:
    cfg = parse_config(cfg_doc)
    model = load_adapter(cfg.model.to_spec())
    out = Path(out_dir) / "cells" / f"cell_{index:03d}"
    overrides = {k: v for k, v in cell.items() if k != "method"}
    images, results = _attack_and_bundle(cfg, model, out, overrides, cell["method"])
    bundle = ex.read_bundle(out)
    doc = _report(cfg, bundle, images, model, out, dump)
    return {
        "cell": index,
        **cell,
        "n_images": len(images),
        "asr": doc["asr"],
        "asr_float": _float_asr(images, results, model).value,
        "pir": doc["pir"],
        "pir_normalized": doc["pir_normalized"],
        "print_robustness": doc["print_robustness"],
        "attention_shift": doc["attention_shift"],
    }


def cmd_sweep(cfg: RunConfig, args) -> int:
    if cfg.sweep is None:
        raise ConfigError("sweep requires a `sweep:` section with at least one axis list")
    _images(cfg)
    load_adapter(cfg.model.to_spec())
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = ex.sweep_cells(cfg)
    doc = cfg.echo()
    rows = []
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_sweep_cell, doc, n, c, str(out), args.dump_placements) for n, c in enumerate(cells)]
            for fut in as_completed(futures):
                rows.append(fut.result())
                ex.write_table(out, rows)
    else:
        for n, c in enumerate(cells):
            rows.append(_sweep_cell(doc, n, c, str(out), args.dump_placements))
            ex.write_table(out, rows)
            print(f"cell {n + 1}/{len(cells)} done: {c}", file=sys.stderr)
    rows.sort(key=lambda r: r["cell"])
    ex.write_table(out, rows)
    if cfg.formats.plots:
        ex.plot_sweep(out, rows)
    print(json.dumps({"cells": len(rows), "table": str(out / "results.csv")}))
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    spec = cfg.model.to_spec()
    t = cfg.train
    _, report = train_small_classifier(spec, cfg.dataset_locator, epochs=t.epochs, batch_size=t.batch_size,
                                       lr=t.lr, gate=t.gate)
    doc = {"checksum": report.checksum, "clean_accuracy": report.clean_accuracy,
           "weights_path": report.weights_path, "epoch_losses": report.epoch_losses}
    _write_json(Path(cfg.output_dir) / "train_report.json", doc)
    print(json.dumps({k: doc[k] for k in ("checksum", "clean_accuracy", "weights_path")}, sort_keys=True))
    return 0


def _heatmaps(bundle: ex.Bundle, images, model, out: Path, layer=None) -> dict:
    from .explain import attention_shift_score, grad_cam, save_heatmap, save_overlay
    from .placement import paste_pixels
    from .types import Image

    scores = {}
    for n, (im, p, loc) in enumerate(zip(images, bundle.patches, bundle.placements)):
        clean = Image(paste_pixels(im.pixels, p.reference, loc), im.label)
        adv = Image(paste_pixels(im.pixels, p.delta, loc), im.label)
        pc, pa = model.predict(np.stack([clean.pixels, adv.pixels]))
        maps = {"clean": grad_cam(clean, int(pc), model, layer), "adv": grad_cam(adv, int(pa), model, layer)}
        for kind, hm in maps.items():
            save_heatmap(out / f"{kind}_{n:04d}.png", hm)
            save_overlay(out / f"{kind}_overlay_{n:04d}.png", adv if kind == "adv" else clean, hm, loc, p.h, p.w)
        try:
            shift = attention_shift_score(maps["clean"], maps["adv"], loc, p.h, p.w)
        except ZeroMassError:
            shift = None
        scores[str(n)] = {"attention_shift": shift, "clean_pred": int(pc), "adv_pred": int(pa), "label": im.label}
    _write_json(out / "attention.json", scores)
    return scores


def cmd_explain(cfg: RunConfig, args) -> int:
    if not args.bundle:
        raise ConfigError("explain needs --bundle DIR")
    model = load_adapter(cfg.model.to_spec())
    bundle = ex.read_bundle(args.bundle)
    images = ex.bundle_images(bundle)
    out = Path(args.output_dir) if args.output_dir else Path(args.bundle) / "heatmaps"
    scores = _heatmaps(bundle, images, model, out, cfg.evaluation.layer)
    print(json.dumps(scores, sort_keys=True))
    return 0


COMMANDS = {
    "attack": cmd_attack,
    "sweep": cmd_sweep,
    "evaluate": cmd_evaluate,
    "train": cmd_train,
    "explain": cmd_explain,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vrap", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML or JSON run config")
        p.add_argument("--output-dir", help="overrides output_dir from the config")
        p.add_argument("--seed", type=int, help="overrides attack.seed from the config")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for sweep cells")
        p.add_argument("--dump-placements", action="store_true", help="write per-placement predictions (debug)")
        if name in ("evaluate", "explain"):
            p.add_argument("--bundle", help="patch bundle directory written by `vrap attack`")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config).with_overrides(args.seed, args.output_dir)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, EmptyDatasetError, DatasetMissingError) as exc:
        print(f"vrap {args.command}: {exc}", file=sys.stderr)
        return 2
    except MissingWeightsError as exc:
        print(f"vrap {args.command}: {exc}", file=sys.stderr)
        return 3
    except (VrapError, OSError, ValueError) as exc:
        print(f"vrap {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
