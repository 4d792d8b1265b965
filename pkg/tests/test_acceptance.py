"""End-to-end acceptance criteria on the trained desk-scale classifier.

Each test prints one ``criterion N PASS|FAIL: ...`` line (collected into the
terminal summary). Attack cells are cached for the session, so criteria
sharing an experiment reuse it. Budgets are in 8-bit levels (16 means 16/255).
"""
from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np
import pytest
import yaml

from conftest import ACCEPTANCE_LINES
from harness import PositionalStub, exhaustive_pir, finite_difference_gradient
from vrap import experiment as ex
from vrap.attack import initial_placement, patch_objective_gradients, vrap_attack_batch
from vrap.cli import main
from vrap.config import ReferenceSection
from vrap.metrics import (
    attack_success_rate,
    pir_counts,
    pir_denominator,
    position_irrelevant_rate,
    print_robustness_counts,
    quantize_patch,
)
from vrap.models import LinearStub
from vrap.search import SearchWindow, axis_search, brute_force_search
from vrap.transforms import GammaParams, gamma_transform, gamma_transform_with_grads, project_linf, tv_gradient, tv_loss
from vrap.types import AttackConfig, Image, Patch, Placement

pytestmark = pytest.mark.acceptance

N_TREND = 200
N_SMALL = 50
T = 100
TV_WEIGHT = 1e-3
TAU_PIR = 5
REFERENCE = ReferenceSection(source="extract-from-image", donor_split="train", seed=0)


def record(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


_images: list = []
_cells: dict = {}


def images(n: int) -> list[Image]:
    if len(_images) < n:
        _images[:] = ex.load_dataset_images("bundled", "test", 0, n)
    return _images[:n]


def cell(model, method="vrap", eps=16, size=0.3, tau=5, k=10, n=N_TREND):
    """Attack results for the first ``n`` test images, cached per setting.

    A request for fewer images than an existing cell with the same setting
    reuses that cell's leading results (image ``m`` always uses seed ``m``).
    """
    for (key, count), results in _cells.items():
        if key == (method, eps, size, tau, k) and count >= n:
            return results[:n]
    ims = images(n)
    cfg = AttackConfig(epsilon=eps / 255, iterations=T, search_range=k, search_stride=tau, patch_size=size,
                       tv_weight=TV_WEIGHT, seed=0)
    refs = ex.references_for(REFERENCE, "bundled", ims, size)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        results = ex.run_attacks_for(method, ims, refs, cfg, model)
    _cells[((method, eps, size, tau, k), n)] = results
    return results


def asr_of(model, results, quantized=False):
    ims = images(len(results))
    patch = (lambda p: quantize_patch(p)) if quantized else (lambda p: p)
    return attack_success_rate([(im, patch(r.patch), r.final_placement) for im, r in zip(ims, results)], model)


def mean_pir(model, results, tau=TAU_PIR):
    ims = images(len(results))
    return float(np.mean([position_irrelevant_rate(im, r.patch, tau, model) for im, r in zip(ims, results)]))


def pooled_print(model, results, deviation, trials=50, seed=0):
    ims = images(len(results))
    hits = sum(
        print_robustness_counts(im, r.patch, r.final_placement, trials, deviation, seed, model).numerator
        for im, r in zip(ims, results)
    )
    return hits / (trials * len(results))


def fmt(values: dict) -> str:
    return ", ".join(f"{k}={v:.3f}" for k, v in values.items())


def non_decreasing(seq, tol):
    return all(b >= a - tol for a, b in zip(seq, seq[1:]))


# -- 1 ---------------------------------------------------------------------


def test_criterion_1_budget_trend(trained_model):
    asr = {eps: asr_of(trained_model, cell(trained_model, eps=eps)) for eps in (4, 8, 12, 16)}
    seq = list(asr.values())
    passed = non_decreasing(seq, 0.03) and asr[16] >= asr[4] + 0.10 - 1e-12
    record(1, passed, f"ASR by eps/255 on {N_TREND} images: " + fmt({f"eps{k}": v for k, v in asr.items()}))
    assert passed


# -- 2 ---------------------------------------------------------------------


def test_criterion_2_size_trend(trained_model):
    asr = {s: asr_of(trained_model, cell(trained_model, size=s)) for s in (0.1, 0.2, 0.3)}
    passed = non_decreasing(list(asr.values()), 0.03)
    record(2, passed, f"ASR by patch size at eps 16/255: " + fmt({f"size{k}": v for k, v in asr.items()}))
    assert passed


# -- 3 ---------------------------------------------------------------------


def test_criterion_3_position_search_benefit(trained_model):
    vrap = {eps: mean_pir(trained_model, cell(trained_model, eps=eps, n=N_SMALL)) for eps in (4, 8, 16)}
    fixed = {eps: mean_pir(trained_model, cell(trained_model, "fixed", eps=eps, n=N_SMALL)) for eps in (4, 8, 16)}
    benefit = vrap[16] > fixed[16]
    ordering = non_decreasing(list(vrap.values()), 0.03)
    passed = benefit and ordering
    record(3, passed, f"mean PIR on {N_SMALL} images, vrap: " + fmt({f"eps{k}": v for k, v in vrap.items()})
           + "; fixed: " + fmt({f"eps{k}": v for k, v in fixed.items()})
           + f"; vrap>fixed at eps16: {benefit}; eps ordering: {ordering}")
    assert passed


# -- 4 ---------------------------------------------------------------------


def test_criterion_4_search_oracle_equivalence():
    H, h = 40, 6
    canvas = np.zeros((H, H, 1))
    patch = np.ones((h, h, 1))
    rng = np.random.default_rng(2024)
    failures = 0
    for separable in (True, False):
        for _ in range(100):
            f, g, cross = rng.standard_normal(H), rng.standard_normal(H), rng.standard_normal((H, H))
            if separable:
                fn = lambda i, j: float(f[i] + g[j])
            else:
                fn = lambda i, j: float(f[i] + g[j] + 2.0 * cross[i, j])
            model = PositionalStub(canvas, fn)
            win = SearchWindow(Placement(*rng.integers(0, H - h + 1, size=2)), int(rng.integers(0, 16)),
                               int(rng.integers(1, 7)))
            a = fn(*axis_search(Image(canvas, 0), patch, win, model))
            b = fn(*brute_force_search(Image(canvas, 0), patch, win, model))
            ok = a == b if separable else b <= a <= fn(*win.center)
            failures += not ok
    record(4, failures == 0, f"{failures} violations over 100 separable + 100 non-separable instances")
    assert failures == 0


# -- 5 ---------------------------------------------------------------------


def test_criterion_5_gradient_suite():
    rng = np.random.default_rng(5)
    tv_worst = 0.0
    for _ in range(50):
        d = rng.uniform(0, 1, (4, 4, 3))
        fd = finite_difference_gradient(tv_loss, d, 1e-7)
        tv_worst = max(tv_worst, np.max(np.abs(tv_gradient(d) - fd)) / np.max(np.abs(fd)))
    gamma_worst = 0.0
    for _ in range(50):
        lam, gam = rng.uniform(0.6, 1.4), rng.uniform(0.6, 1.6)
        d = rng.uniform(0.05, 0.6, (3, 3, 1))
        while np.any(lam * d**gam >= 0.99):
            d = d * 0.8
        w = rng.standard_normal(d.shape)
        _, dd, dl, dg = gamma_transform_with_grads(d, GammaParams(lam, gam))
        checks = [
            (w * dd, finite_difference_gradient(lambda x: np.sum(w * gamma_transform(x, GammaParams(lam, gam))), d)),
            (np.sum(w * dl), finite_difference_gradient(
                lambda p: np.sum(w * gamma_transform(d, GammaParams(p[0], gam))), np.array([lam]))[0]),
            (np.sum(w * dg), finite_difference_gradient(
                lambda p: np.sum(w * gamma_transform(d, GammaParams(lam, p[0]))), np.array([gam]))[0]),
        ]
        for got, want in checks:
            gamma_worst = max(gamma_worst, np.max(np.abs(got - want)) / max(np.max(np.abs(want)), 1e-12))

    model = LinearStub((12, 12, 3), 5, seed=5)
    e2e_worst = 0.0
    for trial in range(10):
        image = Image(rng.uniform(0, 1, (12, 12, 3)), int(rng.integers(0, 5)))
        delta = rng.uniform(0.2, 0.8, (4, 4, 3))
        loc = Placement(*rng.integers(0, 9, size=2))
        params = GammaParams(rng.uniform(0.7, 0.95), rng.uniform(0.8, 1.3))
        _, g, _, _ = patch_objective_gradients(image, delta, loc, model, params)

        def objective(x):
            full = np.array(image.pixels)
            full[loc.i : loc.i + 4, loc.j : loc.j + 4] = gamma_transform(x, params)
            return model.loss(full[None], [image.label])

        fd = finite_difference_gradient(objective, delta, 1e-6)
        e2e_worst = max(e2e_worst, np.max(np.abs(g - fd)) / max(1.0, np.max(np.abs(fd))))
    passed = tv_worst < 1e-4 and gamma_worst < 1e-4 and e2e_worst <= 1e-6
    record(5, passed, f"max relative error tv={tv_worst:.2e}, gamma={gamma_worst:.2e}, end-to-end={e2e_worst:.2e}")
    assert passed


# -- 6 ---------------------------------------------------------------------


def test_criterion_6_constraints(trained_model):
    eps = 16 / 255
    ims = images(20)
    refs = ex.references_for(REFERENCE, "bundled", ims, 0.3)
    violations, steps = 0, 0

    def check(t, deltas, references):
        nonlocal violations, steps
        steps += len(deltas)
        per = np.max(np.abs(deltas - references), axis=(1, 2, 3)) > eps
        out = (deltas.min(axis=(1, 2, 3)) < 0) | (deltas.max(axis=(1, 2, 3)) > 1)
        violations += int(np.sum(per | out))

    cfg = AttackConfig(epsilon=eps, iterations=T, tv_weight=TV_WEIGHT)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        vrap_attack_batch(ims, refs, cfg, trained_model, callback=check)

    rng = np.random.default_rng(6)
    idem_fail = 0
    for _ in range(1000):
        shape = tuple(rng.integers(1, 6, size=3))
        ref, delta, e = rng.uniform(0, 1, shape), rng.uniform(-0.5, 1.5, shape), rng.uniform(0, 0.5)
        once = project_linf(delta, ref, e)
        idem_fail += not np.array_equal(project_linf(once, ref, e), once)
    passed = violations == 0 and idem_fail == 0 and steps == 20 * T
    record(6, passed, f"{violations} ball/range violations over {steps} iterates of 20 runs; "
                      f"{idem_fail} idempotence failures over 1000 triples")
    assert passed


# -- 7 ---------------------------------------------------------------------


def test_criterion_7_metric_exactness(trained_model):
    rng = np.random.default_rng(7)
    ims = images(20)
    mismatches = 0
    for im in ims:
        h = int(rng.integers(3, 11))
        tau = int(rng.integers(2, 6))
        ref = rng.uniform(0, 1, (h, h, 3))
        patch = Patch(np.clip(ref + rng.uniform(-0.2, 0.2, ref.shape), 0, 1), ref, 0.2)
        mismatches += exhaustive_pir(im, patch, tau, trained_model) != position_irrelevant_rate(im, patch, tau,
                                                                                                trained_model)

    class Table:
        # predictions keyed on the value at pixel (0, 0)
        def __init__(self):
            self.lookup = {0.5: 1, 0.6: 1, 0.2: 1}

        def predict(self, batch):
            return np.array([self.lookup.get(round(float(x[0, 0, 0]), 6), 0) for x in batch])

    blank = Image(np.zeros((4, 4, 1)), 0)
    one = lambda d, r: Patch(np.full((1, 1, 1), d), np.full((1, 1, 1), r), 0.5)
    table = [(blank, one(0.5, 0.3), Placement(0, 0)), (blank, one(0.6, 0.2), Placement(0, 0)),
             (blank, one(0.7, 0.4), Placement(0, 0))]
    asr = attack_success_rate(table, Table())
    denom = pir_denominator((224, 224), (67, 67), 5)
    passed = mismatches == 0 and asr == 1 / 3 and denom == 961
    record(7, passed, f"{mismatches}/20 PIR mismatches vs naive oracle; toy ASR={asr}; denominator={denom}")
    assert passed


# -- 8 ---------------------------------------------------------------------


def test_criterion_8_printability(trained_model):
    gaps = {}
    for eps in (4, 8, 12, 16):
        results = cell(trained_model, eps=eps)
        gaps[f"eps{eps}"] = abs(asr_of(trained_model, results, quantized=True) - asr_of(trained_model, results))
    quant_ok = max(gaps.values()) <= 0.02 + 1e-12
    vrap = cell(trained_model, eps=16, n=N_SMALL)
    fixed = cell(trained_model, "fixed", eps=16, n=N_SMALL)
    v0, v5 = pooled_print(trained_model, vrap, 0.0), pooled_print(trained_model, vrap, 0.05)
    f5 = pooled_print(trained_model, fixed, 0.05)
    stable = abs(v5 - v0) <= 0.10 + 1e-12
    beats = v5 >= f5
    passed = quant_ok and stable and beats
    record(8, passed, "8-bit ASR gap " + fmt(gaps) + f"; vrap print robustness dev0={v0:.3f} dev0.05={v5:.3f}; "
                      f"fixed dev0.05={f5:.3f}; quantization ok: {quant_ok}; stable: {stable}; vrap>=fixed: {beats}")
    assert passed


# -- 9 ---------------------------------------------------------------------


def test_criterion_9_parameter_study(trained_model):
    by_tau = {tau: cell(trained_model, tau=tau, k=10) for tau in (3, 5, 7, 10)}
    asr_tau = {t: asr_of(trained_model, r) for t, r in by_tau.items()}
    pir_tau = {t: mean_pir(trained_model, r) for t, r in by_tau.items()}
    by_k = {k: cell(trained_model, tau=5, k=k) for k in (5, 10, 15)}
    pir_k = {k: mean_pir(trained_model, r) for k, r in by_k.items()}
    spread_asr = max(asr_tau.values()) - min(asr_tau.values())
    spread_pir = max(pir_tau.values()) - min(pir_tau.values())
    passed = spread_asr <= 0.05 + 1e-12 and spread_pir <= 0.05 + 1e-12 and pir_k[10] >= pir_k[5]
    record(9, passed, f"tau sweep ASR " + fmt({f"tau{k}": v for k, v in asr_tau.items()})
           + f" (spread {spread_asr:.3f}); PIR " + fmt({f"tau{k}": v for k, v in pir_tau.items()})
           + f" (spread {spread_pir:.3f}); k sweep PIR " + fmt({f"k{k}": v for k, v in pir_k.items()}))
    assert passed


# -- 10 --------------------------------------------------------------------


def test_criterion_10_attention_shift(trained_model):
    want = 30
    results = cell(trained_model, eps=16)
    ims = images(len(results))
    scores, skipped = ex.attention_shifts(ims, [r.patch for r in results], [r.final_placement for r in results],
                                          trained_model, want)
    extra_from = len(results)
    while len(scores) < want and extra_from < 2000:
        # keep attacking further test images until 30 successes are available
        more = ex.load_dataset_images("bundled", "test", extra_from, 100)
        if not more:
            break
        refs = ex.references_for(ReferenceSection(seed=extra_from), "bundled", more, 0.3)
        cfg = AttackConfig(epsilon=16 / 255, iterations=T, tv_weight=TV_WEIGHT, seed=extra_from)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = vrap_attack_batch(more, refs, cfg, trained_model)
        s, k = ex.attention_shifts(more, [r.patch for r in res], [r.final_placement for r in res], trained_model,
                                   want - len(scores))
        scores += s
        skipped += k
        extra_from += 100
    scores = np.array(scores[:want])
    mean, share = float(scores.mean()), float(np.mean(scores > 0))
    passed = len(scores) == want and mean > 0 and share >= 0.70
    record(10, passed, f"{len(scores)} successful images (skipped {skipped} zero-mass); mean shift={mean:.3f}; "
                       f"positive share={share:.2f}")
    assert passed


# -- 11 --------------------------------------------------------------------


def _metrics_json(path: Path):
    # the config echo differs between reruns only by output_dir
    doc = json.loads(path.read_text())
    if isinstance(doc, dict):
        doc.pop("config_echo", None)
    return doc


def test_criterion_11_cli_determinism(tmp_path, trained_model):
    base = {"attack": {"iterations": 20, "tv_weight": TV_WEIGHT}, "num_images": 4,
            "evaluation": {"print_trials": 10, "attention_limit": 4}}
    compared = {}

    def run_twice(name, command, doc, extra=(), outputs=()):
        runs = []
        for rep in ("a", "b"):
            out = tmp_path / f"{name}_{rep}"
            cfg = tmp_path / f"{name}_{rep}.yaml"
            cfg.write_text(yaml.safe_dump({**doc, "output_dir": str(out)}))
            args = [command, "--config", str(cfg), *[a.replace("{rep}", rep) for a in extra]]
            assert main(args) == 0, args
            runs.append([_metrics_json(out / o) if o.endswith(".json") else (out / o).read_bytes() for o in outputs])
        compared[name] = runs[0] == runs[1]

    run_twice("attack", "attack", base, outputs=("summary.json", "patch_0000.png"))
    for name, output in (("evaluate", "report.json"), ("explain", "attention.json")):
        run_twice(name, name, base, outputs=(output,),
                  extra=["--bundle", str(tmp_path / "attack_{rep}"), "--output-dir", str(tmp_path / f"{name}_{{rep}}")])
    run_twice("sweep", "sweep", {**base, "sweep": {"epsilon": [4, 16]}}, outputs=("results.json",))
    reports = []
    for rep in ("a", "b"):
        doc = {"train": {"epochs": 1, "gate": 0.0}, "model": {"weights_path": str(tmp_path / f"w_{rep}.safetensors")},
               "output_dir": str(tmp_path / f"train_{rep}")}
        cfg = tmp_path / f"train_{rep}.yaml"
        cfg.write_text(yaml.safe_dump(doc))
        assert main(["train", "--config", str(cfg)]) == 0
        r = json.loads((tmp_path / f"train_{rep}" / "train_report.json").read_text())
        r.pop("weights_path")
        reports.append(r)
    compared["train"] = reports[0] == reports[1]
    passed = all(compared.values())
    record(11, passed, "identical reruns: " + ", ".join(f"{k}={v}" for k, v in compared.items()))
    assert passed
