"""Desk-scale classifiers: spec, weight persistence, training and loading.

Weights container
-----------------
A safetensors file whose string metadata carries::

    format          "vrap-weights"
    format_version  "1"
    model_spec      JSON-encoded ModelSpec
    clean_accuracy  held-out accuracy measured at training time
    checksum        sha256 over the tensors (see :func:`weights_checksum`)

Tensors are the module's ``state_dict`` in float32.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from safetensors.torch import load_file, save_file
from safetensors import safe_open

from ..data import BUNDLED_VERSION, cache_dir, load_split
from ..errors import AccuracyGateError, DomainError, MissingWeightsError, ShapeMismatchError
from ..types import ClassifierAdapter
from .net import SmallConvNet, TorchClassifier
from .stubs import ConstantStub, LinearStub

log = logging.getLogger(__name__)

ARCHITECTURES = ("small-conv", "linear-stub", "constant-stub")
WEIGHTS_FORMAT = "vrap-weights"
WEIGHTS_VERSION = "1"
ACCURACY_GATE = 0.85


@dataclass(frozen=True)
class ModelSpec:
    architecture: str = "small-conv"
    input_shape: tuple[int, int, int] = (32, 32, 3)
    class_count: int = 10
    weights_path: str | None = None
    train_seed: int = 0
    width: int = 16
    # constant-stub only
    constant_class: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise DomainError(f"unknown architecture {self.architecture!r}; expected one of {ARCHITECTURES}")
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise DomainError(f"bad input_shape {self.input_shape}")
        if self.class_count < 2:
            raise DomainError("class_count must be >= 2")

    def resolved_weights_path(self) -> Path:
        if self.weights_path:
            return Path(self.weights_path)
        tag = f"{self.architecture}-w{self.width}-{'x'.join(map(str, self.input_shape))}-n{self.class_count}-s{self.train_seed}-d{BUNDLED_VERSION}"
        return cache_dir() / "models" / f"{tag}.safetensors"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


def build_network(spec: ModelSpec) -> SmallConvNet:
    return SmallConvNet(spec.input_shape[2], spec.class_count, spec.width)


def weights_checksum(state: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(state):
        t = state[name].detach().to(torch.float32).contiguous()
        h.update(name.encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.numpy().tobytes())
    return h.hexdigest()


def save_weights(path, net: torch.nn.Module, spec: ModelSpec, clean_accuracy: float | None = None) -> str:
    state = {k: v.detach().to(torch.float32).contiguous() for k, v in net.state_dict().items()}
    checksum = weights_checksum(state)
    meta = {
        "format": WEIGHTS_FORMAT,
        "format_version": WEIGHTS_VERSION,
        "model_spec": json.dumps(spec.to_dict(), sort_keys=True),
        "clean_accuracy": "" if clean_accuracy is None else repr(float(clean_accuracy)),
        "checksum": checksum,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".part")
    save_file(state, str(tmp), metadata=meta)
    tmp.replace(path)
    return checksum


def read_weights_header(path) -> dict:
    with safe_open(str(path), framework="pt") as f:
        meta = dict(f.metadata() or {})
    if meta.get("format") != WEIGHTS_FORMAT:
        raise ShapeMismatchError(f"{path} is not a {WEIGHTS_FORMAT} container")
    meta["model_spec"] = json.loads(meta["model_spec"])
    return meta


def _load_net(spec: ModelSpec) -> SmallConvNet:
    path = spec.resolved_weights_path()
    if not path.is_file():
        raise MissingWeightsError(f"no weights at {path}; run `vrap train` first")
    header = read_weights_header(path)
    stored = ModelSpec.from_dict({**header["model_spec"], "weights_path": spec.weights_path})
    if stored.input_shape != spec.input_shape or stored.class_count != spec.class_count or stored.width != spec.width:
        raise ShapeMismatchError(f"weights at {path} were trained for {stored}, not {spec}")
    net = build_network(spec)
    net.load_state_dict(load_file(str(path)))
    return net


def load_adapter(spec: ModelSpec, dtype=torch.float64) -> ClassifierAdapter:
    """Adapter for ``spec``; stubs are built from the spec alone."""
    if spec.architecture == "linear-stub":
        return LinearStub(spec.input_shape, spec.class_count, seed=spec.train_seed)
    if spec.architecture == "constant-stub":
        return ConstantStub(spec.input_shape, spec.class_count, spec.constant_class)
    return TorchClassifier(_load_net(spec), spec.input_shape, spec.class_count, dtype=dtype)


def evaluate_accuracy(adapter: ClassifierAdapter, pixels: np.ndarray, labels: np.ndarray, batch: int = 500) -> float:
    preds = np.concatenate([adapter.predict(pixels[s : s + batch]) for s in range(0, len(pixels), batch)])
    return float(np.mean(preds == labels))


@dataclass
class TrainReport:
    checksum: str
    clean_accuracy: float
    weights_path: str
    epoch_losses: list = field(default_factory=list)


def train_small_classifier(
    spec: ModelSpec,
    dataset_locator: str = "bundled",
    epochs: int = 15,
    batch_size: int = 64,
    lr: float = 3e-3,
    noise_std: float = 0.02,
    gate: float = ACCURACY_GATE,
):
    """Train ``spec`` on the dataset's train split and persist the weights.

    Deterministic under ``spec.train_seed``. Returns ``(adapter, report)``.
    Raises :class:`AccuracyGateError` (nothing is saved) when held-out
    accuracy stays below ``gate``.
    """
    if spec.architecture != "small-conv":
        raise DomainError(f"{spec.architecture} has nothing to train")
    x_train, y_train = load_split(dataset_locator, "train")
    x_test, y_test = load_split(dataset_locator, "test")
    if x_train.shape[1:] != spec.input_shape:
        raise ShapeMismatchError(f"dataset images {x_train.shape[1:]} != spec input {spec.input_shape}")

    torch.manual_seed(spec.train_seed)
    gen = torch.Generator().manual_seed(spec.train_seed)
    net = build_network(spec)
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=epochs)
    xs = torch.from_numpy(x_train.transpose(0, 3, 1, 2).astype(np.float32))
    ys = torch.from_numpy(y_train)
    losses = []
    net.train()
    for epoch in range(epochs):
        order = torch.randperm(len(xs), generator=gen)
        total = 0.0
        for s in range(0, len(xs), batch_size):
            idx = order[s : s + batch_size]
            xb = xs[idx]
            if noise_std:
                xb = (xb + noise_std * torch.randn(xb.shape, generator=gen)).clamp(0, 1)
            loss = torch.nn.functional.cross_entropy(net(xb), ys[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
        sched.step()
        losses.append(total / len(xs))
        log.info("epoch %d loss %.4f", epoch, losses[-1])
    net.eval()

    adapter = TorchClassifier(net, spec.input_shape, spec.class_count, dtype=torch.float32)
    acc = evaluate_accuracy(adapter, x_test, y_test)
    if acc < gate:
        raise AccuracyGateError(acc, gate)
    path = spec.resolved_weights_path()
    checksum = save_weights(path, net, spec, acc)
    adapter = TorchClassifier(net, spec.input_shape, spec.class_count)
    return adapter, TrainReport(checksum, acc, str(path), losses)


def ensure_trained(spec: ModelSpec, dataset_locator: str = "bundled", **train_kwargs) -> ClassifierAdapter:
    """Load ``spec``'s weights, training them first if they are absent."""
    if spec.architecture == "small-conv" and not spec.resolved_weights_path().is_file():
        train_small_classifier(spec, dataset_locator, **train_kwargs)
    return load_adapter(spec)


__all__ = [
    "ARCHITECTURES",
    "ConstantStub",
    "LinearStub",
    "ModelSpec",
    "SmallConvNet",
    "TorchClassifier",
    "TrainReport",
    "ensure_trained",
    "evaluate_accuracy",
    "load_adapter",
    "read_weights_header",
    "save_weights",
    "train_small_classifier",
    "weights_checksum",
]
