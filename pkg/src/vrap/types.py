"""Domain value types and the classifier-adapter contract.

Pixel arrays are ``(H, W, C)`` float64 in ``[0, 1]``, channels last. Batches
add a leading axis: ``(B, H, W, C)``.
"""
from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DomainError, ShapeMismatchError

# Slack for round-off when re-checking the epsilon ball.
BALL_TOL = 1e-12


def _frozen(array, name: str) -> np.ndarray:
    arr = np.array(array, dtype=np.float64, copy=True)
    if arr.ndim != 3:
        raise ShapeMismatchError(f"{name} must be a 3-D (h, w, C) array, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ShapeMismatchError(f"{name} has an empty axis: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise DomainError(f"{name} values must lie in [0, 1]")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Image:
    """A benign image with its ground-truth label."""

    pixels: np.ndarray
    label: int

    def __post_init__(self):
        object.__setattr__(self, "pixels", _frozen(self.pixels, "pixels"))
        if int(self.label) < 0:
            raise DomainError(f"label must be non-negative, got {self.label}")
        object.__setattr__(self, "label", int(self.label))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.pixels.shape

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def check_label(self, class_count: int) -> None:
        if not 0 <= self.label < class_count:
            raise DomainError(f"label {self.label} outside [0, {class_count})")

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return self.label == other.label and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Patch:
    """A perturbed patch ``delta`` anchored to the real patch ``reference``.

    Construction enforces ``||delta - reference||_inf <= epsilon``.
    """

    delta: np.ndarray
    reference: np.ndarray
    epsilon: float

    def __post_init__(self):
        delta = _frozen(self.delta, "delta")
        reference = _frozen(self.reference, "reference")
        if delta.shape != reference.shape:
            raise ShapeMismatchError(f"delta {delta.shape} and reference {reference.shape} differ")
        eps = float(self.epsilon)
        if not 0.0 <= eps <= 1.0:
            raise DomainError(f"epsilon must lie in [0, 1], got {eps}")
        dist = float(np.max(np.abs(delta - reference)))
        if dist > eps + BALL_TOL:
            raise DomainError(f"delta is {dist:.3g} from reference, budget {eps:.3g}")
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "reference", reference)
        object.__setattr__(self, "epsilon", eps)

    @classmethod
    def unperturbed(cls, reference, epsilon: float) -> "Patch":
        return cls(reference, reference, epsilon)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.delta.shape

    @property
    def h(self) -> int:
        return self.delta.shape[0]

    @property
    def w(self) -> int:
        return self.delta.shape[1]

    def linf_distance(self) -> float:
        return float(np.max(np.abs(self.delta - self.reference)))

    def within_budget(self) -> bool:
        return self.linf_distance() <= self.epsilon + BALL_TOL

    def __eq__(self, other):
        if not isinstance(other, Patch):
            return NotImplemented
        return (
            self.epsilon == other.epsilon
            and np.array_equal(self.delta, other.delta)
            and np.array_equal(self.reference, other.reference)
        )

    __hash__ = None


class Placement(NamedTuple):
    """Upper-left corner ``(i, j)`` = (row, column) of a pasted patch."""

    i: int
    j: int


def validate_placement(image: Image | tuple, patch: Patch | tuple, placement: Placement) -> bool:
    """True iff the patch fits inside the image at ``placement``.

    ``image`` and ``patch`` may also be plain shape tuples.
    """
    H, W = (image.shape if isinstance(image, Image) else tuple(image))[:2]
    h, w = (patch.shape if isinstance(patch, Patch) else tuple(patch))[:2]
    i, j = placement
    return 0 <= i <= H - h and 0 <= j <= W - w


@dataclass(frozen=True)
class AttackConfig:
    """Hyper-parameters of a single attack run.

    ``gamma_lr`` overrides the (lambda, gamma) descent rate, which otherwise
    equals ``epsilon / iterations``. ``optimize_gamma=False`` leaves the
    gamma transform out entirely, so the model sees ``delta`` itself.
    """

    epsilon: float = 16 / 255
    iterations: int = 100
    search_range: int = 10
    search_stride: int = 5
    patch_size: float = 0.3
    tv_weight: float = 1.0
    seed: int = 0
    gamma_lr: float | None = None
    optimize_gamma: bool = True
    gamma_bounds: tuple[float, float] = field(default=(0.5, 2.0))

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise DomainError(f"epsilon must be >= 0, got {self.epsilon}")
        if int(self.iterations) < 1:
            raise DomainError("iterations must be >= 1")
        if int(self.search_range) < 0:
            raise DomainError("search_range must be >= 0")
        if int(self.search_stride) < 1:
            raise DomainError("search_stride must be >= 1")
        if not 0 < self.patch_size <= 1:
            raise DomainError(f"patch_size must lie in (0, 1], got {self.patch_size}")
        if self.tv_weight < 0:
            raise DomainError("tv_weight must be non-negative")
        lo, hi = self.gamma_bounds
        if not 0 < lo <= hi:
            raise DomainError(f"bad gamma_bounds {self.gamma_bounds}")
        if self.gamma_lr is not None and self.gamma_lr < 0:
            raise DomainError("gamma_lr must be non-negative")

    @property
    def step_size(self) -> float:
        """Sign-step size on delta, ``epsilon / T``."""
        return self.epsilon / self.iterations

    @property
    def gamma_step(self) -> float:
        return self.epsilon / self.iterations if self.gamma_lr is None else self.gamma_lr


class ClassifierAdapter(abc.ABC):
    """What the rest of the package needs from a classifier.

    All batch arguments are ``(B, H, W, C)`` arrays in ``[0, 1]``. ``loss``
    sums the per-sample losses, so ``input_gradient`` yields independent
    per-sample gradients.

    Implementations must either tolerate concurrent read-only calls or set
    ``thread_safe = False`` so callers serialize them.
    """

    thread_safe: bool = True

    @property
    @abc.abstractmethod
    def class_count(self) -> int: ...

    @property
    @abc.abstractmethod
    def input_shape(self) -> tuple[int, int, int]: ...

    @abc.abstractmethod
    def logits(self, batch: np.ndarray) -> np.ndarray:
        """Return ``(B, N)`` class scores."""

    def predict(self, batch: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(batch), axis=1)

    @abc.abstractmethod
    def loss(self, batch: np.ndarray, labels, reduction: str = "sum"):
        """Attack loss J; ``reduction="none"`` returns one value per sample."""

    @abc.abstractmethod
    def input_gradient(self, batch: np.ndarray, labels) -> np.ndarray:
        """Gradient of ``loss(batch, labels)`` (sum) with respect to the pixels."""

    def loss_and_gradient(self, batch: np.ndarray, labels) -> tuple[np.ndarray, np.ndarray]:
        """Per-sample losses together with the input gradient."""
        return self.loss(batch, labels, reduction="none"), self.input_gradient(batch, labels)

    def activation_maps(self, image: np.ndarray, target_class: int, layer: str | None = None):
        """Return ``(activations, gradients)``, each ``(K, h, w)``, for Grad-CAM.

        ``gradients`` is the derivative of the target-class score with respect
        to the activations of ``layer``.
        """
        from .errors import UnsupportedModelError

        raise UnsupportedModelError(f"{type(self).__name__} exposes no activation maps")


def as_batch(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x[None] if x.ndim == 3 else x


def as_labels(labels, n: int) -> np.ndarray:
    arr = np.asarray(labels, dtype=np.int64).reshape(-1)
    if arr.size == 1 and n != 1:
        arr = np.full(n, arr[0], dtype=np.int64)
    if arr.size != n:
        raise ShapeMismatchError(f"{arr.size} labels for a batch of {n}")
    return arr
