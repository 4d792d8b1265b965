"""Closed-form stub classifiers used as exact oracles.

Neither stub holds trained state. A linear stub draws its weights from a
seed unless they are given explicitly.
"""
from __future__ import annotations

import numpy as np

from ..types import ClassifierAdapter, as_batch, as_labels


class LinearStub(ClassifierAdapter):
    """Logits ``z = W @ vec(x) + b`` with a linear attack loss.

    The loss is the negative margin ``J(x, y) = mean_{c != y} z_c - z_y``, so
    ``input_gradient`` is independent of ``x``:
    ``mean_{c != y} W_c - W_y`` reshaped to the image.
    """

    def __init__(self, input_shape, class_count: int, weights=None, bias=None, seed: int = 0):
        self._shape = tuple(int(s) for s in input_shape)
        self._n = int(class_count)
        d = int(np.prod(self._shape))
        rng = np.random.default_rng(seed)
        if weights is None:
            weights = rng.standard_normal((self._n, d))
        self.weights = np.asarray(weights, dtype=np.float64).reshape(self._n, d)
        self.bias = np.zeros(self._n) if bias is None else np.asarray(bias, dtype=np.float64).reshape(self._n)

    @property
    def class_count(self) -> int:
        return self._n

    @property
    def input_shape(self):
        return self._shape

    def logits(self, batch):
        x = as_batch(batch)
        return x.reshape(x.shape[0], -1) @ self.weights.T + self.bias

    def direction(self, label: int) -> np.ndarray:
        """Loss gradient for one label, shaped like an image."""
        others = np.delete(self.weights, label, axis=0).mean(axis=0)
        return (others - self.weights[label]).reshape(self._shape)

    def loss(self, batch, labels, reduction: str = "sum"):
        z = self.logits(batch)
        y = as_labels(labels, z.shape[0])
        zy = z[np.arange(len(y)), y]
        per = (z.sum(axis=1) - zy) / (self._n - 1) - zy
        return per if reduction == "none" else float(per.sum())

    def input_gradient(self, batch, labels):
        x = as_batch(batch)
        y = as_labels(labels, x.shape[0])
        return np.stack([self.direction(int(c)) for c in y])


class ConstantStub(ClassifierAdapter):
    """Predicts ``predicted_class`` for every input; loss is a constant."""

    def __init__(self, input_shape, class_count: int, predicted_class: int = 0, constant_loss: float = 1.0):
        self._shape = tuple(int(s) for s in input_shape)
        self._n = int(class_count)
        self.predicted_class = int(predicted_class)
        self.constant_loss = float(constant_loss)

    @property
    def class_count(self) -> int:
        return self._n

    @property
    def input_shape(self):
        return self._shape

    def logits(self, batch):
        x = as_batch(batch)
        z = np.zeros((x.shape[0], self._n))
        z[:, self.predicted_class] = 1.0
        return z

    def loss(self, batch, labels, reduction: str = "sum"):
        n = as_batch(batch).shape[0]
        per = np.full(n, self.constant_loss)
        return per if reduction == "none" else float(per.sum())

    def input_gradient(self, batch, labels):
        return np.zeros_like(as_batch(batch))
