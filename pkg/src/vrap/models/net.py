"""Small convolutional classifier for 32x32 images and its adapter."""
from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import UnsupportedModelError
from ..types import ClassifierAdapter, as_batch, as_labels


class SmallConvNet(nn.Module):
    """Three conv stages (conv, batch-norm, ReLU), global average pooling, one linear layer.

    ``features`` ends with the last convolutional stage, which Grad-CAM reads.
    """

    def __init__(self, channels: int = 3, class_count: int = 10, width: int = 16):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(channels, width, 3, padding=1),
            nn.BatchNorm2d(width),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(width, 2 * width, 3, padding=1),
            nn.BatchNorm2d(2 * width),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(2 * width, 4 * width, 3, padding=1),
            nn.BatchNorm2d(4 * width),
            nn.ReLU(),
        )
        self.head = nn.Linear(4 * width, class_count)

    def forward(self, x):
        a = self.features(x)
        return self.head(a.mean(dim=(2, 3)))


class TorchClassifier(ClassifierAdapter):
    """Adapter over a torch module taking NCHW input; loss J is summed cross-entropy.

    Runs in float64 by default so finite-difference checks are meaningful.
    Inference is read-only, but torch's autograd state is per-thread, so
    concurrent calls are safe.
    """

    layers = ("features",)

    def __init__(self, net: nn.Module, input_shape, class_count: int, dtype=torch.float64):
        self.net = net.to(dtype).eval()
        for p in self.net.parameters():
            p.requires_grad_(False)
        self.dtype = dtype
        self._shape = tuple(int(s) for s in input_shape)
        self._n = int(class_count)

    @property
    def class_count(self) -> int:
        return self._n

    @property
    def input_shape(self):
        return self._shape

    def _tensor(self, batch) -> torch.Tensor:
        x = as_batch(batch)
        return torch.from_numpy(np.ascontiguousarray(x.transpose(0, 3, 1, 2))).to(self.dtype)

    def logits(self, batch):
        with torch.no_grad():
            return self.net(self._tensor(batch)).double().numpy()

    def loss(self, batch, labels, reduction: str = "sum"):
        x = self._tensor(batch)
        y = torch.from_numpy(as_labels(labels, x.shape[0]))
        with torch.no_grad():
            per = F.cross_entropy(self.net(x), y, reduction="none").double().numpy()
        return per if reduction == "none" else float(per.sum())

    def loss_and_gradient(self, batch, labels):
        x = self._tensor(batch).requires_grad_(True)
        y = torch.from_numpy(as_labels(labels, x.shape[0]))
        per = F.cross_entropy(self.net(x), y, reduction="none")
        (grad,) = torch.autograd.grad(per.sum(), x)
        return per.detach().double().numpy(), grad.double().numpy().transpose(0, 2, 3, 1)

    def input_gradient(self, batch, labels):
        return self.loss_and_gradient(batch, labels)[1]

    def activation_maps(self, image, target_class: int, layer: str | None = None):
        layer = layer or "features"
        if layer not in self.layers or not hasattr(self.net, layer):
            raise UnsupportedModelError(f"no activation layer {layer!r}")
        with torch.no_grad():
            acts = getattr(self.net, layer)(self._tensor(image))
        acts = acts.detach().requires_grad_(True)
        score = self.net.head(acts.mean(dim=(2, 3)))[0, int(target_class)]
        (grad,) = torch.autograd.grad(score, acts)
        return acts.detach()[0].double().numpy(), grad[0].double().numpy()
