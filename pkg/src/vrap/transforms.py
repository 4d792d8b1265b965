"""Printability machinery: gamma transform, total variation, projection, print simulation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeMismatchError

# delta is floored here before exponentiation so delta**gamma and log(delta) stay finite
GAMMA_FLOOR = 1e-6


@dataclass(frozen=True)
class GammaParams:
    """Brightness scale ``lam`` and exponent ``gamma`` of ``lam * delta**gamma``."""

    lam: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if not (self.lam > 0 and self.gamma > 0):
            raise DomainError(f"gamma transform needs lam > 0 and gamma > 0, got {self.lam}, {self.gamma}")


def gamma_transform(delta, params: GammaParams) -> np.ndarray:
    """``clip(lam * clip(delta, 1e-6, 1) ** gamma, 0, 1)`` elementwise."""
    if not isinstance(params, GammaParams):
        params = GammaParams(*params)
    base = np.clip(np.asarray(delta, dtype=np.float64), GAMMA_FLOOR, 1.0)
    return np.clip(params.lam * base**params.gamma, 0.0, 1.0)


def gamma_transform_with_grads(delta, params: GammaParams):
    """Transform value plus elementwise partials with respect to delta, lam, gamma.

    Partials vanish where the output saturates at 1. The input clamp is passed
    straight through for the delta partial, so pixels sitting at 0 or 1 still
    receive a usable ascent direction.
    """
    delta = np.asarray(delta, dtype=np.float64)
    lam, gamma = params.lam, params.gamma
    base = np.clip(delta, GAMMA_FLOOR, 1.0)
    powered = base**gamma
    raw = lam * powered
    out = np.clip(raw, 0.0, 1.0)
    live = raw <= 1.0
    d_delta = np.where(live, lam * gamma * base ** (gamma - 1.0), 0.0)
    d_lam = np.where(live, powered, 0.0)
    d_gamma = np.where(live, raw * np.log(base), 0.0)
    return out, d_delta, d_lam, d_gamma


def tv_loss(delta) -> float:
    """Anisotropic total variation: absolute forward differences along rows and
    columns, summed over every channel."""
    d = np.asarray(delta, dtype=np.float64)
    return float(np.abs(np.diff(d, axis=1)).sum() + np.abs(np.diff(d, axis=0)).sum())


def tv_gradient(delta) -> np.ndarray:
    """Subgradient of :func:`tv_loss`, using ``sign(0) = 0``."""
    d = np.asarray(delta, dtype=np.float64)
    grad = np.zeros_like(d)
    s = np.sign(np.diff(d, axis=1))
    grad[:, 1:] += s
    grad[:, :-1] -= s
    s = np.sign(np.diff(d, axis=0))
    grad[1:] += s
    grad[:-1] -= s
    return grad


def project_linf(delta, reference, epsilon: float) -> np.ndarray:
    """Clamp ``delta`` into ``[reference - eps, reference + eps]`` intersected with ``[0, 1]``."""
    delta = np.asarray(delta, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if delta.shape != reference.shape:
        raise ShapeMismatchError(f"delta {delta.shape} vs reference {reference.shape}")
    lo = np.maximum(reference - epsilon, 0.0)
    hi = np.minimum(reference + epsilon, 1.0)
    out = np.minimum(np.maximum(delta, lo), hi)
    # reference +/- eps is rounded, so |out - reference| can land one ulp past
    # eps; step such entries back toward the reference until the bound holds
    over = np.abs(out - reference) > epsilon
    while np.any(over):
        out[over] = np.nextafter(out[over], reference[over])
        over = np.abs(out - reference) > epsilon
    return out


def print_params(trials: int, deviation: float, rng_seed: int) -> list[GammaParams]:
    """The random gamma parameters :func:`simulate_print` draws for a seed."""
    if trials < 1:
        raise DomainError("trials must be >= 1")
    if not 0 <= deviation < 1:
        raise DomainError(f"deviation must lie in [0, 1), got {deviation}")
    rng = np.random.default_rng(rng_seed)
    draws = rng.uniform(1.0 - deviation, 1.0 + deviation, size=(trials, 2))
    return [GammaParams(float(lam), float(g)) for lam, g in draws]


def simulate_print(delta, trials: int, deviation: float, rng_seed: int) -> list[np.ndarray]:
    """Digital stand-in for printing: ``trials`` copies under random gamma distortion.

    ``lam`` and ``gamma`` are each drawn from ``U[1 - deviation, 1 + deviation]``.
    With ``deviation == 0`` every copy is just ``delta`` clipped to ``[0, 1]``.
    """
    params = print_params(trials, deviation, rng_seed)
    if deviation == 0:
        flat = np.clip(np.asarray(delta, dtype=np.float64), 0.0, 1.0)
        return [flat.copy() for _ in params]
    return [gamma_transform(delta, p) for p in params]
