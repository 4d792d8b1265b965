"""Visually-realistic adversarial patches: an L-inf bounded patch attack that
searches for its weakest placement, with printability and saliency tooling."""

__version__ = "0.1.0"

from .attack import AttackResult, fixed_position_attack, vrap_attack
from .errors import VrapError
from .explain import Heatmap, attention_shift_score, grad_cam
from .metrics import attack_success_rate, position_irrelevant_rate, print_robustness
from .placement import extract, paste, patch_shape_for
from .search import SearchWindow, axis_search, brute_force_search
from .transforms import GammaParams, gamma_transform, project_linf, simulate_print, tv_loss
from .types import AttackConfig, ClassifierAdapter, Image, Patch, Placement, validate_placement

__all__ = [
    "AttackConfig",
    "AttackResult",
    "ClassifierAdapter",
    "GammaParams",
    "Heatmap",
    "Image",
    "Patch",
    "Placement",
    "SearchWindow",
    "VrapError",
    "attack_success_rate",
    "attention_shift_score",
    "axis_search",
    "brute_force_search",
    "extract",
    "fixed_position_attack",
    "gamma_transform",
    "grad_cam",
    "paste",
    "patch_shape_for",
    "position_irrelevant_rate",
    "print_robustness",
    "project_linf",
    "simulate_print",
    "tv_loss",
    "validate_placement",
    "vrap_attack",
]
