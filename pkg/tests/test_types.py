import numpy as np
import pytest
from hypothesis import given, strategies as st

from vrap.errors import DomainError
from vrap.types import AttackConfig, Image, Patch, Placement, validate_placement


@pytest.mark.parametrize("loc, ok", [((0, 0), True), ((157, 157), True), ((158, 0), False), ((0, 158), False)])
def test_validate_placement_boundaries(loc, ok):
    assert validate_placement((224, 224, 3), (67, 67, 3), Placement(*loc)) is ok


def test_validate_placement_negative():
    assert not validate_placement((10, 10, 1), (3, 3, 1), Placement(-1, 0))


def test_image_rejects_out_of_range_pixels():
    with pytest.raises(DomainError):
        Image(np.full((2, 2, 1), 1.5), 0)
    with pytest.raises(DomainError):
        Image(np.zeros((2, 2, 1)), -1)


def test_image_is_read_only():
    im = Image(np.zeros((2, 2, 1)), 0)
    with pytest.raises(ValueError):
        im.pixels[0, 0, 0] = 1.0


def test_patch_rejects_budget_violation():
    ref = np.full((2, 2, 1), 0.5)
    with pytest.raises(DomainError):
        Patch(ref + 0.1, ref, 0.05)
    p = Patch(ref + 0.05, ref, 0.05)
    assert p.within_budget()
    assert p.linf_distance() == pytest.approx(0.05)


@given(st.floats(0.01, 0.5), st.integers(0, 2**31 - 1))
def test_patch_accepts_projected_deltas(eps, seed):
    rng = np.random.default_rng(seed)
    ref = rng.uniform(0, 1, (3, 3, 2))
    delta = np.clip(ref + rng.uniform(-eps, eps, ref.shape), 0, 1)
    assert Patch(delta, ref, eps).within_budget()


def test_attack_config_steps_and_validation():
    cfg = AttackConfig(epsilon=16 / 255, iterations=100)
    assert cfg.step_size == pytest.approx(16 / 255 / 100)
    assert cfg.gamma_step == cfg.step_size
    assert AttackConfig(gamma_lr=0.1).gamma_step == 0.1
    for bad in ({"iterations": 0}, {"search_stride": 0}, {"patch_size": 0.0}, {"patch_size": 1.5}, {"epsilon": -1}):
        with pytest.raises(DomainError):
            AttackConfig(**bad)
