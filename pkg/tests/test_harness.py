import numpy as np
import pytest

from harness import exhaustive_pir, finite_difference_gradient
from vrap.errors import DegenerateGridError
from vrap.metrics import position_irrelevant_rate
from vrap.models import ConstantStub, LinearStub
from vrap.transforms import tv_gradient, tv_loss
from vrap.types import Image, Patch


def test_fd_sum_of_squares():
    g = finite_difference_gradient(lambda x: float(np.sum(x**2)), np.ones((3, 4)), 1e-5)
    assert np.allclose(g, 2.0, atol=1e-6)


def test_fd_constant():
    assert np.array_equal(finite_difference_gradient(lambda x: 3.0, np.zeros(5)), np.zeros(5))


def test_fd_step_must_be_positive():
    with pytest.raises(ValueError):
        finite_difference_gradient(lambda x: 0.0, np.zeros(2), 0.0)


def test_fd_tv():
    d = np.random.default_rng(7).uniform(0, 1, (4, 4, 3))
    fd = finite_difference_gradient(tv_loss, d, 1e-7)
    assert np.max(np.abs(fd - tv_gradient(d))) / np.max(np.abs(fd)) < 1e-4


def test_exhaustive_pir_constant_stub_all_misclassify():
    im = Image(np.zeros((10, 10, 1)), 1)
    patch = Patch.unperturbed(np.ones((3, 3, 1)), 0.1)
    model = ConstantStub((10, 10, 1), 2, predicted_class=0)
    assert exhaustive_pir(im, patch, 2, model) == position_irrelevant_rate(im, patch, 2, model)
    assert exhaustive_pir(im, patch, 2, model) == 16 / 9


def test_exhaustive_pir_degenerate_agreement():
    im = Image(np.zeros((10, 10, 1)), 1)
    patch = Patch.unperturbed(np.ones((3, 3, 1)), 0.1)
    model = ConstantStub((10, 10, 1), 2)
    for f in (exhaustive_pir, position_irrelevant_rate):
        with pytest.raises(DegenerateGridError):
            f(im, patch, 8, model)


@pytest.mark.parametrize("seed", range(20))
def test_exhaustive_pir_equals_metric(seed):
    rng = np.random.default_rng(seed)
    H = int(rng.integers(6, 13))
    h = int(rng.integers(1, H - 2))
    tau = int(rng.integers(1, 4))
    model = LinearStub((H, H, 2), 3, seed=seed)
    im = Image(rng.uniform(0, 1, (H, H, 2)), int(rng.integers(0, 3)))
    ref = rng.uniform(0, 1, (h, h, 2))
    patch = Patch(np.clip(ref + rng.uniform(-0.3, 0.3, ref.shape), 0, 1), ref, 0.3)
    if ((H - h) // tau) == 0:
        pytest.skip("degenerate draw")
    assert exhaustive_pir(im, patch, tau, model) == position_irrelevant_rate(im, patch, tau, model)
