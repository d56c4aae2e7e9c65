import numpy as np
import pytest

from splat_autolabel import nn
from splat_autolabel.errors import ShapeMismatch, TooSmall
from splat_autolabel.metrics import gaussian_window, psnr, render_loss, render_loss_op, ssim, ssim_with_grad


def test_psnr_values():
    a = np.zeros((4, 4, 3))
    assert psnr(a, a) == 100.0
    assert psnr(a, np.full((4, 4, 3), 0.1)) == pytest.approx(20.0)
    with pytest.raises(ShapeMismatch):
        psnr(a, np.zeros((4, 5, 3)))


def test_ssim_of_identical_images_is_one(rng):
    a = rng.uniform(size=(16, 16, 3))
    assert ssim(a, a) == pytest.approx(1.0)
    assert ssim(a, rng.uniform(size=(16, 16, 3))) < 0.5


def test_ssim_needs_a_full_window(rng):
    with pytest.raises(TooSmall):
        ssim(np.zeros((10, 20, 3)), np.zeros((10, 20, 3)))


def test_window_is_normalized():
    w = gaussian_window()
    assert w.shape == (11, 11)
    assert w.sum() == pytest.approx(1.0)


def test_ssim_gradient_matches_finite_differences(rng):
    a = rng.uniform(size=(12, 13, 2))
    b = rng.uniform(size=(12, 13, 2))
    _, grad = ssim_with_grad(a, b)
    eps = 1e-6
    for i in [(0, 0, 0), (5, 6, 1), (11, 12, 0), (3, 9, 1)]:
        old = a[i]
        a[i] = old + eps
        hi = ssim(a, b)
        a[i] = old - eps
        lo = ssim(a, b)
        a[i] = old
        assert grad[i] == pytest.approx((hi - lo) / (2 * eps), rel=1e-4, abs=1e-9)


def test_render_loss_combines_l1_and_ssim(rng):
    a = rng.uniform(size=(12, 12, 3))
    b = rng.uniform(size=(12, 12, 3))
    loss, _ = render_loss(a, b, 0.2)
    assert loss == pytest.approx(0.8 * np.abs(a - b).mean() + 0.2 * (1.0 - ssim(a, b)))
    zero, grad = render_loss(a, a, 0.2)
    assert zero == pytest.approx(0.0, abs=1e-12)
    assert grad.shape == a.shape


def test_render_loss_op_feeds_gradient(rng):
    a = nn.variable(rng.uniform(size=(12, 12, 3)))
    b = rng.uniform(size=(12, 12, 3))
    grads = nn.backward(render_loss_op(a, b))
    _, expected = render_loss(a.value, b)
    np.testing.assert_array_equal(grads.for_input(a), expected)
