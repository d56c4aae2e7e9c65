"""
Image metrics and the photometric training loss.

SSIM uses an 11x11 Gaussian window (sigma 1.5) evaluated only where the window
fits inside the image, averaged over positions and channels. Its gradient is
computed analytically, which makes the training loss differentiable without
going through the autodiff graph.
"""

from typing import Optional, Tuple

import numpy as np
from scipy import signal

from splat_autolabel.constants import PSNR_CAP, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WEIGHT, SSIM_WINDOW
from splat_autolabel.errors import ShapeMismatch, TooSmall
from splat_autolabel.nn import Operand, Tensor, as_tensor


def _check_pair(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        msg = f"image shapes differ: {a.shape} vs {b.shape}"
        raise ShapeMismatch(msg)
    if a.ndim == 2:  # noqa: PLR2004
        a, b = a[:, :, None], b[:, :, None]
    if a.ndim != 3:  # noqa: PLR2004
        msg = f"expected an H x W or H x W x C image, got shape {a.shape}"
        raise ShapeMismatch(msg)
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """
    Peak signal-to-noise ratio in decibels for images in [0, 1], capped at 100.
    """
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * float(np.log10(1.0 / mse)))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - size // 2
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _filter(x: np.ndarray, window: np.ndarray) -> np.ndarray:
    return signal.correlate2d(x, window, mode="valid")


def _filter_adjoint(g: np.ndarray, window: np.ndarray) -> np.ndarray:
    return signal.convolve2d(g, window, mode="full")


def ssim_with_grad(a: np.ndarray, b: np.ndarray, *, need_grad: bool = True) -> Tuple[float, Optional[np.ndarray]]:
    """
    Mean SSIM of a against b and, optionally, its gradient with respect to a.
    """
    a, b = _check_pair(a, b)
    h, w, channels = a.shape
    if min(h, w) < SSIM_WINDOW:
        msg = f"SSIM needs images at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        raise TooSmall(msg)
    window = gaussian_window()
    count = (h - SSIM_WINDOW + 1) * (w - SSIM_WINDOW + 1) * channels
    total = 0.0
    grad = np.zeros_like(a) if need_grad else None
    for ch in range(channels):
        x, y = a[:, :, ch], b[:, :, ch]
        mx, my = _filter(x, window), _filter(y, window)
        exx, eyy, exy = _filter(x * x, window), _filter(y * y, window), _filter(x * y, window)
        a1 = 2.0 * mx * my + SSIM_C1
        a2 = 2.0 * (exy - mx * my) + SSIM_C2
        b1 = mx * mx + my * my + SSIM_C1
        b2 = (exx - mx * mx) + (eyy - my * my) + SSIM_C2
        s = (a1 * a2) / (b1 * b2)
        total += float(s.sum())
        if grad is not None:
            d_mx = s * (2.0 * my / a1 - 2.0 * my / a2 - 2.0 * mx / b1 + 2.0 * mx / b2) / count
            d_exy = s * (2.0 / a2) / count
            d_exx = -s / b2 / count
            grad[:, :, ch] = (
                _filter_adjoint(d_mx, window)
                + 2.0 * x * _filter_adjoint(d_exx, window)
                + y * _filter_adjoint(d_exy, window)
            )
    return total / count, grad


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    value, _ = ssim_with_grad(a, b, need_grad=False)
    return value


def render_loss(rendered: np.ndarray, target: np.ndarray, weight: float = SSIM_WEIGHT) -> Tuple[float, np.ndarray]:
    """
    (1 - weight) * L1 + weight * (1 - SSIM), with its gradient w.r.t. rendered.
    """
    a, b = _check_pair(rendered, target)
    diff = a - b
    l1 = float(np.abs(diff).mean())
    d_l1 = np.sign(diff) / diff.size
    value, d_ssim = ssim_with_grad(a, b)
    assert d_ssim is not None  # noqa: S101
    loss = (1.0 - weight) * l1 + weight * (1.0 - value)
    grad = (1.0 - weight) * d_l1 - weight * d_ssim
    return loss, grad.reshape(np.shape(rendered))


def render_loss_op(rendered: Operand, target: np.ndarray, weight: float = SSIM_WEIGHT) -> Tensor:
    """
    render_loss as a scalar graph node.
    """
    rendered = as_tensor(rendered)
    loss, grad = render_loss(rendered.value, target, weight)
    return Tensor(np.asarray(loss), (rendered,), lambda g: (g * grad,))
