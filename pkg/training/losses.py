"""Photometric and opacity losses with analytic gradients.

Images are float arrays shaped (H, W, 3). Every loss returns its value and the
gradient with respect to its first argument.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from models.training_state import TrainConfig
from utils.errors import DimensionMismatchError, EmptyCloudError, InvalidParameterError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
OPACITY_FLOOR = 1e-12


def _check_pair(rendered: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise DimensionMismatchError(f"image shapes differ: {rendered.shape} vs {target.shape}")
    return rendered, target


def l1_loss(rendered: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean absolute error over pixels and channels."""
    rendered, target = _check_pair(rendered, target)
    diff = rendered - target
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1D Gaussian kernel."""
    offsets = np.arange(size) - (size - 1) / 2.0
    kernel = np.exp(-(offsets**2) / (2.0 * sigma**2))
    return kernel / kernel.sum()


def _filter(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Valid separable correlation over the two leading (spatial) axes."""
    x = sliding_window_view(x, kernel.size, axis=0) @ kernel
    return sliding_window_view(x, kernel.size, axis=1) @ kernel


def _filter_adjoint(y: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Adjoint of ``_filter``: scatter back onto the full-size grid."""
    pad = kernel.size - 1
    flipped = kernel[::-1]
    y = np.pad(y, ((pad, pad), (0, 0), (0, 0)))
    y = sliding_window_view(y, kernel.size, axis=0) @ flipped
    y = np.pad(y, ((0, 0), (pad, pad), (0, 0)))
    return sliding_window_view(y, kernel.size, axis=1) @ flipped


def ssim(rendered: np.ndarray, target: np.ndarray, data_range: float = 1.0) -> tuple[float, np.ndarray]:
    """Mean SSIM over valid window positions and channels, and its gradient w.r.t. ``rendered``.

    Raises:
        DimensionMismatchError: If the shapes differ
        InvalidParameterError: If the image is smaller than the window
    """
    x, y = _check_pair(rendered, target)
    if x.ndim == 2:
        value, grad = ssim(x[..., None], y[..., None], data_range)
        return value, grad[..., 0]
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise InvalidParameterError(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {x.shape[:2]}")
    kernel = gaussian_window()
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    mu_x, mu_y = _filter(x, kernel), _filter(y, kernel)
    s_xx = _filter(x * x, kernel) - mu_x**2
    s_yy = _filter(y * y, kernel) - mu_y**2
    s_xy = _filter(x * y, kernel) - mu_x * mu_y
    a1 = 2.0 * mu_x * mu_y + c1
    a2 = 2.0 * s_xy + c2
    b1 = mu_x**2 + mu_y**2 + c1
    b2 = s_xx + s_yy + c2
    ssim_map = a1 * a2 / (b1 * b2)

    scale = 1.0 / ssim_map.size
    d_mu_x = (2.0 * mu_y * a2 / (b1 * b2) - ssim_map * 2.0 * mu_x / b1) * scale
    d_s_xx = -ssim_map / b2 * scale
    d_s_xy = 2.0 * a1 / (b1 * b2) * scale
    d_mu_total = d_mu_x - 2.0 * mu_x * d_s_xx - mu_y * d_s_xy
    grad = (
        _filter_adjoint(d_mu_total, kernel)
        + 2.0 * x * _filter_adjoint(d_s_xx, kernel)
        + y * _filter_adjoint(d_s_xy, kernel)
    )
    return float(ssim_map.mean()), grad


def ssim_loss(rendered: np.ndarray, target: np.ndarray, data_range: float = 1.0) -> tuple[float, np.ndarray]:
    """``1 - SSIM``."""
    value, grad = ssim(rendered, target, data_range)
    return 1.0 - value, -grad


def opacity_entropy_loss(opacities: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean of ``-o log o``, pushing opacities towards 0 or 1.

    Raises:
        EmptyCloudError: If there are no opacities
    """
    o = np.asarray(opacities, dtype=np.float64).reshape(-1)
    if o.size == 0:
        raise EmptyCloudError("opacity entropy of an empty set")
    o = np.maximum(o, OPACITY_FLOOR)
    log_o = np.log(o)
    return float(np.mean(-o * log_o)), -(log_o + 1.0) / o.size


@dataclass
class LossTerms:
    """Weighted training loss, its components and its gradients."""

    total: float
    l1: float
    ssim_loss: float
    l_opa: float
    grad_image: np.ndarray
    grad_opacity: np.ndarray


def total_loss(rendered: np.ndarray, target: np.ndarray, opacities: np.ndarray, cfg: TrainConfig) -> LossTerms:
    """``(1 - λ) L1 + λ L_ssim + κ L_opa``; the entropy term is skipped when κ is off."""
    lam = cfg.lambda_ssim
    kappa = cfg.entropy_weight
    l1, grad_l1 = l1_loss(rendered, target)
    l_ssim, grad_ssim = ssim_loss(rendered, target)
    opacities = np.asarray(opacities, dtype=np.float64)
    if opacities.size:
        l_opa, grad_opa = opacity_entropy_loss(opacities)
    else:
        l_opa, grad_opa = 0.0, np.zeros(0)
    return LossTerms(
        total=(1.0 - lam) * l1 + lam * l_ssim + kappa * l_opa,
        l1=l1,
        ssim_loss=l_ssim,
        l_opa=l_opa,
        grad_image=(1.0 - lam) * grad_l1 + lam * grad_ssim,
        grad_opacity=kappa * grad_opa,
    )
