"""Image quality metrics for evaluation reports."""

from typing import Literal

import numpy as np

from training.losses import ssim
from utils.errors import DimensionMismatchError, InvalidParameterError

DSSIM_RANGES = {1: 1.0, 2: 2.0}


def psnr(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the images are identical.

    Raises:
        DimensionMismatchError: If the images differ in shape
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"cannot compare images of shapes {a.shape} and {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(data_range**2 / mse))


def dssim(a: np.ndarray, b: np.ndarray, variant: Literal[1, 2] = 1) -> float:
    """``(1 - SSIM) / 2`` clamped to [0, 1].

    Variant 1 computes SSIM with data range 1.0, variant 2 with 2.0.

    Raises:
        InvalidParameterError: On an unknown variant or an image under 11x11 px
        DimensionMismatchError: If the images differ in shape
    """
    if variant not in DSSIM_RANGES:
        raise InvalidParameterError(f"DSSIM variant must be 1 or 2, got {variant}")
    value, _ = ssim(a, b, data_range=DSSIM_RANGES[variant])
    return float(np.clip((1.0 - value) / 2.0, 0.0, 1.0))
