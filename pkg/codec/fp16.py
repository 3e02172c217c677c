"""IEEE 754 binary16 storage codes.

Rounding is NumPy's round-to-nearest-even cast. Values beyond the largest
finite half (65504) saturate instead of becoming infinite.
"""

from __future__ import annotations

import numpy as np
import structlog

from utils.errors import InvalidParameterError

logger = structlog.get_logger(__name__)

FP16_MAX = 65504.0


def encode_fp16(values: np.ndarray | float) -> tuple[np.ndarray, int]:
    """Convert to binary16 codes.

    Returns:
        Tuple of (uint16 codes with the input's shape, number of saturated values)

    Raises:
        InvalidParameterError: If any value is NaN
    """
    values = np.asarray(values, dtype=np.float64)
    nan = np.flatnonzero(np.isnan(values.reshape(-1)))
    if nan.size:
        raise InvalidParameterError("cannot store NaN as binary16", index=int(nan[0]))
    saturated = int(np.count_nonzero(np.abs(values) > FP16_MAX))
    codes = np.clip(values, -FP16_MAX, FP16_MAX).astype(np.float16).view(np.uint16)
    return codes, saturated


def to_fp16(values: np.ndarray | float) -> np.ndarray:
    """Binary16 codes of ``values``; saturation is logged as a warning."""
    codes, saturated = encode_fp16(values)
    if saturated:
        logger.warning("fp16_saturated", count=saturated, max_finite=FP16_MAX)
    return codes


def from_fp16(codes: np.ndarray | int) -> np.ndarray:
    """Float64 values of binary16 codes."""
    return np.asarray(codes, dtype=np.uint16).view(np.float16).astype(np.float64)


def round_fp16(values: np.ndarray) -> np.ndarray:
    """Nearest binary16 value of each element, as float64."""
    return from_fp16(to_fp16(values))
