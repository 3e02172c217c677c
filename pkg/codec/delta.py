"""Channel-wise wrapping delta coding and Morton ordering of 4D points."""

from __future__ import annotations

import numpy as np

from utils.errors import ArchiveFormatError, DimensionMismatchError

MORTON_BITS = 16


def delta_encode(codes: np.ndarray, stride: int) -> bytes:
    """Replace each u16 code by its difference from the code one row earlier (mod 2^16).

    ``codes`` is read as rows of ``stride`` channels; the first row is kept
    verbatim. Output is little-endian.

    Raises:
        DimensionMismatchError: If the length is not a multiple of ``stride``
    """
    codes = np.asarray(codes, dtype=np.uint16).reshape(-1)
    if stride < 1 or codes.size % stride:
        raise DimensionMismatchError(f"stream of {codes.size} codes is not a multiple of stride {stride}")
    rows = codes.reshape(-1, stride)
    deltas = rows.copy()
    deltas[1:] = rows[1:] - rows[:-1]  # uint16 arithmetic wraps
    return deltas.astype("<u2").tobytes()


def delta_decode(data: bytes, stride: int) -> np.ndarray:
    """Inverse of ``delta_encode``.

    Raises:
        ArchiveFormatError: If the byte length does not hold whole rows
    """
    if stride < 1 or len(data) % (2 * stride):
        raise ArchiveFormatError(f"{len(data)} bytes do not hold whole rows of {stride} u16 codes")
    deltas = np.frombuffer(data, dtype="<u2").astype(np.uint64).reshape(-1, stride)
    return (np.cumsum(deltas, axis=0) % 65536).astype(np.uint16).reshape(-1)


def quantize_axes(points: np.ndarray, bits: int = MORTON_BITS) -> np.ndarray:
    """Map each column linearly from its min..max onto integers 0..2^bits - 1."""
    points = np.asarray(points, dtype=np.float64)
    lo = points.min(axis=0)
    span = points.max(axis=0) - lo
    span = np.where(span > 0, span, 1.0)
    levels = (1 << bits) - 1
    return np.clip(np.round((points - lo) / span * levels), 0, levels).astype(np.uint64)


def morton_codes(points: np.ndarray, bits: int = MORTON_BITS) -> np.ndarray:
    """Interleave the quantized coordinates: bit b of axis a lands at 4*b + a."""
    points = np.atleast_2d(points)
    if points.shape[0] == 0:
        return np.zeros(0, dtype=np.uint64)
    quantized = quantize_axes(points, bits)
    dims = quantized.shape[1]
    codes = np.zeros(quantized.shape[0], dtype=np.uint64)
    for bit in range(bits):
        for axis in range(dims):
            codes |= ((quantized[:, axis] >> np.uint64(bit)) & np.uint64(1)) << np.uint64(dims * bit + axis)
    return codes


def morton_order(points: np.ndarray) -> np.ndarray:
    """Stable permutation sorting points along the Z-order curve."""
    return np.argsort(morton_codes(points), kind="stable")
