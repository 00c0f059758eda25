"""Low-level affine quantization math on numpy arrays.

All rounding is round-half-to-even (np.rint). Intermediate arithmetic runs
in float64 so that the round-trip bound |x - dq(q(x))| <= scale/2 + 1 ulp
holds for every in-range element.
"""

from __future__ import annotations

import numpy as np

from .errors import ArgumentError
from .ir import DType, QuantParams


def compute_qparams(vmin: float, vmax: float, target_dtype: DType) -> QuantParams:
    """Derive scale/zero-point from an observed value range.

    U8 is asymmetric over [vmin, vmax] (range must include 0), I8 is
    symmetric over max(|vmin|, |vmax|). A degenerate all-zero range maps
    to scale 1 so downstream code never divides by zero.
    """
    if vmin > vmax:
        raise ArgumentError(f"min {vmin} > max {vmax}")
    if target_dtype is DType.U8:
        if vmin > 0 or vmax < 0:
            raise ArgumentError("U8 range must include zero")
        if vmin == vmax:  # both are 0 here
            return QuantParams(1.0, 0, DType.U8)
        scale = (vmax - vmin) / 255.0
        zp = int(np.rint(-vmin / scale))
        zp = max(0, min(255, zp))
        return QuantParams(scale, zp, DType.U8)
    if target_dtype is DType.I8:
        amax = max(abs(vmin), abs(vmax))
        if amax == 0:
            return QuantParams(1.0, 0, DType.I8)
        return QuantParams(amax / 127.0, 0, DType.I8)
    raise ArgumentError(f"unsupported quantization target {target_dtype}")


def quantize_array(x: np.ndarray, p: QuantParams) -> np.ndarray:
    """q = clamp(round_half_even(x / scale) + zero_point)."""
    lo, hi = p.target_dtype.int_range
    q = np.rint(x.astype(np.float64) / p.scale) + p.zero_point
    return np.clip(q, lo, hi).astype(p.target_dtype.np_dtype)


def dequantize_array(q: np.ndarray, p: QuantParams) -> np.ndarray:
    """x_hat = (q - zero_point) * scale, returned as F32."""
    return ((q.astype(np.float64) - p.zero_point) * p.scale).astype(np.float32)


def fake_quant(x: np.ndarray, p: QuantParams) -> np.ndarray:
    """Snap F32 values onto the integer grid, keeping F32 dtype."""
    return dequantize_array(quantize_array(x, p), p)


def weight_qparams(w: np.ndarray) -> QuantParams:
    """Symmetric I8 parameters for a weight tensor."""
    if w.size == 0:
        return QuantParams(1.0, 0, DType.I8)
    return compute_qparams(float(w.min()), float(w.max()), DType.I8)


def per_sample_qparams(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Runtime U8 parameters per batch element, range widened to include 0.

    Returns (scale, zero_point) arrays of shape (batch,). Computing the
    range per sample rather than per chunk keeps execution results
    independent of how a batch is split into chunks.
    """
    flat = x.reshape(x.shape[0], -1).astype(np.float64)
    vmin = np.minimum(flat.min(axis=1), 0.0)
    vmax = np.maximum(flat.max(axis=1), 0.0)
    span = vmax - vmin
    degenerate = span == 0.0
    scale = np.where(degenerate, 1.0, span / 255.0)
    zp = np.clip(np.rint(np.where(degenerate, 0.0, -vmin) / scale), 0, 255)
    return scale, zp


def quantize_per_sample(x: np.ndarray, scale: np.ndarray, zp: np.ndarray) -> np.ndarray:
    """Quantize each batch element with its own U8 parameters."""
    bshape = (x.shape[0],) + (1,) * (x.ndim - 1)
    q = np.rint(x.astype(np.float64) / scale.reshape(bshape)) + zp.reshape(bshape)
    return np.clip(q, 0, 255).astype(np.uint8)
