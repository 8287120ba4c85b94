"""Bicubic upsampling baseline (Keys kernel, a = -0.5, half-pixel centers)."""

from __future__ import annotations

import numpy as np

from .errors import DataError


def _cubic(d: np.ndarray, a: float = -0.5) -> np.ndarray:
    d = np.abs(d)
    out = np.zeros_like(d)
    near = d <= 1.0
    far = (d > 1.0) & (d < 2.0)
    out[near] = (a + 2) * d[near] ** 3 - (a + 3) * d[near] ** 2 + 1
    out[far] = a * d[far] ** 3 - 5 * a * d[far] ** 2 + 8 * a * d[far] - 4 * a
    return out


def _axis_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic interpolation matrix; taps clamp at the borders."""
    w = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(int)
    frac = src - base
    for tap in (-1, 0, 1, 2):
        idx = np.clip(base + tap, 0, n_in - 1)
        wt = _cubic(frac - tap)
        np.add.at(w, (np.arange(n_out), idx), wt)
    return w


def bicubic_upsample(lr: np.ndarray, r: int) -> np.ndarray:
    """Separable bicubic x r upscale of a single-band image."""
    x = np.asarray(lr, dtype=np.float64)
    if x.ndim != 2:
        raise DataError(f"expected 2D image, got shape {x.shape}")
    if r < 1:
        raise DataError("scale factor must be >= 1")
    if r == 1:
        return x.copy()
    wy = _axis_matrix(x.shape[0], x.shape[0] * r)
    wx = _axis_matrix(x.shape[1], x.shape[1] * r)
    return wy @ x @ wx.T
