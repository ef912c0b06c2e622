"""PSNR and SSIM on the ``[0, 255]`` scale."""

from __future__ import annotations

import math

import numpy as np

from .patches import as_hwc

PEAK = 255.0


def _pair(a, b):
    a = as_hwc(a)
    b = as_hwc(b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """``10 log10(255^2 / MSE)``; ``inf`` for identical images."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(PEAK * PEAK / mse)


def _window_mean(x: np.ndarray, win: int) -> np.ndarray:
    s = np.pad(x, ((1, 0), (1, 0))).cumsum(0).cumsum(1)
    return (s[win:, win:] - s[:-win, win:] - s[win:, :-win] + s[:-win, :-win]) / (win * win)


def ssim(a: np.ndarray, b: np.ndarray, win: int = 8) -> float:
    """Mean SSIM over all ``win x win`` windows, averaged over channels.

    Uniform windows, population statistics, ``C1 = (0.01 L)^2`` and
    ``C2 = (0.03 L)^2`` with ``L = 255``.
    """
    a, b = _pair(a, b)
    if min(a.shape[:2]) < win:
        raise ValueError(f"images must be at least {win}x{win}")
    c1 = (0.01 * PEAK) ** 2
    c2 = (0.03 * PEAK) ** 2
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[:, :, ch], b[:, :, ch]
        mx, my = _window_mean(x, win), _window_mean(y, win)
        vx = _window_mean(x * x, win) - mx * mx
        vy = _window_mean(y * y, win) - my * my
        cxy = _window_mean(x * y, win) - mx * my
        s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        vals.append(s.mean())
    return float(np.mean(vals))
