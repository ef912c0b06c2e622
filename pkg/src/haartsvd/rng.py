"""Reproducible Gaussian noise.

The stream is Philox4x64-10 keyed by the seed with the counter starting at
zero (``numpy.random.Philox(key=seed)``). Each raw 64-bit word ``x`` becomes
``u = ((x >> 11) + 0.5) / 2**53`` in ``(0, 1)``; consecutive pairs
``(u1, u2)`` give two normals by Box-Muller,
``sqrt(-2 ln u1) * (cos(2 pi u2), sin(2 pi u2))``. Normals fill the image in
C order ``(row, col, channel)``. Any Philox implementation reproduces it.
"""

from __future__ import annotations

import numpy as np


def standard_normals(shape, seed: int) -> np.ndarray:
    n = int(np.prod(shape))
    pairs = (n + 1) // 2
    raw = np.random.Philox(key=int(seed)).random_raw(2 * pairs)
    u = ((raw >> np.uint64(11)).astype(float) + 0.5) * 2.0**-53
    u1, u2 = u[0::2], u[1::2]
    rad = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * pairs)
    z[0::2] = rad * np.cos(2.0 * np.pi * u2)
    z[1::2] = rad * np.sin(2.0 * np.pi * u2)
    return z[:n].reshape(shape)


def add_awgn(image: np.ndarray, sigma, seed: int, clip: bool = False) -> np.ndarray:
    """Add white Gaussian noise; ``sigma`` is a scalar or one value per channel."""
    img = np.asarray(image, dtype=float)
    sig = np.atleast_1d(np.asarray(sigma, dtype=float))
    if np.any(sig < 0):
        raise ValueError("sigma must be nonnegative")
    channels = 1 if img.ndim == 2 else img.shape[2]
    if sig.size not in (1, channels):
        raise ValueError(f"got {sig.size} sigma values for {channels} channels")
    noise = standard_normals(img.shape, seed)
    if img.ndim == 3:
        noise = noise * sig
    else:
        noise = noise * sig[0]
    out = img + noise
    return np.clip(out, 0.0, 255.0) if clip else out
