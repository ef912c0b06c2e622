"""Noise-level estimation and the eigenvalue-rank adjustment used by A-Haar-tSVD."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .patches import ConfigError, PatchGroup, as_hwc
from .tensor import circulant_eigenvalues

SIGMA_LEVELS = (1.25, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 80.0, 100.0, 120.0)

# median(|N(0, 1)|)
_MAD_SCALE = 0.6745


@dataclass(frozen=True)
class AdaptiveParams:
    beta: float = 1.2
    gamma_rank: int = 13
    samples_per_subimage: int = 8
    subimage_size: int = 128

    def __post_init__(self):
        if not self.beta >= 1.0:
            raise ConfigError(f"beta must be >= 1 so sigma is never increased, got {self.beta}")
        if self.gamma_rank < 1:
            raise ConfigError(f"gamma_rank must be >= 1, got {self.gamma_rank}")
        if self.samples_per_subimage < 1:
            raise ConfigError("samples_per_subimage must be >= 1")
        if self.subimage_size < 16:
            raise ConfigError(f"subimage_size must be >= 16, got {self.subimage_size}")


@dataclass(frozen=True)
class NoiseEstimate:
    sigma_est: float
    sigma_hat: float
    rank_a: int


def snap_sigma(value: float) -> float:
    """Nearest member of :data:`SIGMA_LEVELS` (ties go to the larger level)."""
    levels = np.asarray(SIGMA_LEVELS)
    dist = np.abs(levels - value)
    return float(levels[np.flatnonzero(dist == dist.min())[-1]])


def mad_sigma(subimage: np.ndarray) -> float:
    """Robust per-channel noise std from finest diagonal Haar details.

    The luminance plane is the channel mean; its estimate is scaled by
    ``sqrt(c)`` to report the noise level of a single channel.
    """
    img = as_hwc(subimage)
    h, w, c = img.shape
    if h < 16 or w < 16:
        raise ValueError(f"subimage must be at least 16x16, got {h}x{w}")
    lum = img.mean(axis=2)[: h - h % 2, : w - w % 2]
    hh = (lum[0::2, 0::2] - lum[0::2, 1::2] - lum[1::2, 0::2] + lum[1::2, 1::2]) / 2.0
    return float(np.median(np.abs(hh)) / _MAD_SCALE * np.sqrt(c))


def estimate_sigma(subimage: np.ndarray) -> float:
    """Default estimator: :func:`mad_sigma` snapped to the discrete sigma set."""
    return snap_sigma(mad_sigma(subimage))


def gram_first_row(g) -> np.ndarray:
    """First row of the Gram matrix of the group's circulant structure.

    Entry ``d`` is ``sum_m <p_m, p_{m+d}>`` (indices mod ``K``).
    """
    data = g.data if isinstance(g, PatchGroup) else np.asarray(g, dtype=float)
    k = data.shape[-1]
    x = data.reshape(-1, k)
    m = x.T @ x
    idx = np.arange(k)
    return np.array([m[idx, (idx + d) % k].sum() for d in range(k)])


def rank_of(values: np.ndarray, index: int, rtol: float = 1e-9) -> int:
    """1-based ascending rank of ``values[index]``; near-ties take the lowest rank."""
    values = np.asarray(values, dtype=float)
    tol = rtol * max(np.abs(values).max(), np.finfo(float).tiny)
    return int(np.count_nonzero(values < values[index] - tol)) + 1


def group_rank_a(g) -> int:
    """Ascending rank of the alternating-vector eigenvalue of the group Gram.

    A small rank means adjacent group members look alike; noise pushes it up.
    """
    data = g.data if isinstance(g, PatchGroup) else np.asarray(g, dtype=float)
    k = data.shape[-1]
    if k % 2:
        raise ValueError(f"group size must be even, got K={k}")
    eig = circulant_eigenvalues(gram_first_row(data)).real
    return rank_of(eig, k // 2)


def adjust_sigma(sigma_est: float, a: int, params: AdaptiveParams = AdaptiveParams()) -> float:
    if a < 1:
        raise ValueError(f"rank a must be >= 1, got {a}")
    return sigma_est / params.beta if a <= params.gamma_rank else sigma_est


def vote_sigma(adjusted) -> float:
    """Majority vote; ties resolve to the larger value."""
    adjusted = list(adjusted)
    if not adjusted:
        raise ValueError("cannot vote on an empty list")
    counts = Counter(float(x) for x in adjusted)
    return max(counts.items(), key=lambda kv: (kv[1], kv[0]))[0]


def sample_indices(n: int, k: int, seed: int, tile) -> np.ndarray:
    """Deterministic draw of ``min(n, k)`` distinct indices for one subimage.

    The stream depends only on ``seed`` and the tile coordinates, never on
    worker scheduling.
    """
    rng = np.random.default_rng([int(seed), int(tile[0]), int(tile[1])])
    return rng.choice(n, size=min(n, k), replace=False)


def load_sidecar(path) -> dict:
    """Read ``tile_row tile_col sigma`` lines into ``{(row, col): sigma}``.

    Values are snapped to the discrete sigma set. Blank lines and ``#``
    comments are ignored.
    """
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 'tile_row tile_col sigma'")
        try:
            row, col, sigma = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
        if sigma < 0 or not np.isfinite(sigma):
            raise ValueError(f"{path}:{lineno}: bad sigma {parts[2]}")
        out[(row, col)] = snap_sigma(sigma)
    return out
