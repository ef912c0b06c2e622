"""End-to-end Haar-tSVD and A-Haar-tSVD denoising.

Work is split into square tiles of reference positions (``subimage_size``
pixels, the same grid used for adaptive noise estimation). Each tile matches,
filters and accumulates into its own buffer; buffers are merged in tile order,
so the result does not depend on the number of workers.
"""

from __future__ import annotations

import logging
import math
import multiprocessing as mp
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .noise import AdaptiveParams, NoiseEstimate, adjust_sigma, estimate_sigma, group_rank_a, sample_indices, vote_sigma
from .patches import Accumulator, BlockMatcher, ConfigError, MatchConfig, as_hwc, extract_patches, finish, reference_grid
from .tensor import fast_haar
from .transform import (
    GlobalBases,
    Refiner,
    RefinerError,
    compute_tau,
    identity_refiner,
    learn_global_bases,
    load_bases,
    refine_mean_patch,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DenoiseConfig:
    match: MatchConfig = field(default_factory=MatchConfig)
    adaptive: AdaptiveParams = field(default_factory=AdaptiveParams)
    # "learn", a path to an HTSV file, or a GlobalBases instance
    bases: object = "learn"
    threads: int | str = 1
    seed: int = 0
    refiner: Refiner = identity_refiner
    refine_above: float = 30.0

    def __post_init__(self):
        if not isinstance(self.match, MatchConfig) or not isinstance(self.adaptive, AdaptiveParams):
            raise ConfigError("match/adaptive must be MatchConfig/AdaptiveParams instances")
        if self.threads != "auto" and not (isinstance(self.threads, int) and self.threads >= 1):
            raise ConfigError(f"threads must be a positive integer or 'auto', got {self.threads!r}")
        if self.adaptive.gamma_rank > self.match.K:
            raise ConfigError(f"gamma_rank {self.adaptive.gamma_rank} exceeds K={self.match.K}")

    @property
    def workers(self) -> int:
        if self.threads == "auto":
            return os.cpu_count() or 1
        return int(self.threads)


@dataclass(frozen=True)
class SubimageEstimate:
    tile: tuple
    sigma_est: float
    sigma_hat: float
    samples: tuple = ()


@dataclass
class DenoiseResult:
    image: np.ndarray
    sigma_map: dict
    tiles: int
    estimates: dict = field(default_factory=dict)


def resolve_bases(image: np.ndarray, cfg: DenoiseConfig) -> GlobalBases:
    img = as_hwc(image)
    ps, c = cfg.match.ps, img.shape[2]
    src = cfg.bases
    if isinstance(src, GlobalBases):
        bases = src
    elif isinstance(src, str) and src == "learn":
        refs = reference_grid(img.shape, ps, cfg.match.stride)
        patches = extract_patches(img, refs, ps)
        return learn_global_bases(np.transpose(patches, (0, 2, 3, 1)))
    elif isinstance(src, (str, Path)):
        bases = load_bases(src)
    else:
        raise ConfigError(f"unsupported bases source {src!r}")
    if bases.ps != ps or bases.c != c:
        raise ConfigError(f"bases are for {bases.ps}x{bases.ps}x{bases.c} patches, image needs {ps}x{ps}x{c}")
    return bases


def tile_layout(shape, cfg: DenoiseConfig):
    """Map tile index -> ``(refs, subimage bounds)``.

    A reference belongs to the tile containing its top-left corner. The last
    tile row/column extends to the image edge.
    """
    h, w = shape[:2]
    t = cfg.adaptive.subimage_size
    ps = cfg.match.ps
    refs = reference_grid(shape, ps, cfg.match.stride)
    nr = math.ceil((h - ps + 1) / t)
    nc = math.ceil((w - ps + 1) / t)
    tiles = {}
    for i in range(nr):
        for j in range(nc):
            sel = (refs[:, 0] // t == i) & (refs[:, 1] // t == j)
            r0, c0 = i * t, j * t
            r1 = h if i == nr - 1 else (i + 1) * t
            c1 = w if j == nc - 1 else (j + 1) * t
            tiles[(i, j)] = (refs[sel], (r0, r1, c0, c1))
    return tiles


# Per-call state shared with forked workers; never mutated while a pool runs.
_STATE: dict = {}


def _filter_tile(tile):
    st = _STATE
    image, cfg, op = st["image"], st["cfg"], st["operator"]
    refs = st["tiles"][tile][0]
    sigma = st["sigma_map"][tile]
    mcfg = cfg.match
    ps, k = mcfg.ps, mcfg.K
    c = image.shape[2]
    matcher = st["matcher"]
    members = np.stack([matcher.match(int(r), int(q))[0] for r, q in refs])
    groups = extract_patches(image, members, ps)  # (M, K, c, ps, ps)
    m = groups.shape[0]
    flat = groups.reshape(m, k, -1)
    coef = flat @ op.T
    coef = fast_haar(coef, axis=1)
    if sigma > cfg.refine_above and cfg.refiner is not identity_refiner:
        coef = _apply_refiner(coef, flat, op, cfg.refiner, (c, ps))
    tau = compute_tau(sigma, c, k, ps)
    dc = coef[:, 0, 0].copy()
    coef[np.abs(coef) < tau] = 0.0
    coef[:, 0, 0] = dc
    coef = fast_haar(coef, inverse=True, axis=1)
    est = (coef @ op).reshape(m * k, c, ps, ps)
    pos = members.reshape(-1, 2)
    lo = pos.min(axis=0)
    hi = pos.max(axis=0) + ps
    acc = Accumulator(lo, hi - lo, c)
    acc.add(pos, est)
    return acc


def _apply_refiner(coef, flat, op, refiner, shape):
    c, ps = shape
    k = flat.shape[1]
    means = flat.mean(axis=1).reshape(-1, c, ps, ps)
    out = coef.copy()
    try:
        refined = np.stack([refine_mean_patch(np.transpose(p, (1, 2, 0)), refiner) for p in means])
    except RefinerError as exc:
        log.warning("%s; keeping the unrefined mean patches", exc)
        return coef
    refined = np.transpose(refined, (0, 3, 1, 2)).reshape(len(means), -1)
    out[:, 0, :] = math.sqrt(k) * (refined @ op.T)
    return out


def _run_tiles(tiles, workers: int):
    if workers <= 1 or len(tiles) <= 1:
        return [_filter_tile(t) for t in tiles]
    ctx = mp.get_context("fork")
    with ProcessPoolExecutor(max_workers=min(workers, len(tiles)), mp_context=ctx) as pool:
        return list(pool.map(_filter_tile, tiles))


def filter_with_sigma_map(image: np.ndarray, sigma_map: dict, cfg: DenoiseConfig, bases: GlobalBases | None = None) -> DenoiseResult:
    """One-step filtering with a noise level per tile."""
    global _STATE
    img = as_hwc(image)
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    tiles = tile_layout(img.shape, cfg)
    missing = set(tiles) - set(sigma_map)
    if missing:
        raise ValueError(f"no sigma for tiles {sorted(missing)}")
    if any(s < 0 for s in sigma_map.values()):
        raise ValueError("sigma must be nonnegative")
    bases = bases if bases is not None else resolve_bases(img, cfg)
    order = [t for t in sorted(tiles) if len(tiles[t][0])]
    _STATE = {
        "image": img,
        "cfg": cfg,
        "operator": bases.operator(),
        "tiles": tiles,
        "sigma_map": sigma_map,
        "matcher": BlockMatcher(img, cfg.match),
    }
    try:
        accs = _run_tiles(order, cfg.workers)
    finally:
        _STATE = {}
    sums = np.zeros(img.shape)
    counts = np.zeros(img.shape[:2])
    for acc in accs:
        acc.merge_into(sums, counts)
    out = np.clip(finish(sums, counts, img), 0.0, 255.0)
    if np.ndim(image) == 2:
        out = out[:, :, 0]
    return DenoiseResult(out, dict(sigma_map), len(order))


def denoise(image: np.ndarray, sigma: float, cfg: DenoiseConfig | None = None) -> np.ndarray:
    """Haar-tSVD with a single known noise level ``sigma`` (``[0, 255]`` scale).

    Returns an array of the input's shape clamped to ``[0, 255]``.
    """
    cfg = cfg or DenoiseConfig()
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    tiles = tile_layout(np.shape(image), cfg)
    return filter_with_sigma_map(image, {t: float(sigma) for t in tiles}, cfg).image


def estimate_noise_map(image, cfg: DenoiseConfig | None = None, estimator=estimate_sigma, overrides=None, adjust: bool = True) -> dict:
    """Per-subimage ``sigma_est`` and voted ``sigma_hat``.

    ``overrides`` maps tile index to an externally predicted sigma that
    replaces ``estimator``. With ``adjust=False`` the vote is skipped and
    ``sigma_hat == sigma_est``.
    """
    cfg = cfg or DenoiseConfig()
    img = as_hwc(image)
    overrides = overrides or {}
    tiles = tile_layout(img.shape, cfg)
    matcher = BlockMatcher(img, cfg.match)
    out = {}
    for tile, (refs, (r0, r1, c0, c1)) in sorted(tiles.items()):
        if tile in overrides:
            sigma_est = float(overrides[tile])
        else:
            # keep the estimator input at least 16 x 16
            sub = img[max(0, min(r0, r1 - 16)) : r1, max(0, min(c0, c1 - 16)) : c1]
            sigma_est = float(estimator(sub))
        if not adjust or len(refs) == 0:
            out[tile] = SubimageEstimate(tile, sigma_est, sigma_est)
            continue
        samples = []
        for i in sample_indices(len(refs), cfg.adaptive.samples_per_subimage, cfg.seed, tile):
            members, _ = matcher.match(int(refs[i, 0]), int(refs[i, 1]))
            group = extract_patches(img, members, cfg.match.ps)
            a = group_rank_a(np.moveaxis(group, 0, -1))
            samples.append(NoiseEstimate(sigma_est, adjust_sigma(sigma_est, a, cfg.adaptive), a))
        sigma_hat = vote_sigma(s.sigma_hat for s in samples)
        out[tile] = SubimageEstimate(tile, sigma_est, sigma_hat, tuple(samples))
    return out


def denoise_adaptive(image: np.ndarray, cfg: DenoiseConfig | None = None, estimator=estimate_sigma, overrides=None, adjust: bool = True, return_result: bool = False):
    """A-Haar-tSVD: estimate, adjust and vote a noise level per subimage, then filter.

    Matching is done once on the raw input. Each reference patch uses the
    level of the subimage holding its top-left corner.
    """
    cfg = cfg or DenoiseConfig()
    est = estimate_noise_map(image, cfg, estimator, overrides, adjust)
    res = filter_with_sigma_map(image, {t: e.sigma_hat for t, e in est.items()}, cfg)
    res.estimates = est
    return res if return_result else res.image
