"""Reference-patch grid, green-channel-prior block matching and aggregation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ConfigError(ValueError):
    """Invalid denoiser configuration."""


@dataclass(frozen=True)
class MatchConfig:
    ps: int = 8
    K: int = 32
    W: int = 18
    stride: int = 4
    gamma_gcp: float = 1.2

    def __post_init__(self):
        if self.ps < 2:
            raise ConfigError(f"ps must be >= 2, got {self.ps}")
        if self.K < 2 or self.K & (self.K - 1):
            raise ConfigError(f"K must be a power of 2, got {self.K}")
        if self.W < self.ps:
            raise ConfigError(f"search radius W={self.W} must be >= ps={self.ps}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if not self.gamma_gcp > 0:
            raise ConfigError(f"gamma_gcp must be positive, got {self.gamma_gcp}")


@dataclass
class PatchGroup:
    """``K`` matched patches stacked as a ``ps x ps x c x K`` array.

    ``members[i]`` is the (row, col) top-left corner of patch ``i``;
    ``members[0]`` is the reference patch.
    """

    data: np.ndarray
    members: np.ndarray
    distances: np.ndarray

    @property
    def K(self) -> int:
        return self.data.shape[-1]


def as_hwc(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=float)
    if image.ndim == 2:
        return image[:, :, None]
    if image.ndim != 3:
        raise ValueError(f"expected an H x W or H x W x c image, got shape {image.shape}")
    return image


def gcp_distance(pi: np.ndarray, pj: np.ndarray, gamma_gcp: float = 1.2) -> float:
    """Green-channel-prior distance between two ``ps x ps x c`` patches.

    For RGB patches the green channel is used when the reference patch ``pi``
    has a dominant enough green energy, otherwise the channel-mean patches are
    compared. Any other channel count falls back to the plain Euclidean
    distance.
    """
    pi = np.asarray(pi, dtype=float)
    pj = np.asarray(pj, dtype=float)
    if pi.shape != pj.shape:
        raise ValueError(f"patch shapes differ: {pi.shape} vs {pj.shape}")
    if pi.ndim != 3 or pi.shape[2] != 3:
        return float(np.linalg.norm(pi - pj))
    if _green_dominant(pi, gamma_gcp):
        return float(np.linalg.norm(pi[:, :, 1] - pj[:, :, 1]))
    # channel sums keep integer images exact; scale back to means afterwards
    return float(np.linalg.norm(pi.sum(axis=2) - pj.sum(axis=2))) / 3.0


def _green_dominant(p: np.ndarray, gamma: float) -> bool:
    # p is ps x ps x 3
    nr, ng, nb = (np.linalg.norm(p[:, :, i]) for i in range(3))
    return ng >= max(nr / gamma, nb / gamma)


def grid_positions(n: int, ps: int, stride: int) -> np.ndarray:
    """Reference coordinates along one axis, with a final position flush to the edge."""
    last = n - ps
    if last < 0:
        raise ValueError(f"image side {n} is smaller than the patch size {ps}")
    pos = list(range(0, last + 1, stride))
    if pos[-1] != last:
        pos.append(last)
    return np.asarray(pos, dtype=np.intp)


def reference_grid(shape, ps: int, stride: int) -> np.ndarray:
    """All reference corners, raster order, as an ``(N, 2)`` array."""
    rows = grid_positions(shape[0], ps, stride)
    cols = grid_positions(shape[1], ps, stride)
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return np.stack([rr.ravel(), cc.ravel()], axis=1)


class BlockMatcher:
    """Exhaustive windowed search on a fixed image.

    Patch views are built once; :meth:`match` is then a pure function of the
    reference position, so one matcher can serve many threads.
    """

    def __init__(self, image: np.ndarray, cfg: MatchConfig):
        img = as_hwc(image)
        self.cfg = cfg
        self.shape = img.shape
        ps = cfg.ps
        self.n_rows = img.shape[0] - ps + 1
        self.n_cols = img.shape[1] - ps + 1
        if self.n_rows < 1 or self.n_cols < 1:
            raise ValueError(f"image {img.shape[:2]} smaller than patch size {ps}")
        self.rgb = img.shape[2] == 3
        self._full = sliding_window_view(img, (ps, ps), axis=(0, 1))
        if self.rgb:
            self._green = sliding_window_view(np.ascontiguousarray(img[:, :, 1]), (ps, ps))
            # channel sums rather than means so 8-bit inputs tie exactly
            self._sum = sliding_window_view(img.sum(axis=2), (ps, ps))

    def _plane(self, r: int, c: int):
        if not self.rgb:
            return self._full, 1.0
        ref = np.transpose(self._full[r, c], (1, 2, 0))
        if _green_dominant(ref, self.cfg.gamma_gcp):
            return self._green, 1.0
        return self._sum, 1.0 / 3.0

    def match(self, r: int, c: int):
        """Return ``(members, distances)`` for the reference at ``(r, c)``."""
        cfg = self.cfg
        r0, r1 = max(0, r - cfg.W), min(self.n_rows, r + cfg.W + 1)
        c0, c1 = max(0, c - cfg.W), min(self.n_cols, c + cfg.W + 1)
        view, scale = self._plane(r, c)
        cand = view[r0:r1, c0:c1]
        diff = np.subtract(cand, view[r, c], order="C").reshape((r1 - r0) * (c1 - c0), -1)
        d2 = np.einsum("ij,ij->i", diff, diff)
        w = c1 - c0
        ref = (r - r0) * w + (c - c0)
        d2[ref] = -1.0
        order = _smallest_stable(d2, cfg.K)
        n = order.size
        if n < cfg.K:
            order = order[np.arange(cfg.K) % n]
        members = np.stack([r0 + order // w, c0 + order % w], axis=1)
        dist = np.sqrt(np.maximum(d2[order], 0.0)) * scale
        return members, dist


def _smallest_stable(d: np.ndarray, k: int) -> np.ndarray:
    # same as np.argsort(d, kind="stable")[:k], without sorting everything
    if d.size <= k:
        return np.argsort(d, kind="stable")
    kth = np.partition(d, k - 1)[k - 1]
    below = np.flatnonzero(d < kth)
    at = np.flatnonzero(d == kth)[: k - below.size]
    sel = np.concatenate([below, at])
    sel.sort()
    return sel[np.argsort(d[sel], kind="stable")]


def extract_patches(image: np.ndarray, members: np.ndarray, ps: int) -> np.ndarray:
    """Gather patches at ``members[..., (row, col)]`` as ``(..., c, ps, ps)``."""
    img = as_hwc(image)
    view = sliding_window_view(img, (ps, ps), axis=(0, 1))
    return view[members[..., 0], members[..., 1]]


def search_similar(image: np.ndarray, ref, cfg: MatchConfig, matcher: BlockMatcher | None = None) -> PatchGroup:
    """Build the group of the ``cfg.K`` patches closest to the reference at ``ref``.

    Candidates are every position within ``cfg.W`` pixels of the reference
    (clipped to the image). The reference is always member 0; ties go to the
    earlier raster position; short windows are padded by cycling the ranking.
    """
    r, c = int(ref[0]), int(ref[1])
    matcher = matcher or BlockMatcher(image, cfg)
    if not (0 <= r < matcher.n_rows and 0 <= c < matcher.n_cols):
        raise ValueError(f"reference {ref} does not fit a {cfg.ps}x{cfg.ps} patch inside the image")
    members, dist = matcher.match(r, c)
    patches = extract_patches(image, members, cfg.ps)
    return PatchGroup(np.transpose(patches, (2, 3, 1, 0)), members, dist)


class Accumulator:
    """Running patch sums and hit counts over a rectangular image region."""

    def __init__(self, origin, size, channels: int):
        self.origin = (int(origin[0]), int(origin[1]))
        self.size = (int(size[0]), int(size[1]))
        self.channels = channels
        self.sums = np.zeros(self.size + (channels,))
        self.counts = np.zeros(self.size)

    def add(self, members: np.ndarray, patches: np.ndarray) -> None:
        """Add ``patches`` (``(M, c, ps, ps)``) with corners ``members`` (``(M, 2)``)."""
        m, c, ps, _ = patches.shape
        h, w = self.size
        rows = members[:, 0] - self.origin[0]
        cols = members[:, 1] - self.origin[1]
        off = np.arange(ps)
        pix = (rows[:, None, None] + off[None, :, None]) * w + (cols[:, None, None] + off[None, None, :])
        idx = pix[:, None, :, :] * c + np.arange(c)[None, :, None, None]
        self.sums += np.bincount(idx.ravel(), weights=patches.ravel(), minlength=h * w * c).reshape(h, w, c)
        self.counts += np.bincount(pix.ravel(), minlength=h * w).reshape(h, w)

    def merge_into(self, sums: np.ndarray, counts: np.ndarray) -> None:
        r, c = self.origin
        h, w = self.size
        sums[r : r + h, c : c + w] += self.sums
        counts[r : r + h, c : c + w] += self.counts


def finish(sums: np.ndarray, counts: np.ndarray, fallback: np.ndarray | None) -> np.ndarray:
    covered = counts > 0
    out = np.zeros_like(sums) if fallback is None else as_hwc(fallback).copy()
    out[covered] = sums[covered] / counts[covered][:, None]
    return out


def aggregate(estimates, image_shape, fallback: np.ndarray | None = None) -> np.ndarray:
    """Average overlapping patch estimates back into an image.

    ``estimates`` is an iterable of ``(PatchGroup, data)`` pairs where ``data``
    has the group's ``ps x ps x c x K`` layout. Pixels no patch touches are
    copied from ``fallback`` (zeros when it is omitted). Output has
    ``image_shape``.
    """
    h, w = image_shape[:2]
    c = image_shape[2] if len(image_shape) == 3 else 1
    acc = Accumulator((0, 0), (h, w), c)
    for group, data in estimates:
        data = np.asarray(data, dtype=float)
        if data.ndim == 3:
            data = data[:, :, None, :]
        if not np.all(np.isfinite(data)):
            raise ValueError("patch estimates must be finite")
        acc.add(np.asarray(group.members), np.transpose(data, (3, 2, 0, 1)))
    out = finish(acc.sums, acc.counts, fallback)
    return out if len(image_shape) == 3 else out[:, :, 0]
