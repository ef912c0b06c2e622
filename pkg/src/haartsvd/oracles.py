"""Slow, explicit constructions used to check the fast paths in tests.

Nothing here imports the production modules. Keep shapes small: the group
circulant matrix has ``K * K * c * ps^2`` entries.
"""

from __future__ import annotations

import numpy as np


def naive_dft(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    n = x.shape[-1]
    out = np.zeros(x.shape, dtype=complex)
    for f in range(n):
        for t in range(n):
            out[..., f] += x[..., t] * np.exp(-2j * np.pi * f * t / n)
    return out


def dense_circulant(first_row: np.ndarray) -> np.ndarray:
    """``C[i, j] = first_row[(j - i) mod K]``."""
    r = np.asarray(first_row)
    k = r.size
    return np.array([[r[(j - i) % k] for j in range(k)] for i in range(k)])


def build_bcirc(p: np.ndarray) -> np.ndarray:
    """Block circulant matrix of a third-order tensor.

    Block ``(i, j)`` is frontal slice ``(i - j) mod n3``, so the first block
    row reads ``P1, Pn, ..., P2``.
    """
    p = np.asarray(p)
    n1, n2, n3 = p.shape
    out = np.zeros((n1 * n3, n2 * n3), dtype=p.dtype)
    for i in range(n3):
        for j in range(n3):
            out[i * n1 : (i + 1) * n1, j * n2 : (j + 1) * n2] = p[:, :, (i - j) % n3]
    return out


def unfold(b: np.ndarray) -> np.ndarray:
    """Stack frontal slices vertically (first block column of ``bcirc``)."""
    b = np.asarray(b)
    return np.concatenate([b[:, :, j] for j in range(b.shape[2])], axis=0)


def fold(m: np.ndarray, n3: int) -> np.ndarray:
    n1 = m.shape[0] // n3
    return np.stack([m[j * n1 : (j + 1) * n1] for j in range(n3)], axis=2)


def bcirc_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """t-product through explicit block circulant multiplication."""
    return fold(build_bcirc(a) @ unfold(b), a.shape[2])


def group_vectors(g: np.ndarray) -> np.ndarray:
    """``(K, F)`` matrix whose row ``i`` is patch ``i`` of a ``... x K`` group."""
    g = np.asarray(g, dtype=float)
    k = g.shape[-1]
    return np.stack([g[..., i].ravel() for i in range(k)])


def build_group_circ(g: np.ndarray) -> np.ndarray:
    """``K x (K F)`` matrix; row ``i`` holds patches ``i, i+1, ...`` cyclically."""
    p = group_vectors(g)
    k = p.shape[0]
    return np.stack([np.concatenate([p[(j + i) % k] for j in range(k)]) for i in range(k)])


def gram_evd(g: np.ndarray):
    """Dense symmetric EVD of ``circ(G) circ(G)^T``, eigenvalues ascending."""
    c = build_group_circ(g)
    return np.linalg.eigh(c @ c.T)


def alternating_eigenvalue(g: np.ndarray) -> float:
    p = group_vectors(g)
    signs = (-1.0) ** np.arange(1, p.shape[0] + 1)
    v = signs @ p
    return float(v @ v)


def dense_dc_eigenvalue(g: np.ndarray) -> float:
    v = group_vectors(g).sum(axis=0)
    return float(v @ v)


def group_pca(g: np.ndarray) -> np.ndarray:
    """Orthogonal ``K x K`` basis along the grouping axis (rows = components).

    Eigenvectors of the uncentred second-moment matrix ``X X^T / F`` of the
    vectorised patches, descending eigenvalues.
    """
    x = group_vectors(g)
    w, v = np.linalg.eigh(x @ x.T / x.shape[1])
    return v[:, ::-1].T


def dense_haar(k: int) -> np.ndarray:
    """Haar matrix written out from its closed form (scaled box functions)."""
    h = np.zeros((k, k))
    h[0] = 1.0 / np.sqrt(k)
    row = 1
    n = 1
    while n < k:
        width = k // n
        for m in range(n):
            h[row, m * width : m * width + width // 2] = 1.0
            h[row, m * width + width // 2 : (m + 1) * width] = -1.0
            h[row] /= np.sqrt(width)
            row += 1
        n *= 2
    return h


def dense_ttranspose(a: np.ndarray) -> np.ndarray:
    """Transpose every frontal slice and reverse the order of slices 2..n3."""
    a = np.asarray(a)
    n3 = a.shape[2]
    return np.stack([a[:, :, (-j) % n3].T for j in range(n3)], axis=2)


def spatial_factor(slices: np.ndarray) -> np.ndarray:
    """Real ``ps x ps x c`` tensor whose mode-3 DFT has the given ``(c, ps, ps)`` slices."""
    f = np.moveaxis(np.asarray(slices), 0, -1)
    n = f.shape[-1]
    k = np.arange(n)
    inv = np.exp(2j * np.pi * np.outer(k, k) / n) / n
    out = f @ inv.T
    return out.real


def bcirc_forward(group: np.ndarray, u_slices, v_slices, haar: np.ndarray) -> np.ndarray:
    """Coefficients of a ``ps x ps x c x K`` group via explicit bcirc products."""
    u = spatial_factor(u_slices)
    v = spatial_factor(v_slices)
    ut = dense_ttranspose(u)
    k = group.shape[-1]
    proj = np.stack([bcirc_product(bcirc_product(ut, group[..., i]), v) for i in range(k)], axis=-1)
    return np.einsum("ki,abci->abck", haar, proj)


def _grid(n: int, ps: int, stride: int) -> list:
    pos = list(range(0, n - ps + 1, stride))
    if pos[-1] != n - ps:
        pos.append(n - ps)
    return pos


def reference_denoise_gray(image, sigma, u, v, ps=8, K=32, W=18, stride=4):
    """Loop-based one-step filter for a 2-D image with real bases ``u``, ``v``.

    Written for clarity, not speed: exhaustive matching with an explicit sort
    key, dense Haar and per-pixel accumulation.
    """
    img = np.asarray(image, dtype=float)
    h, w = img.shape
    haar = dense_haar(K)
    tau = sigma * np.sqrt(2.0 * np.log(K * ps * ps))
    sums = np.zeros_like(img)
    counts = np.zeros_like(img)
    for r in _grid(h, ps, stride):
        for c in _grid(w, ps, stride):
            ref = img[r : r + ps, c : c + ps]
            cands = []
            for i in range(max(0, r - W), min(h - ps, r + W) + 1):
                for j in range(max(0, c - W), min(w - ps, c + W) + 1):
                    d = float(np.sum((img[i : i + ps, j : j + ps] - ref) ** 2))
                    cands.append((0 if (i, j) == (r, c) else 1, d, i, j))
            cands.sort()
            chosen = [(i, j) for _, _, i, j in cands[:K]]
            chosen = [chosen[m % len(chosen)] for m in range(K)]
            group = np.stack([u.T @ img[i : i + ps, j : j + ps] @ v for i, j in chosen])
            coef = np.tensordot(haar, group, axes=1)
            dc = coef[0, 0, 0]
            coef[np.abs(coef) < tau] = 0.0
            coef[0, 0, 0] = dc
            est = np.tensordot(haar.T, coef, axes=1)
            for (i, j), e in zip(chosen, est):
                sums[i : i + ps, j : j + ps] += u @ e @ v.T
                counts[i : i + ps, j : j + ps] += 1
    out = np.where(counts > 0, sums / np.maximum(counts, 1), img)
    return np.clip(out, 0.0, 255.0)
