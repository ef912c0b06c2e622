"""Small dense third-order tensor algebra.

Mode-3 FFT, t-product, t-SVD, Haar matrices and circulant eigenvalues.
Tensors are plain numpy arrays of shape ``(n1, n2, n3)``; frontal slices
are ``a[:, :, j]``.
"""

from __future__ import annotations

import numpy as np


def _is_pow2(k: int) -> bool:
    return k >= 2 and (k & (k - 1)) == 0


def fft_mode3(a: np.ndarray) -> np.ndarray:
    """Unnormalized DFT of every tube ``a[i, j, :]``."""
    return np.fft.fft(np.asarray(a), axis=2)


def ifft_mode3(a_hat: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft_mode3` (scaled by ``1/n3``); complex output."""
    return np.fft.ifft(np.asarray(a_hat), axis=2)


def identity_tensor(n: int, n3: int) -> np.ndarray:
    e = np.zeros((n, n, n3))
    e[:, :, 0] = np.eye(n)
    return e


def ttranspose(a: np.ndarray) -> np.ndarray:
    """Tensor transpose: transpose each slice, reverse slices 2..n3."""
    a = np.asarray(a)
    out = np.conj(np.transpose(a, (1, 0, 2)))
    return np.concatenate([out[:, :, :1], out[:, :, :0:-1]], axis=2)


def tproduct(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """t-product ``a * b`` computed slice-wise in the Fourier domain.

    ``a`` is ``n1 x m x n3`` and ``b`` is ``m x n2 x n3``. The result is real
    when both inputs are real.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 3 or b.ndim != 3:
        raise ValueError("t-product needs third-order tensors")
    if a.shape[1] != b.shape[0] or a.shape[2] != b.shape[2]:
        raise ValueError(f"cannot t-multiply shapes {a.shape} and {b.shape}")
    a_hat = fft_mode3(a)
    b_hat = fft_mode3(b)
    c_hat = np.einsum("ikj,klj->ilj", a_hat, b_hat)
    c = ifft_mode3(c_hat)
    if np.isrealobj(a) and np.isrealobj(b):
        return c.real
    return c


def fix_phase(vectors: np.ndarray) -> np.ndarray:
    """Rotate each column so its largest-magnitude entry is real and positive."""
    vectors = np.array(vectors, dtype=complex)
    idx = np.argmax(np.abs(vectors), axis=0)
    pivot = vectors[idx, np.arange(vectors.shape[1])]
    mag = np.abs(pivot)
    phase = np.where(mag > 0, np.conj(pivot) / np.where(mag > 0, mag, 1), 1)
    return vectors * phase


def hermitian_eig(a: np.ndarray, tol: float = 1e-15, max_sweeps: int = 60):
    """Eigen-decomposition of a small Hermitian matrix by cyclic Jacobi.

    Returns ``(w, v)`` with eigenvalues ``w`` in descending order and unitary
    ``v`` whose columns follow the phase convention of :func:`fix_phase`.
    """
    a = np.array(a, dtype=complex)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError("matrix must be square")
    a = 0.5 * (a + a.conj().T)
    v = np.eye(n, dtype=complex)
    scale = np.linalg.norm(a)
    if scale == 0:
        return np.zeros(n), v
    offdiag = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a[offdiag])
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                r = abs(apq)
                if r <= 1e-300:
                    continue
                w = apq / r
                zeta = (a[q, q].real - a[p, p].real) / (2.0 * r)
                t = (1.0 if zeta >= 0 else -1.0) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                # J = diag(1, conj(w)) @ [[c, s], [-s, c]]
                j = np.array([[c, s], [-s * np.conj(w), c * np.conj(w)]])
                cols = a[:, [p, q]] @ j
                a[:, p], a[:, q] = cols[:, 0], cols[:, 1]
                rows = j.conj().T @ a[[p, q], :]
                a[p, :], a[q, :] = rows[0], rows[1]
                a[p, q] = a[q, p] = 0.0
                vc = v[:, [p, q]] @ j
                v[:, p], v[:, q] = vc[:, 0], vc[:, 1]
    w = np.diag(a).real.copy()
    order = np.argsort(-w, kind="stable")
    return w[order], fix_phase(v[:, order])


def tsvd(a: np.ndarray):
    """t-SVD ``a = u * s * v^T``.

    Per Fourier slice ``j`` the factors satisfy ``A_j = U_j S_j V_j^H`` with
    descending nonnegative diagonal ``S_j``. Only slices ``0..n3//2`` are
    decomposed; the rest are their complex conjugates, so all three factors
    come back real for real input.
    """
    a = np.asarray(a, dtype=float)
    n1, n2, n3 = a.shape
    a_hat = fft_mode3(a)
    u_hat = np.zeros((n1, n1, n3), dtype=complex)
    s_hat = np.zeros((n1, n2, n3), dtype=complex)
    v_hat = np.zeros((n2, n2, n3), dtype=complex)
    k = min(n1, n2)
    for j in range(n3 // 2 + 1):
        aj = a_hat[:, :, j]
        if j == 0 or 2 * j == n3:
            aj = aj.real
        uj, sj, vhj = np.linalg.svd(aj)
        uj = uj.astype(complex)
        vj = vhj.conj().T.astype(complex)
        # phase convention on u, mirrored on v so that u s v^H is unchanged
        pivot = uj[np.argmax(np.abs(uj), axis=0), np.arange(n1)]
        ph = np.conj(pivot) / np.abs(pivot)
        uj = uj * ph
        vj[:, :k] = vj[:, :k] * ph[:k]
        if n2 > k:
            vj[:, k:] = fix_phase(vj[:, k:])
        u_hat[:, :, j] = uj
        v_hat[:, :, j] = vj
        s_hat[np.arange(k), np.arange(k), j] = sj
        if 0 < j and j != n3 - j:
            u_hat[:, :, n3 - j] = uj.conj()
            v_hat[:, :, n3 - j] = vj.conj()
            s_hat[np.arange(k), np.arange(k), n3 - j] = sj
    u = ifft_mode3(u_hat).real
    s = ifft_mode3(s_hat).real
    v = ifft_mode3(v_hat).real
    return u, s, v


def haar_matrix(k: int) -> np.ndarray:
    """Orthonormal ``k x k`` Haar matrix built by the Kronecker recursion.

    ``H_2k = [H_k (x) [1, 1]; I_k (x) [1, -1]] / sqrt(2)``.
    """
    if not isinstance(k, (int, np.integer)) or not _is_pow2(int(k)):
        raise ValueError(f"Haar order must be a power of 2 >= 2, got {k}")
    h = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2.0)
    n = 2
    while n < k:
        h = np.vstack([np.kron(h, [1.0, 1.0]), np.kron(np.eye(n), [1.0, -1.0])]) / np.sqrt(2.0)
        n *= 2
    # the recursion leaves last-bit error; pin the DC row to its exact value
    h[0] = 1.0 / np.sqrt(k)
    return h


def fast_haar(g: np.ndarray, inverse: bool = False, axis: int = -1) -> np.ndarray:
    """Apply :func:`haar_matrix` (or its transpose) along ``axis``.

    Butterfly form of the recursion; ``O(K)`` work per fiber.
    """
    # work on a contiguous copy with the transformed axis first
    out = np.array(np.moveaxis(np.asarray(g, dtype=float), axis, 0), order="C")
    k = out.shape[0]
    if not _is_pow2(k):
        raise ValueError(f"fiber length must be a power of 2 >= 2, got {k}")
    r = 1.0 / np.sqrt(2.0)
    if not inverse:
        n = k
        while n > 1:
            even, odd = out[0:n:2], out[1:n:2]
            s = (even + odd) * r
            d = (even - odd) * r
            out[: n // 2] = s
            out[n // 2 : n] = d
            n //= 2
    else:
        n = 2
        while n <= k:
            s = out[: n // 2].copy()
            d = out[n // 2 : n].copy()
            out[0:n:2] = (s + d) * r
            out[1:n:2] = (s - d) * r
            n *= 2
    return np.moveaxis(out, 0, axis)


def circulant_eigenvalues(first_row: np.ndarray) -> np.ndarray:
    """Eigenvalues of the circulant matrix with the given first row.

    Bin ``f`` pairs with the eigenvector ``exp(-2*pi*i*f*n/K) / sqrt(K)``;
    bin ``K/2`` is the alternating vector.
    """
    return np.fft.fft(np.asarray(first_row, dtype=float))
