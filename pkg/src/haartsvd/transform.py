"""Global t-SVD bases and the one-step Haar-tSVD collaborative filter.

A group is an array of ``ps x ps x c x K`` (optionally with leading batch
axes). The forward transform projects every patch onto the shared pair
``(U, V)`` slice-wise in the Fourier domain along the channel axis, then
applies the Haar transform along the group axis.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .patches import PatchGroup
from .tensor import fast_haar, hermitian_eig

MAGIC = b"HTSV"
VERSION = 1
_HEADER = struct.Struct("<4sHHH")


class CorruptBasesError(ValueError):
    """A bases file failed its magic, version, size or unitarity checks."""


class RefinerError(RuntimeError):
    """The mean-patch refiner raised or returned something unusable."""


@dataclass(frozen=True, eq=False)
class GlobalBases:
    """Per-Fourier-slice unitary ``ps x ps`` factors, arrays of shape ``(c, ps, ps)``."""

    u: np.ndarray
    v: np.ndarray
    _operator: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def ps(self) -> int:
        return self.u.shape[1]

    @property
    def c(self) -> int:
        return self.u.shape[0]

    def __eq__(self, other):
        if not isinstance(other, GlobalBases):
            return NotImplemented
        return np.array_equal(self.u, other.u) and np.array_equal(self.v, other.v)

    def validate(self, tol: float = 1e-10) -> None:
        u, v = self.u, self.v
        if u.ndim != 3 or u.shape[1] != u.shape[2] or u.shape != v.shape:
            raise ValueError(f"bad bases shapes {u.shape} / {v.shape}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValueError("bases contain non-finite values")
        eye = np.eye(self.ps)
        for name, b in (("u", u), ("v", v)):
            err = np.abs(np.conj(np.swapaxes(b, 1, 2)) @ b - eye).max()
            if err > tol:
                raise ValueError(f"{name} slices are not unitary (error {err:.2e})")
            c = self.c
            for j in range(c):
                if np.abs(b[j] - np.conj(b[(c - j) % c])).max() > tol:
                    raise ValueError(f"{name} slices are not conjugate-symmetric")

    def operator(self) -> np.ndarray:
        """Dense real matrix of the patch-level projection.

        Acts on patches flattened in ``(c, ps, ps)`` order; orthogonal.
        """
        if "T" not in self._operator:
            f = self.c * self.ps * self.ps
            basis = np.eye(f).reshape(f, self.c, self.ps, self.ps)
            self._operator["T"] = project(basis, self).reshape(f, f).T.copy()
        return self._operator["T"]


def _slices(b: np.ndarray) -> np.ndarray:
    return b[: b.shape[0] // 2 + 1]


def project(patches: np.ndarray, bases: GlobalBases) -> np.ndarray:
    """``U^T * P * V`` for patches laid out as ``(..., c, ps, ps)``."""
    c = bases.c
    x = np.fft.rfft(patches, axis=-3)
    uh = np.conj(np.swapaxes(_slices(bases.u), -1, -2))
    y = uh @ x @ _slices(bases.v)
    return np.fft.irfft(y, n=c, axis=-3)


def backproject(coeffs: np.ndarray, bases: GlobalBases) -> np.ndarray:
    """Inverse of :func:`project`: ``U * S * V^T``."""
    c = bases.c
    x = np.fft.rfft(coeffs, axis=-3)
    vh = np.conj(np.swapaxes(_slices(bases.v), -1, -2))
    y = _slices(bases.u) @ x @ vh
    return np.fft.irfft(y, n=c, axis=-3)


def learn_global_bases(patches, ps: int | None = None, c: int | None = None) -> GlobalBases:
    """Learn one ``(U, V)`` pair from a collection of ``ps x ps x c`` patches.

    Slice ``j`` of ``U`` (``V``) holds the eigenvectors of the summed row
    (column) correlation ``sum_i P_ij P_ij^H`` (``sum_i P_ij^H P_ij``) of the
    Fourier-domain slices, eigenvalues descending.
    """
    p = np.asarray(patches, dtype=float)
    if p.ndim == 3:
        p = p[..., None]
    if p.ndim != 4 or p.shape[1] != p.shape[2]:
        raise ValueError(f"expected (N, ps, ps, c) patches, got {p.shape}")
    n, ps_, _, c_ = p.shape
    if (ps is not None and ps != ps_) or (c is not None and c != c_):
        raise ValueError(f"patches are {ps_}x{ps_}x{c_}, expected {ps}x{ps}x{c}")
    if n < ps_:
        raise ValueError(f"need at least {ps_} patches to learn bases, got {n}")
    p_hat = np.fft.fft(p, axis=3)
    u = np.zeros((c_, ps_, ps_), dtype=complex)
    v = np.zeros((c_, ps_, ps_), dtype=complex)
    for j in range(c_ // 2 + 1):
        s = p_hat[..., j]
        if j == 0 or 2 * j == c_:
            s = s.real
        c_row = np.einsum("nab,ncb->ac", s, np.conj(s)) / n
        c_col = np.einsum("nba,nbc->ac", np.conj(s), s) / n
        u[j] = hermitian_eig(c_row)[1]
        v[j] = hermitian_eig(c_col)[1]
        if j == 0 or 2 * j == c_:
            u[j], v[j] = u[j].real, v[j].real
        else:
            u[c_ - j] = np.conj(u[j])
            v[c_ - j] = np.conj(v[j])
    return GlobalBases(u, v)


def save_bases(bases: GlobalBases, path) -> None:
    """Write ``bases`` in the ``HTSV`` binary format.

    Header: magic ``HTSV``, then little-endian u16 version, ps and c. Body:
    row-major little-endian float64 ``(re, im)`` pairs, all ``u`` slices then
    all ``v`` slices.
    """
    body = np.stack([np.stack([bases.u.real, bases.u.imag], -1), np.stack([bases.v.real, bases.v.imag], -1)])
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, bases.ps, bases.c))
        fh.write(body.astype("<f8").tobytes())


def load_bases(path) -> GlobalBases:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CorruptBasesError(f"{path}: file too short for an HTSV header")
    magic, version, ps, c = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CorruptBasesError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CorruptBasesError(f"{path}: unsupported version {version}")
    expected = 2 * c * ps * ps * 2 * 8
    if ps < 1 or c < 1 or len(raw) - _HEADER.size != expected:
        raise CorruptBasesError(f"{path}: expected {expected} payload bytes for ps={ps}, c={c}, got {len(raw) - _HEADER.size}")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(2, c, ps, ps, 2).astype(float)
    cplx = body[..., 0] + 1j * body[..., 1]
    bases = GlobalBases(cplx[0].copy(), cplx[1].copy())
    try:
        bases.validate()
    except ValueError as exc:
        raise CorruptBasesError(f"{path}: {exc}") from exc
    return bases


def compute_tau(sigma: float, c: int, K: int, ps: int) -> float:
    """Hard threshold ``sigma * sqrt(2 ln(c K ps^2))``."""
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    if min(c, K, ps) <= 0:
        raise ValueError("c, K and ps must be positive")
    return sigma * math.sqrt(2.0 * math.log(c * K * ps * ps))


def _group_array(g) -> np.ndarray:
    data = g.data if isinstance(g, PatchGroup) else g
    data = np.asarray(data, dtype=float)
    if data.ndim < 4:
        raise ValueError(f"group must be ps x ps x c x K, got shape {data.shape}")
    return data


def _check(data: np.ndarray, bases: GlobalBases) -> None:
    ps, ps2, c = data.shape[-4:-1]
    if ps != bases.ps or ps2 != bases.ps or c != bases.c:
        raise ValueError(f"group patches are {ps}x{ps2}x{c} but bases expect {bases.ps}x{bases.ps}x{bases.c}")


def _to_internal(data: np.ndarray) -> np.ndarray:
    # (..., ps, ps, c, K) -> (..., K, c, ps, ps)
    return np.moveaxis(data, (-4, -3, -2, -1), (-2, -1, -3, -4))


def _from_internal(data: np.ndarray) -> np.ndarray:
    return np.moveaxis(data, (-2, -1, -3, -4), (-4, -3, -2, -1))


def forward(g, bases: GlobalBases, haar: np.ndarray | None = None) -> np.ndarray:
    """Coefficients ``U^T * G * V x_4 H`` of a group, same layout as the group.

    ``haar`` may supply a dense Haar matrix; by default the butterfly form is
    used.
    """
    data = _group_array(g)
    _check(data, bases)
    y = project(_to_internal(data), bases)
    if haar is None:
        y = fast_haar(y, axis=-4)
    else:
        y = np.moveaxis(np.tensordot(haar, y, axes=([1], [-4])), 0, -4)
    return _from_internal(y)


def inverse(s, bases: GlobalBases, haar: np.ndarray | None = None) -> np.ndarray:
    """Group ``U * S * V^T x_4 H^T`` recovered from coefficients ``s``."""
    data = _group_array(s)
    _check(data, bases)
    y = _to_internal(data)
    if haar is None:
        y = fast_haar(y, inverse=True, axis=-4)
    else:
        y = np.moveaxis(np.tensordot(haar.T, y, axes=([1], [-4])), 0, -4)
    return _from_internal(backproject(y, bases))


def hard_threshold(s: np.ndarray, tau: float, keep_dc: bool = True) -> np.ndarray:
    """Zero every coefficient with ``|s| < tau``.

    With ``keep_dc`` the DC coefficient ``s[..., 0, 0, 0, 0]`` survives
    regardless of its magnitude.
    """
    if tau < 0:
        raise ValueError(f"tau must be nonnegative, got {tau}")
    s = np.asarray(s, dtype=float)
    out = np.where(np.abs(s) >= tau, s, 0.0)
    if keep_dc and s.ndim >= 4:
        out[..., 0, 0, 0, 0] = s[..., 0, 0, 0, 0]
    return out


def group_mean_patch(g) -> np.ndarray:
    """Mean ``ps x ps x c`` patch of a group.

    Scaled by ``sqrt(K)`` it equals the first Haar fiber of the group.
    """
    return _group_array(g).mean(axis=-1)


Refiner = Callable[[np.ndarray], np.ndarray]


def identity_refiner(mean_patch: np.ndarray) -> np.ndarray:
    return mean_patch


def refine_mean_patch(mean_patch: np.ndarray, refiner: Refiner = identity_refiner) -> np.ndarray:
    """Run ``refiner`` on a noisy mean patch, wrapping any failure in :class:`RefinerError`."""
    mean_patch = np.asarray(mean_patch, dtype=float)
    try:
        out = np.asarray(refiner(mean_patch), dtype=float)
    except Exception as exc:
        raise RefinerError(f"refiner failed: {exc}") from exc
    if out.shape != mean_patch.shape:
        raise RefinerError(f"refiner returned shape {out.shape}, expected {mean_patch.shape}")
    if not np.all(np.isfinite(out)):
        raise RefinerError("refiner returned non-finite values")
    return out


def substitute_mean(s: np.ndarray, mean_patch: np.ndarray, bases: GlobalBases) -> np.ndarray:
    """Replace the first Haar row of coefficients ``s`` by a given mean patch.

    All other Haar rows are left untouched.
    """
    s = np.array(s, dtype=float)
    k = s.shape[-1]
    mean_internal = np.moveaxis(np.asarray(mean_patch, dtype=float), -1, -3)
    s[..., 0] = np.moveaxis(project(math.sqrt(k) * mean_internal, bases), -3, -1)
    return s
