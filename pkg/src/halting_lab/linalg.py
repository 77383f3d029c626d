"""Dense linear algebra kernels used by the algorithms and the samplers.

QR, Hermitian eigendecomposition and Cholesky are thin wrappers over LAPACK
(via numpy/scipy) that enforce the conventions the rest of the package relies
on. The tridiagonal extreme-eigenvalue solver is a batched Sturm-sequence
bisection written here so that many samples can be processed in one sweep.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .ensembles import EnsembleSpec, as_generator

__all__ = [
    "SingularMatrixError",
    "NotPositiveDefiniteError",
    "QRFactors",
    "SpectralData",
    "BidiagonalModel",
    "qr_factor",
    "hermitian_eig",
    "tridiag_extreme_eigs",
    "sturm_count",
    "CholeskyFactor",
    "cholesky_solve",
    "is_hermitian",
]


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a QR factorization meets a numerically singular matrix."""


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a Cholesky factorization meets a non-positive pivot."""


def is_hermitian(A, rtol: float = 1e-12) -> bool:
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        return False
    scale = np.max(np.abs(A)) if A.size else 0.0
    return bool(np.all(np.abs(A - A.conj().T) <= rtol * scale))


def _check_square(A) -> np.ndarray:
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    return A


@dataclass(frozen=True)
class QRFactors:
    Q: np.ndarray
    R: np.ndarray


def qr_factor(A) -> QRFactors:
    """Householder QR with the unique positive-diagonal convention.

    Returns ``Q`` unitary and ``R`` upper triangular with real, positive diagonal
    such that ``A = Q R``.
    """
    A = _check_square(A)
    Q, R = np.linalg.qr(A)
    diag = np.diagonal(R)
    mag = np.abs(diag)
    norm = np.max(np.abs(A)) if A.size else 0.0
    if mag.size and mag.min() <= 1e-13 * norm:
        raise SingularMatrixError("matrix is singular to working tolerance")
    phase = diag / mag
    Q = Q * phase
    R = phase.conj()[:, None] * R
    # the diagonal is real by construction; drop rounding in the imaginary part
    idx = np.arange(R.shape[0])
    R[idx, idx] = mag
    return QRFactors(Q, np.triu(R))


@dataclass(frozen=True)
class SpectralData:
    """Ascending eigenvalues and the matching orthonormal eigenvectors (columns)."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def N(self) -> int:
        return self.eigenvalues.shape[0]


def hermitian_eig(H, subset: tuple[int, int] | None = None, driver: str = "evd") -> SpectralData:
    """Eigen-decomposition of a Hermitian matrix, eigenvalues ascending.

    Both drivers reduce to tridiagonal form by Householder reflections. ``"evd"``
    then uses divide and conquer, ``"ev"`` implicit-shift QL/QR iteration with
    accumulated transforms (several times slower). ``subset=(lo, hi)`` restricts
    the computation to eigenpairs ``lo..hi`` (inclusive, zero-based).
    """
    H = _check_square(H)
    if not is_hermitian(H):
        raise ValueError("hermitian_eig requires a Hermitian matrix")
    if driver not in ("evd", "ev"):
        raise ValueError("driver must be 'evd' or 'ev'")
    if subset is not None:
        w, U = scipy.linalg.eigh(H, subset_by_index=list(subset), check_finite=False)
    elif driver == "evd":
        w, U = np.linalg.eigh(H)
    else:
        w, U = scipy.linalg.eigh(H, driver="ev", check_finite=False)
    return SpectralData(w, U)


def _as_batch(diag, offdiag):
    a = np.asarray(diag, dtype=float)
    b = np.asarray(offdiag, dtype=float)
    single = a.ndim == 1
    if single:
        a = a[None, :]
        b = b.reshape(1, -1)
    if b.shape != a.shape[:-1] + (a.shape[-1] - 1,):
        raise ValueError(f"offdiag shape {b.shape} incompatible with diag shape {a.shape}")
    return a, b, single


def sturm_count(diag, offdiag, x) -> np.ndarray:
    """Number of eigenvalues strictly below each shift ``x``.

    ``diag`` has shape ``(B, n)``, ``offdiag`` ``(B, n-1)`` and ``x`` ``(B, K)``;
    the result has the shape of ``x``.
    """
    a, b, _ = _as_batch(diag, offdiag)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    b2 = b * b
    scale = max(float(np.max(np.abs(a))) if a.size else 1.0, float(np.max(b2)) if b2.size else 0.0, 1e-300)
    pivmin = np.finfo(float).tiny * scale
    count = np.zeros(x.shape, dtype=np.int64)
    q = a[:, 0, None] - x
    for i in range(a.shape[1]):
        if i:
            q = (a[:, i, None] - x) - b2[:, i - 1, None] / q
        # a zero pivot is perturbed to the negative side, as in LAPACK's dstebz
        q = np.where(np.abs(q) < pivmin, -pivmin, q)
        count += q < 0
    return count


def tridiag_extreme_eigs(diag, offdiag, k: int, side: str = "smallest", rtol: float = 1e-12) -> np.ndarray:
    """``k`` extreme eigenvalues of symmetric tridiagonal matrices by bisection.

    Accepts a single matrix (1-D ``diag``) or a batch (2-D, one matrix per row).
    Results are ascending along the last axis. Absolute accuracy is
    ``rtol`` times the Gershgorin radius.
    """
    a, b, single = _as_batch(diag, offdiag)
    B, n = a.shape
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    if side not in ("smallest", "largest"):
        raise ValueError("side must be 'smallest' or 'largest'")
    ab = np.abs(b)
    rad = np.zeros_like(a)
    rad[:, :-1] += ab
    rad[:, 1:] += ab
    lo = np.min(a - rad, axis=1)
    hi = np.max(a + rad, axis=1)
    radius = np.maximum(np.abs(lo), np.abs(hi))
    radius = np.where(radius > 0, radius, 1.0)
    tol = rtol * radius
    lo = lo - tol
    hi = hi + tol

    # 0-based ascending index of each wanted eigenvalue
    idx = np.arange(k) if side == "smallest" else np.arange(n - k, n)
    low = np.repeat(lo[:, None], k, axis=1)
    high = np.repeat(hi[:, None], k, axis=1)
    steps = int(math.ceil(math.log2(np.max((hi - lo) / tol)))) + 1
    for _ in range(steps):
        mid = 0.5 * (low + high)
        below = sturm_count(a, b, mid)
        # eigenvalue idx lies below mid iff more than idx eigenvalues are below mid
        go_left = below > idx[None, :]
        high = np.where(go_left, mid, high)
        low = np.where(go_left, low, mid)
    out = 0.5 * (low + high)
    return out[0] if single else out


class CholeskyFactor:
    """Cached Cholesky factor of a Hermitian positive-definite matrix."""

    def __init__(self, H):
        H = _check_square(H)
        try:
            self._factor = scipy.linalg.cho_factor(H, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError(f"matrix is not positive definite: {exc}") from exc
        # LAPACK potrf accepts tiny positive pivots; treat rounding-level pivots as failure
        piv = np.abs(np.diagonal(self._factor[0])) ** 2
        if piv.min() <= 1e-14 * np.max(np.abs(H)):
            raise NotPositiveDefiniteError("matrix is not positive definite to working tolerance")

    def solve(self, b) -> np.ndarray:
        return scipy.linalg.cho_solve(self._factor, b, check_finite=False)


def cholesky_solve(H, b) -> np.ndarray:
    """Solve ``H x = b`` for Hermitian positive-definite ``H``."""
    return CholeskyFactor(H).solve(b)


@dataclass(frozen=True)
class BidiagonalModel:
    """Random lower-bidiagonal ``B`` whose ``B B^T / M`` matches the Gaussian SCM spectrum.

    Diagonal entries are ``chi_{beta (M - i + 1)} / sqrt(beta)`` and subdiagonal
    entries ``chi_{beta (N - i)} / sqrt(beta)`` for ``i = 1, 2, ...``; the
    eigenvalues of ``B B^T`` are then distributed as those of ``V^* V`` for a
    Gaussian ``M x N`` matrix ``V`` with ``E|V_ij|^2 = 1``.
    """

    diagonal: np.ndarray
    subdiagonal: np.ndarray
    M: int

    @classmethod
    def sample(cls, spec: EnsembleSpec, rng) -> "BidiagonalModel":
        if spec.entry_law != "gaussian":
            raise ValueError("the bidiagonal model exists only for Gaussian entries")
        gen = as_generator(rng)
        beta, N, M = spec.beta, spec.N, spec.M
        df_diag = beta * (M - np.arange(N))
        df_sub = beta * (N - 1 - np.arange(N - 1))
        diag = np.sqrt(gen.chisquare(df_diag) / beta)
        sub = np.sqrt(gen.chisquare(df_sub) / beta) if N > 1 else np.empty(0)
        return cls(diag, sub, M)

    def gram_tridiagonal(self) -> tuple[np.ndarray, np.ndarray]:
        """Diagonal and off-diagonal of ``B B^T / M``."""
        a, b = self.diagonal, self.subdiagonal
        d = a * a
        d[1:] += b * b
        return d / self.M, a[:-1] * b / self.M
