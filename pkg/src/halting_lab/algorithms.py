"""Unshifted QR, power and inverse power iterations with halting detection.

Iteration indices follow the discrete halting times: ``j = 0`` is the input
matrix for QR, and the first Rayleigh-type value (after one multiply or solve)
for the power methods.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import CholeskyFactor, qr_factor

__all__ = [
    "ALGORITHMS",
    "HaltingRecord",
    "DeflationRecord",
    "default_cap",
    "epsilon_from_alpha",
    "qr_iterate",
    "last_row_error",
    "run_qr_halting",
    "run_power",
    "run_inverse_power",
    "block_norms",
    "deflation_times",
]

ALGORITHMS = ("QR", "P", "IP")


def epsilon_from_alpha(N: int, alpha: float) -> float:
    return float(N) ** (-alpha / 2.0)


def default_cap(N: int, alpha: float) -> int:
    """About twenty times the typical halting scale ``N^(2/3) log N (alpha/2 - 2/3)``."""
    scale = N ** (2.0 / 3.0) * math.log(max(N, 2)) * max(alpha / 2.0 - 2.0 / 3.0, 0.1)
    return max(int(math.ceil(50.0 * scale)), 100)


@dataclass
class HaltingRecord:
    """Outcome of one halting-time measurement.

    ``tau`` is the integer halting time and ``estimate`` the eigenvalue
    approximation returned by the algorithm. ``true_error``, ``t_star`` and
    ``t_continuous`` are filled when spectral information is available.
    """

    algorithm: str
    epsilon: float
    alpha: float
    tau: int
    estimate: float
    true_error: float = math.nan
    t_star: float = math.nan
    t_continuous: float = math.nan
    capped: bool = False
    degenerate: bool = False

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.tau < 0:
            raise ValueError("tau must be non-negative")

    @property
    def usable(self) -> bool:
        return not (self.capped or self.degenerate)


@dataclass
class DeflationRecord:
    """Per-block deflation times of one QR run.

    ``times[k-1]`` is the first iterate at which the upper-right ``k x (N-k)``
    block has Frobenius norm at most epsilon, or ``-1`` when it was not
    reached before the run stopped.
    """

    times: np.ndarray
    capped: bool = False
    iterations: int = 0

    @property
    def N(self) -> int:
        return self.times.shape[0] + 1

    @property
    def t_def(self) -> int:
        hit = self.times[self.times >= 0]
        return int(hit.min()) if hit.size else -1

    @property
    def k_hat(self) -> int:
        t = self.t_def
        if t < 0:
            return -1
        return int(np.nonzero(self.times == t)[0].max()) + 1


def qr_iterate(X) -> np.ndarray:
    """One unshifted QR step ``X -> R Q``."""
    f = qr_factor(X)
    return f.R @ f.Q


def last_row_error(X) -> float:
    """Sum of squared moduli of the off-diagonal entries in the last row."""
    row = X[-1, :-1]
    return float(np.sum(row.real**2 + row.imag**2)) if np.iscomplexobj(row) else float(row @ row)


def run_qr_halting(H, epsilon: float, cap: int | None = None, *, alpha: float | None = None,
                   spectral=None, keep_iterates: bool = False):
    """Run unshifted QR until the last row's off-diagonal mass is at most ``epsilon**2``.

    Returns the :class:`HaltingRecord` and, with ``keep_iterates=True``, the list
    of iterates ``X_0, ..., X_tau``. Passing the matrix's ``SpectralData`` fills
    the true error against the smallest eigenvalue.
    """
    X = np.array(H, copy=True)
    N = X.shape[0]
    alpha = _alpha(N, epsilon) if alpha is None else alpha
    cap = default_cap(N, alpha) if cap is None else cap
    thresh = epsilon * epsilon
    iterates = [X] if keep_iterates else None
    j = 0
    capped = False
    while last_row_error(X) > thresh:
        if j >= cap:
            capped = True
            break
        X = qr_iterate(X)
        j += 1
        if keep_iterates:
            iterates.append(X)
    rec = HaltingRecord("QR", epsilon, alpha, j, float(X[-1, -1].real), capped=capped)
    if spectral is not None:
        rec.true_error = abs(rec.estimate - float(spectral.eigenvalues[0]))
        rec.degenerate = bool(abs(spectral.eigenvectors[-1, 0]) <= 1e-14)
    return (rec, iterates) if keep_iterates else rec


def _alpha(N: int, epsilon: float) -> float:
    return 2.0 * math.log(1.0 / epsilon) / math.log(N) if N > 1 else math.nan


def _rayleigh_run(apply, v, epsilon, cap):
    """Loop shared by the power methods; returns ``(tau, values, capped)``.

    ``values[j] = <v_j, apply(v_j)>`` with ``v_j`` the normalized iterate, so for the
    inverse method the values are inverse eigenvalue estimates.
    """
    thresh = epsilon * epsilon
    v_old = np.asarray(v)
    w = apply(v_old)
    values = [np.vdot(v_old, w).real]
    j = 0
    while True:
        v_old = w / np.linalg.norm(w)
        w = apply(v_old)
        values.append(np.vdot(v_old, w).real)
        if abs(values[-1] - values[-2]) <= thresh:
            return j, values, False
        j += 1
        if j >= cap:
            return j, values, True


def run_power(H, v, epsilon: float, cap: int | None = None, *, alpha: float | None = None,
              spectral=None) -> HaltingRecord:
    """Power method halted at the first ``j`` with ``|lambda_j - lambda_{j+1}| <= epsilon**2``.

    The returned estimate is ``lambda_{tau+1}``, the value the loop exits with.
    """
    H = np.asarray(H)
    N = H.shape[0]
    alpha = _alpha(N, epsilon) if alpha is None else alpha
    cap = default_cap(N, alpha) if cap is None else cap
    tau, values, capped = _rayleigh_run(lambda x: H @ x, v, epsilon, cap)
    rec = HaltingRecord("P", epsilon, alpha, tau, float(values[-1]), capped=capped)
    if spectral is not None:
        rec.true_error = abs(rec.estimate - float(spectral.eigenvalues[-1]))
        rec.degenerate = bool(abs(np.vdot(spectral.eigenvectors[:, -1], v)) <= 1e-14)
    return rec


def run_inverse_power(H, v, epsilon: float, cap: int | None = None, *, alpha: float | None = None,
                      spectral=None) -> HaltingRecord:
    """Inverse power method halted when consecutive inverse estimates differ by ``<= epsilon**2``.

    One Cholesky factor is computed and reused for every solve. The estimate
    is ``lambda_{tau+1}``, the value the loop exits with.
    """
    H = np.asarray(H)
    N = H.shape[0]
    alpha = _alpha(N, epsilon) if alpha is None else alpha
    cap = default_cap(N, alpha) if cap is None else cap
    chol = CholeskyFactor(H)
    tau, values, capped = _rayleigh_run(chol.solve, v, epsilon, cap)
    rec = HaltingRecord("IP", epsilon, alpha, tau, 1.0 / float(values[-1]), capped=capped)
    if spectral is not None:
        rec.true_error = abs(rec.estimate - float(spectral.eigenvalues[0]))
        rec.degenerate = bool(abs(np.vdot(spectral.eigenvectors[:, 0], v)) <= 1e-14)
    return rec


def block_norms(X) -> np.ndarray:
    """Squared Frobenius norms of the upper-right ``k x (N-k)`` blocks, ``k = 1..N-1``."""
    A = np.abs(X) ** 2
    # right[i, k] = sum_{j >= k} A[i, j]
    right = np.cumsum(A[:, ::-1], axis=1)[:, ::-1]
    # blocks[k] = sum_{i < k} right[i, k]
    acc = np.cumsum(right, axis=0)
    N = A.shape[0]
    k = np.arange(1, N)
    return acc[k - 1, k]


def deflation_times(H, epsilon: float, cap: int | None = None, *, stop_at_first: bool = False,
                    alpha: float | None = None) -> DeflationRecord:
    """First QR iterate at which each upper-right block drops to Frobenius norm ``<= epsilon``.

    With ``stop_at_first=True`` the run ends at the time of first deflation, which
    is all that ``t_def`` and ``k_hat`` need; later blocks stay at ``-1``.
    """
    X = np.array(H, copy=True)
    N = X.shape[0]
    if N < 2:
        raise ValueError("deflation needs N >= 2")
    alpha = _alpha(N, epsilon) if alpha is None else alpha
    cap = default_cap(N, alpha) if cap is None else cap
    thresh = epsilon * epsilon
    times = np.full(N - 1, -1, dtype=np.int64)
    n = 0
    while True:
        hit = (block_norms(X) <= thresh) & (times < 0)
        times[hit] = n
        if np.all(times >= 0) or (stop_at_first and np.any(times >= 0)):
            return DeflationRecord(times, capped=False, iterations=n)
        if n >= cap:
            return DeflationRecord(times, capped=True, iterations=n)
        X = qr_iterate(X)
        n += 1
