"""Closed-form halting analysis from a single eigendecomposition.

With ``H = U diag(lambda) U^*`` and weights ``beta_n`` (last-row moduli of ``U``
for QR, projections ``|<v, u_n>|`` for the power methods) every iterate of the
three algorithms is an explicit function of ``t``. Everything here works with

    delta_n = lambda_1^2 / lambda_n^2,   Delta_n = lambda_n - lambda_1,
    nu_n = beta_n^2 / beta_1^2,

and the weights ``w_n(t) = delta_n^t nu_n = exp(t log delta_n + log nu_n)``
evaluated in the log domain, with the ``n = 1`` term (always 1) kept apart.
The power method is handled through the inverse spectrum ``1/lambda``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .linalg import SpectralData

__all__ = [
    "DegenerateSpectrumError",
    "SpectralCoefficients",
    "ConditionFlags",
    "coefficients_for_qr",
    "coefficients_for_projection",
    "e_qr",
    "e_ip",
    "e_p",
    "error_function",
    "lambda_ip",
    "lambda_p",
    "x_nn",
    "halting_time_continuous",
    "t_star_qr",
    "t_star_ip",
    "t_star_p",
    "t_star",
    "true_error",
    "check_conditions",
]


class DegenerateSpectrumError(ValueError):
    """The coefficients divide by zero: ``beta_1 = 0`` or ``lambda_2 = lambda_1``."""


@dataclass(frozen=True)
class SpectralCoefficients:
    """Eigenvalues (ascending, positive) and the matching weights ``beta_n >= 0``."""

    eigenvalues: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=float)
        beta = np.asarray(self.weights, dtype=float)
        if lam.ndim != 1 or lam.shape != beta.shape:
            raise ValueError("eigenvalues and weights must be 1-D arrays of equal length")
        if np.any(np.diff(lam) < 0):
            raise ValueError("eigenvalues must be ascending")
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "weights", beta)

    @property
    def N(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def degenerate(self) -> bool:
        return bool(self.weights[0] == 0.0)

    @property
    def log_delta(self) -> np.ndarray:
        lam = self.eigenvalues
        return 2.0 * (np.log(lam[0]) - np.log(lam))

    @property
    def delta(self) -> np.ndarray:
        return np.exp(self.log_delta)

    @property
    def Delta(self) -> np.ndarray:
        return self.eigenvalues - self.eigenvalues[0]

    @property
    def log_nu(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 2.0 * (np.log(self.weights) - np.log(self.weights[0]))

    @property
    def nu(self) -> np.ndarray:
        return np.exp(self.log_nu)

    def inverted(self) -> "SpectralCoefficients":
        """Coefficients of ``H^{-1}``: eigenvalues ``1/lambda`` re-sorted ascending."""
        return SpectralCoefficients(1.0 / self.eigenvalues[::-1], self.weights[::-1])

    def _require_regular(self):
        if self.degenerate:
            raise DegenerateSpectrumError("beta_1 = 0: the target eigenvector is not excited")
        if self.eigenvalues[0] <= 0:
            raise DegenerateSpectrumError("eigenvalues must be positive")

    def _weights(self, t, shift: float = 0.0) -> np.ndarray:
        """``delta_n^(t+shift) nu_n`` for ``n >= 2``; shape ``t.shape + (N-1,)``."""
        t = np.asarray(t, dtype=float)
        expo = (t[..., None] + shift) * self.log_delta[1:] + self.log_nu[1:]
        return np.exp(expo)


@dataclass(frozen=True)
class ConditionFlags:
    """Which of the structural conditions on the spectrum hold for one sample.

    ``rigidity`` holds the five sub-items whose conjunction is ``in_R``.
    """

    in_R: bool
    in_U: bool
    in_L: bool
    scaling_ok: bool
    rigidity: tuple[bool, bool, bool, bool, bool]


def coefficients_for_qr(spectral: SpectralData) -> SpectralCoefficients:
    """Weights ``beta_n = |U_Nn|`` from the last row of the eigenvector matrix."""
    return SpectralCoefficients(spectral.eigenvalues, np.abs(spectral.eigenvectors[-1, :]))


def coefficients_for_projection(spectral: SpectralData, v) -> SpectralCoefficients:
    """Weights ``beta_n = |<v, u_n>|`` for a unit start vector ``v``."""
    proj = spectral.eigenvectors.conj().T @ np.asarray(v)
    return SpectralCoefficients(spectral.eigenvalues, np.abs(proj))


def _split_scalar(t, parts):
    if np.ndim(t) == 0:
        return tuple(float(p) for p in parts)
    return parts


def e_qr(t, c: SpectralCoefficients):
    """QR last-row error ``E(t) = E0(t) + E1(t)``; returns ``(E0, E1, E)``.

    ``E0 = sum Delta_n^2 w_n / (1 + S)^2`` and ``E1 = S sum w_n (lambda_n - m)^2 / (1+S)^2``
    with ``S = sum w_n`` and ``m`` the ``w``-weighted mean eigenvalue, a
    cancellation-free form of the weighted-variance term.
    """
    c._require_regular()
    w = c._weights(t)
    lam = c.eigenvalues[1:]
    S = w.sum(axis=-1)
    denom = (1.0 + S) ** 2
    e0 = (w * c.Delta[1:] ** 2).sum(axis=-1) / denom
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(S > 0, (w * lam).sum(axis=-1) / np.where(S > 0, S, 1.0), 0.0)
    var = (w * (lam - mean[..., None]) ** 2).sum(axis=-1)
    e1 = S * var / denom
    return _split_scalar(t, (e0, e1, e0 + e1))


def e_ip(t, c: SpectralCoefficients):
    """Inverse power error ``lambda_IP^{-1}(t+1) - lambda_IP^{-1}(t)``; returns ``(E0, E1, E)``.

    ``E0 = sum (1 - delta_n)(1/lambda_1 - 1/lambda_n) w_n / (A B)`` and ``E1`` is
    ``S`` times the ``w``-weighted covariance of ``delta`` and ``1/lambda``, over
    ``A B`` where ``A = 1 + sum w_n(t)`` and ``B = 1 + sum w_n(t+1)``.
    """
    c._require_regular()
    w = c._weights(t)
    lam = c.eigenvalues
    delta = c.delta[1:]
    inv = 1.0 / lam[1:]
    S = w.sum(axis=-1)
    A = 1.0 + S
    B = 1.0 + (w * delta).sum(axis=-1)
    one_minus_delta = -np.expm1(c.log_delta[1:])
    inv_gap = c.Delta[1:] / (lam[0] * lam[1:])
    e0 = (w * one_minus_delta * inv_gap).sum(axis=-1) / (A * B)
    safe = np.where(S > 0, S, 1.0)
    m_delta = (w * delta).sum(axis=-1) / safe
    m_inv = (w * inv).sum(axis=-1) / safe
    cov = (w * (delta - m_delta[..., None]) * (inv - m_inv[..., None])).sum(axis=-1)
    e1 = S * cov / (A * B)
    return _split_scalar(t, (e0, e1, e0 + e1))


def e_p(t, c: SpectralCoefficients):
    """Power-method error ``lambda_P(t+1) - lambda_P(t)``, from the coefficients of ``H``.

    Evaluated as the inverse-power error of ``H^{-1}``.
    """
    return e_ip(t, c.inverted())


def lambda_ip(t, c: SpectralCoefficients):
    """Inverse power Rayleigh value ``sum lambda^{-2t} beta^2 / sum lambda^{-2t-1} beta^2``."""
    c._require_regular()
    num = 1.0 + c._weights(t).sum(axis=-1)
    den = 1.0 + c._weights(t, shift=0.5).sum(axis=-1)
    out = c.eigenvalues[0] * num / den
    return float(out) if np.ndim(out) == 0 else out


def lambda_p(t, c: SpectralCoefficients):
    """Power-method Rayleigh value ``sum lambda^{2t+1} beta^2 / sum lambda^{2t} beta^2``."""
    return 1.0 / lambda_ip(t, c.inverted())


def x_nn(t, c: SpectralCoefficients):
    """Bottom-right entry of the QR iterate ``X(t)``."""
    c._require_regular()
    w = c._weights(t)
    out = c.eigenvalues[0] + (w * c.Delta[1:]).sum(axis=-1) / (1.0 + w.sum(axis=-1))
    return float(out) if np.ndim(out) == 0 else out


def error_function(algorithm: str, c: SpectralCoefficients) -> Callable:
    """Vectorized ``t -> E_A(t)`` for ``algorithm`` in ``{"QR", "P", "IP"}``."""
    fn = {"QR": e_qr, "IP": e_ip, "P": e_p}[algorithm]
    return lambda t: fn(t, c)[2]


def halting_time_continuous(error_fn: Callable, epsilon: float, cap: float = 1e6, tol: float = 1e-6) -> float:
    """First ``t >= 0`` with ``error_fn(t) <= epsilon**2``; ``inf`` if none before ``cap``.

    Integers are scanned from 0 in vectorized chunks; the first integer meeting
    the threshold brackets the crossing, which is then refined by bisection to
    width ``tol``. The value returned is the right end of the final bracket.
    """
    thresh = epsilon * epsilon
    start, chunk = 0, 64
    while start <= cap:
        ts = np.arange(start, min(start + chunk, int(cap) + 1), dtype=float)
        vals = np.asarray(error_fn(ts))
        hit = np.nonzero(vals <= thresh)[0]
        if hit.size:
            j = int(ts[hit[0]])
            break
        start += chunk
        chunk = min(chunk * 2, 4096)
    else:
        return math.inf
    if j == 0:
        return 0.0
    lo, hi = j - 1.0, float(j)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if float(error_fn(np.array([mid]))[0]) <= thresh:
            hi = mid
        else:
            lo = mid
    return hi


def _gap_pieces(c: SpectralCoefficients):
    c._require_regular()
    if c.N < 2:
        raise DegenerateSpectrumError("need at least two eigenvalues")
    gap = c.Delta[1]
    if not gap > 0:
        raise DegenerateSpectrumError("lambda_2 = lambda_1")
    log_nu2 = c.log_nu[1]
    if not np.isfinite(log_nu2):
        raise DegenerateSpectrumError("beta_2 = 0")
    return gap, log_nu2, -c.log_delta[1]


def t_star_qr(c: SpectralCoefficients, alpha: float, N: int) -> float:
    """``(alpha log N + 2 log Delta_2 + log nu_2) / log(1/delta_2)``."""
    gap, log_nu2, log_inv_delta2 = _gap_pieces(c)
    return (alpha * math.log(N) + 2.0 * math.log(gap) + log_nu2) / log_inv_delta2


def t_star_ip(c: SpectralCoefficients, alpha: float, N: int) -> float:
    """Solves ``delta_2^T (1 - delta_2^(1/2))^2 (1/lambda_2 + 1/lambda_1) nu_2 = N^(-alpha)``."""
    gap, log_nu2, log_inv_delta2 = _gap_pieces(c)
    lam1, lam2 = c.eigenvalues[0], c.eigenvalues[1]
    # 1 - sqrt(delta_2) = (lambda_2 - lambda_1) / lambda_2 without cancellation
    log_one_minus_root = math.log(gap) - math.log(lam2)
    num = alpha * math.log(N) + 2.0 * log_one_minus_root + math.log(1.0 / lam2 + 1.0 / lam1) + log_nu2
    return num / log_inv_delta2


def t_star_p(c: SpectralCoefficients, alpha: float, N: int) -> float:
    """Power-method analogue of :func:`t_star_ip`, evaluated on ``H^{-1}``."""
    return t_star_ip(c.inverted(), alpha, N)


def t_star(algorithm: str, c: SpectralCoefficients, alpha: float, N: int) -> float:
    return {"QR": t_star_qr, "IP": t_star_ip, "P": t_star_p}[algorithm](c, alpha, N)


def true_error(algorithm: str, t, c: SpectralCoefficients):
    """Distance of the algorithm's eigenvalue estimate at time ``t`` from its target.

    QR and IP target ``lambda_1``; P targets ``lambda_N``.
    """
    if algorithm == "QR":
        c._require_regular()
        w = c._weights(t)
        out = (w * c.Delta[1:]).sum(axis=-1) / (1.0 + w.sum(axis=-1))
    elif algorithm == "IP":
        c._require_regular()
        w = c._weights(t, shift=0.5)
        out = (w * c.Delta[1:]).sum(axis=-1) / (1.0 + w.sum(axis=-1))
    elif algorithm == "P":
        ci = c.inverted()
        ci._require_regular()
        mu = ci.eigenvalues
        w = ci._weights(t)
        # lambda_N - lambda_n = (mu_n - mu_1) / (mu_1 mu_n)
        gaps = ci.Delta[1:] / (mu[0] * mu[1:])
        out = (w * gaps).sum(axis=-1) / (1.0 + w.sum(axis=-1))
    else:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    return float(out) if np.ndim(out) == 0 else out


def check_conditions(spectral: SpectralData, c_qr: SpectralCoefficients, quantiles, *, s: float = 0.05,
                     p: float = 0.1, sigma: float = 0.3, epsilon: float | None = None) -> ConditionFlags:
    """Evaluate the rigidity bundle, the two edge-gap conditions and the accuracy scaling.

    ``quantiles`` are the Marchenko-Pastur classical locations ``gamma_n`` for the
    sample's ``(N, d)``. ``epsilon=None`` skips the scaling check (reported False).
    """
    lam = np.asarray(spectral.eigenvalues, dtype=float)
    beta = c_qr.weights
    N = lam.shape[0]
    if N < 4:
        raise ValueError("condition checks need N >= 4")
    gamma = np.asarray(quantiles, dtype=float)
    lo_w, hi_w = N ** (-2.0 / 3.0 - s / 2.0), N ** (-2.0 / 3.0 + s / 2.0)

    deloc = bool(np.all(beta <= N ** (-0.5 + s / 2.0)))
    edge_idx = [0, 1, N - 2, N - 1]
    visible = bool(np.all(beta[edge_idx] >= N ** (-0.5 - s / 2.0)))
    upper_gaps = lam[N - 1] - lam[[N - 2, N - 3]]
    upper = bool(np.all((upper_gaps >= lo_w) & (upper_gaps <= hi_w)))
    lower_gaps = lam[[1, 2]] - lam[0]
    lower = bool(np.all((lower_gaps >= lo_w) & (lower_gaps <= hi_w)))
    n = np.arange(1, N + 1)
    window = hi_w * np.minimum(n, N - n + 1) ** (-1.0 / 3.0)
    rigid = bool(np.all(np.abs(lam - gamma) <= window))
    items = (deloc, visible, upper, lower, rigid)

    in_U = bool(lam[N - 3] / lam[N - 2] < (lam[N - 2] / lam[N - 1]) ** p)
    in_L = bool(lam[1] / lam[2] < (lam[0] / lam[1]) ** p)
    if epsilon is None:
        scaling_ok = False
    else:
        scaling_ok = bool(math.log(1.0 / epsilon) / math.log(N) >= 5.0 / 3.0 + sigma / 2.0)
    return ConditionFlags(all(items), in_U, in_L, scaling_ok, items)
