"""scikit-learn style wrappers around the halting-time and gap-law machinery.

Inputs are stacks of square matrices with shape ``(n_samples, N, N)`` rather
than feature tables; outputs are column arrays, so the objects compose with
``Pipeline`` and ``clone`` but are not general-purpose feature transformers.
"""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .algorithms import ALGORITHMS, default_cap, epsilon_from_alpha, run_inverse_power, run_power, run_qr_halting
from .ensembles import RngStream, sample_unit_vector
from .limit_law import RescaleConvention, ecdf, halting_scale, ks_distance, zeta_from_gaps
from .linalg import hermitian_eig
from .spectral import (
    DegenerateSpectrumError,
    coefficients_for_projection,
    coefficients_for_qr,
    error_function,
    halting_time_continuous,
)

__all__ = ["HaltingTimeTransformer", "HaltingTimeRescaler", "GapLawReference"]


def _check_matrices(X) -> np.ndarray:
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=None, ensure_min_samples=1)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1] != X.shape[2]:
        raise ValueError(f"expected matrices of shape (n_samples, N, N), got {X.shape}")
    if X.shape[1] < 2:
        raise ValueError("matrices must be at least 2 x 2")
    return X


class HaltingTimeTransformer(TransformerMixin, BaseEstimator):
    """Map each matrix to the halting time of one algorithm.

    Parameters
    ----------
    algorithm : {"QR", "P", "IP"}
    alpha : float
        Accuracy exponent, ``epsilon = N^(-alpha/2)``.
    method : {"spectral", "iterative"}
        ``"spectral"`` reports ``ceil(T)`` from the closed-form error; ``"iterative"``
        runs the algorithm.
    random_state : int
        Seed for the start vectors of the power methods; matrix ``i`` uses stream ``i``.
    cap : int or None
        Iteration cap, default :func:`~halting_lab.algorithms.default_cap`.

    Capped or degenerate samples are reported as ``nan``.
    """

    def __init__(self, algorithm="QR", alpha=6.0, method="spectral", random_state=0, cap=None):
        self.algorithm = algorithm
        self.alpha = alpha
        self.method = method
        self.random_state = random_state
        self.cap = cap

    def _check_params(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.method not in ("spectral", "iterative"):
            raise ValueError("method must be 'spectral' or 'iterative'")

    def fit(self, X, y=None):
        self._check_params()
        X = _check_matrices(X)
        self.n_features_in_ = X.shape[1]
        return self

    def _start_vector(self, N, beta, i):
        return sample_unit_vector(N, beta, RngStream(int(self.random_state), i).generator())

    def _one(self, H, i) -> float:
        N = H.shape[0]
        eps = epsilon_from_alpha(N, self.alpha)
        cap = self.cap if self.cap is not None else default_cap(N, self.alpha)
        beta = 2 if np.iscomplexobj(H) else 1
        v = None if self.algorithm == "QR" else self._start_vector(N, beta, i)
        if self.method == "iterative":
            if self.algorithm == "QR":
                rec = run_qr_halting(H, eps, cap, alpha=self.alpha)
            elif self.algorithm == "P":
                rec = run_power(H, v, eps, cap, alpha=self.alpha)
            else:
                rec = run_inverse_power(H, v, eps, cap, alpha=self.alpha)
            return math.nan if rec.capped else float(rec.tau)
        sd = hermitian_eig(H)
        c = coefficients_for_qr(sd) if v is None else coefficients_for_projection(sd, v)
        try:
            T = halting_time_continuous(error_function(self.algorithm, c), eps, cap)
        except DegenerateSpectrumError:
            return math.nan
        return float(math.ceil(T)) if math.isfinite(T) else math.nan

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = _check_matrices(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"fitted on N={self.n_features_in_}, got N={X.shape[1]}")
        return np.array([[self._one(H, i)] for i, H in enumerate(X)])


class HaltingTimeRescaler(HaltingTimeTransformer):
    """Halting times rescaled onto the gap-law axis, with the constant learned in ``fit``.

    ``fit`` estimates ``zeta_`` from the edge gaps of the training matrices;
    ``transform`` returns rescaled halting times. ``d`` is the aspect ratio used
    to build the matrices, needed because ``M`` cannot be read off ``H``.
    """

    def __init__(self, algorithm="QR", alpha=6.0, method="spectral", random_state=0, cap=None, d=0.5,
                 include_2pow=True, d_exponent=-0.5):
        super().__init__(algorithm, alpha, method, random_state, cap)
        self.d = d
        self.include_2pow = include_2pow
        self.d_exponent = d_exponent

    def fit(self, X, y=None):
        super().fit(X)
        X = _check_matrices(X)
        N = X.shape[1]
        self.d_N_ = N / math.floor(N / self.d + 1e-9)
        lam = np.array([np.linalg.eigvalsh(H) for H in X])
        gaps = lam[:, -1] - lam[:, -2] if self.algorithm == "P" else lam[:, 1] - lam[:, 0]
        z = zeta_from_gaps(self.algorithm, gaps, N, self.d_N_)
        self.zeta_, self.zeta_stderr_ = z.value, z.stderr
        conv = RescaleConvention(self.include_2pow, self.d_exponent)
        self.scale_ = halting_scale(self.algorithm, N, self.d_N_, epsilon_from_alpha(N, self.alpha), self.zeta_, conv)
        return self

    def transform(self, X):
        check_is_fitted(self, "scale_")
        return super().transform(X) / self.scale_


class GapLawReference(TransformerMixin, BaseEstimator):
    """Empirical reference law of rescaled samples.

    ``fit`` stores the reference sample, ``transform`` maps values through the
    reference CDF and ``score`` is ``1 - KS`` between new samples and the reference.
    """

    def fit(self, X, y=None):
        X = check_array(X, ensure_2d=False)
        self.reference_ = ecdf(X.ravel())
        self.n_features_in_ = 1
        return self

    def transform(self, X):
        check_is_fitted(self, "reference_")
        X = check_array(X, ensure_2d=False)
        return np.asarray(self.reference_.cdf(X.ravel()), dtype=float).reshape(-1, 1)

    def score(self, X, y=None) -> float:
        check_is_fitted(self, "reference_")
        X = check_array(X, ensure_2d=False)
        return 1.0 - ks_distance(X.ravel(), self.reference_)
