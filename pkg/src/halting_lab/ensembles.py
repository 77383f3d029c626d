"""Seeded sampling of sample covariance matrices and Marchenko-Pastur quantities.

A sample covariance matrix (SCM) is ``H = V^* V / M`` where ``V`` is an
``M x N`` matrix of iid mean-zero, variance-one entries and ``M = floor(N/d)``.

=========== ====== ============ ==========================================
ensemble    beta   entry law    entry values
=========== ====== ============ ==========================================
LOE         1      gaussian     standard real normal
LUE         2      gaussian     ``(g1 + i g2) / sqrt(2)``
BE          1      bernoulli    ``+1, -1``
CBE         2      bernoulli    ``{a, -a, conj(a), -conj(a)}``, ``a = (1+i)/sqrt(2)``
=========== ====== ============ ==========================================
"""
from __future__ import annotations

import functools
import math
import zlib
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

__all__ = [
    "ENSEMBLES",
    "EnsembleSpec",
    "RngStream",
    "as_generator",
    "sample_entry_matrix",
    "build_scm",
    "sample_scm",
    "sample_unit_vector",
    "mp_edges",
    "mp_density",
    "mp_cdf",
    "mp_quantiles",
]

ENTRY_LAWS = ("gaussian", "bernoulli")

#: name -> (beta, entry_law)
ENSEMBLES = {
    "LOE": (1, "gaussian"),
    "LUE": (2, "gaussian"),
    "BE": (1, "bernoulli"),
    "CBE": (2, "bernoulli"),
}

_CBE_VALUES = np.array([1 + 1j, -1 - 1j, 1 - 1j, -1 + 1j]) / math.sqrt(2.0)


@dataclass(frozen=True)
class EnsembleSpec:
    """Parameters identifying an SCM distribution.

    Parameters
    ----------
    beta : int
        Dyson index, 1 (real) or 2 (complex).
    entry_law : str
        ``"gaussian"`` or ``"bernoulli"``.
    N : int
        Matrix dimension.
    d : float
        Target aspect ratio in (0, 1); the number of samples is ``M = floor(N/d)``.
    """

    beta: int
    entry_law: str
    N: int
    d: float

    def __post_init__(self):
        if self.beta not in (1, 2):
            raise ValueError(f"beta must be 1 or 2, got {self.beta!r}")
        if self.entry_law not in ENTRY_LAWS:
            raise ValueError(f"entry_law must be one of {ENTRY_LAWS}, got {self.entry_law!r}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N!r}")
        if not 0.0 < self.d < 1.0:
            raise ValueError(f"d must lie in (0, 1), got {self.d!r}")

    @classmethod
    def from_name(cls, name: str, N: int, d: float) -> "EnsembleSpec":
        try:
            beta, law = ENSEMBLES[name.upper()]
        except KeyError:
            raise ValueError(f"unknown ensemble {name!r}; expected one of {sorted(ENSEMBLES)}") from None
        return cls(beta, law, int(N), float(d))

    @property
    def name(self) -> str:
        for key, val in ENSEMBLES.items():
            if val == (self.beta, self.entry_law):
                return key
        raise AssertionError("unreachable")

    @property
    def M(self) -> int:
        # floor(N/d) with a guard against N/d landing a hair below an integer
        return int(math.floor(self.N / self.d + 1e-9))

    @property
    def d_N(self) -> float:
        return self.N / self.M

    @property
    def dtype(self):
        return np.float64 if self.beta == 1 else np.complex128

    def stream_key(self) -> int:
        """Stable 32-bit key separating the random streams of different ensembles."""
        return zlib.crc32(f"{self.name}:{self.N}:{self.d!r}".encode())


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream addressed by ``(master_seed, stream_index)``.

    Sample ``i`` of an experiment draws from ``RngStream(seed, i)`` so that it is a
    pure function of the seed and its index, independent of execution order.
    """

    master_seed: int
    stream_index: int = 0

    def __post_init__(self):
        if self.stream_index < 0:
            raise ValueError("stream_index must be non-negative")

    def generator(self, *subkeys: int) -> np.random.Generator:
        """Return a fresh Philox generator for this stream, optionally sub-keyed."""
        seq = np.random.SeedSequence(
            int(self.master_seed) & 0xFFFFFFFFFFFFFFFF,
            spawn_key=(int(self.stream_index),) + tuple(int(k) for k in subkeys),
        )
        return np.random.Generator(np.random.Philox(seq))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    return np.random.default_rng(rng)


def sample_entry_matrix(spec: EnsembleSpec, rng) -> np.ndarray:
    """Draw the ``M x N`` entry matrix ``V`` with iid entries per ``spec.entry_law``."""
    gen = as_generator(rng)
    shape = (spec.M, spec.N)
    if spec.entry_law == "gaussian":
        if spec.beta == 1:
            return gen.standard_normal(shape)
        g = gen.standard_normal((2,) + shape)
        return (g[0] + 1j * g[1]) / math.sqrt(2.0)
    if spec.beta == 1:
        return 2.0 * gen.integers(0, 2, size=shape).astype(np.float64) - 1.0
    return _CBE_VALUES[gen.integers(0, 4, size=shape)]


def build_scm(V: np.ndarray) -> np.ndarray:
    """Return ``H = V^* V / M`` for an ``M x N`` matrix with ``M >= N``."""
    V = np.asarray(V)
    if V.ndim != 2:
        raise ValueError(f"V must be two-dimensional, got shape {V.shape}")
    M, N = V.shape
    if M < N:
        raise ValueError(f"need M >= N, got M={M}, N={N}")
    H = V.conj().T @ V / M
    # exact hermitian symmetry; rounding in the product is not symmetric
    return 0.5 * (H + H.conj().T)


def sample_scm(spec: EnsembleSpec, rng) -> np.ndarray:
    return build_scm(sample_entry_matrix(spec, rng))


def sample_unit_vector(N: int, beta: int, rng, law: str = "gaussian") -> np.ndarray:
    """Uniformly oriented random unit vector ``Y / ||Y||``.

    ``law="gaussian"`` uses standard (real or complex) normal entries,
    ``law="rademacher"`` uses +-1 entries (real) or the CBE values (complex).
    """
    if N < 1:
        raise ValueError("N must be positive")
    if beta not in (1, 2):
        raise ValueError("beta must be 1 or 2")
    gen = as_generator(rng)
    while True:
        if law == "gaussian":
            if beta == 1:
                y = gen.standard_normal(N)
            else:
                g = gen.standard_normal((2, N))
                y = (g[0] + 1j * g[1]) / math.sqrt(2.0)
        elif law == "rademacher":
            if beta == 1:
                y = 2.0 * gen.integers(0, 2, size=N) - 1.0
            else:
                y = _CBE_VALUES[gen.integers(0, 4, size=N)]
        else:
            raise ValueError(f"unknown start-vector law {law!r}")
        norm = np.linalg.norm(y)
        if norm > 0.0:
            return y / norm


def _check_d(d: float) -> float:
    d = float(d)
    if not 0.0 < d < 1.0:
        raise ValueError(f"d must lie in (0, 1), got {d!r}")
    return d


def mp_edges(d: float) -> tuple[float, float]:
    """Support edges ``(1 -+ sqrt(d))**2`` of the Marchenko-Pastur law."""
    d = _check_d(d)
    r = math.sqrt(d)
    return (1.0 - r) ** 2, (1.0 + r) ** 2


def mp_density(x, d: float):
    """Marchenko-Pastur density with ratio ``d``; zero outside the support."""
    lo, hi = mp_edges(d)
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = np.clip((hi - x) * (x - lo), 0.0, None)
        out = np.sqrt(inner) / (2.0 * math.pi * d * x)
    out = np.where((x > lo) & (x < hi), out, 0.0)
    return out if out.ndim else float(out)


def _theta_integrand(theta: float, d: float, lo: float, hi: float) -> float:
    # x = lo + (hi-lo)(1-cos theta)/2 removes the square-root edge singularities
    half = 0.5 * (hi - lo)
    x = lo + half * (1.0 - math.cos(theta))
    return (half * math.sin(theta)) ** 2 / (2.0 * math.pi * d * x)


def mp_cdf(x: float, d: float) -> float:
    """Distribution function of the Marchenko-Pastur law."""
    lo, hi = mp_edges(d)
    if x <= lo:
        return 0.0
    if x >= hi:
        return 1.0
    theta = math.acos(1.0 - 2.0 * (x - lo) / (hi - lo))
    val, _ = integrate.quad(_theta_integrand, 0.0, theta, args=(d, lo, hi), epsabs=1e-14, epsrel=1e-13, limit=200)
    return min(max(val, 0.0), 1.0)


@functools.lru_cache(maxsize=64)
def _mp_quantiles_cached(N: int, d: float) -> tuple[float, ...]:
    lo, hi = mp_edges(d)
    out = []
    left = lo
    for n in range(1, N):
        target = n / N
        root, info = optimize.brentq(
            lambda t: mp_cdf(t, d) - target, left, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps,
            maxiter=200, full_output=True,
        )
        if not info.converged:
            raise RuntimeError(f"quantile solve failed for n={n}, N={N}, d={d}")
        out.append(root)
        left = root
    out.append(hi)
    return tuple(out)


def mp_quantiles(N: int, d: float) -> np.ndarray:
    """Classical locations ``gamma_n``: ``n/N`` of the mass lies left of ``gamma_n``."""
    if N < 1:
        raise ValueError("N must be positive")
    _check_d(d)
    return np.array(_mp_quantiles_cached(int(N), float(d)))
