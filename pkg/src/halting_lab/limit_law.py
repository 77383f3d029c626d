"""Edge-gap sampling, rescaling onto the gap-law axis, and distribution statistics.

Halting times and reciprocal edge gaps are put on a common axis so that their
empirical laws can be compared by two-sample Kolmogorov-Smirnov distances. The
rescaling constants are collected in :class:`RescaleConvention`; changing the
convention multiplies every rescaled sample by one global constant, so KS
distances between samples rescaled under the same convention do not depend on it.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

from .ensembles import EnsembleSpec, RngStream, mp_edges, sample_scm
from .linalg import BidiagonalModel, hermitian_eig, tridiag_extreme_eigs

__all__ = [
    "EDGES",
    "GapSample",
    "RescaleConvention",
    "EmpiricalDistribution",
    "sample_gap",
    "sample_gaps",
    "edge_triples",
    "rescale_gap",
    "rescale_gaps",
    "ZetaEstimate",
    "zeta_offset",
    "zeta_from_gaps",
    "estimate_zeta",
    "halting_scale",
    "rescale_halting",
    "ecdf",
    "cdf_eval",
    "ks_distance",
    "ks_against_cdf",
    "half_normal_cdf",
    "rayleigh_cdf",
    "normalize_mean_var",
    "histogram",
]

EDGES = ("lower", "upper")

# which spectral edge drives each algorithm
_ALGORITHM_EDGE = {"QR": "lower", "IP": "lower", "P": "upper"}


@dataclass(frozen=True)
class GapSample:
    """The three eigenvalues nearest one edge of a sampled spectrum.

    ``eigenvalues`` is ascending. ``xi`` holds the edge fluctuations
    ``N^(2/3) |lambda - edge|`` ordered from the extreme eigenvalue inward.
    """

    N: int
    d_N: float
    edge: str
    eigenvalues: np.ndarray

    def __post_init__(self):
        if self.edge not in EDGES:
            raise ValueError(f"edge must be one of {EDGES}")
        lam = np.asarray(self.eigenvalues, dtype=float)
        if lam.shape != (3,) or np.any(np.diff(lam) < 0):
            raise ValueError("expected three ascending eigenvalues")
        object.__setattr__(self, "eigenvalues", lam)

    @property
    def edge_value(self) -> float:
        lo, hi = mp_edges(self.d_N)
        return lo if self.edge == "lower" else hi

    @property
    def xi(self) -> np.ndarray:
        scale = self.N ** (2.0 / 3.0)
        if self.edge == "lower":
            return scale * (self.eigenvalues - self.edge_value)
        return scale * (self.edge_value - self.eigenvalues[::-1])

    @property
    def gap(self) -> float:
        """``lambda_2 - lambda_1`` at the lower edge, ``lambda_N - lambda_{N-1}`` at the upper."""
        lam = self.eigenvalues
        return float(lam[1] - lam[0]) if self.edge == "lower" else float(lam[2] - lam[1])


@dataclass(frozen=True)
class RescaleConvention:
    """Constants of the rescaling ``c * edge^(...) * d^x * N^(2/3)``.

    Parameters
    ----------
    include_2pow : bool
        Multiply the scale by ``c = 2^(-7/6)``.
    d_exponent : float
        The exponent ``x`` of ``d``; ``-1/2`` or ``+1/2``.
    """

    include_2pow: bool = True
    d_exponent: float = -0.5

    def __post_init__(self):
        if self.d_exponent not in (-0.5, 0.5):
            raise ValueError("d_exponent must be -1/2 or +1/2")

    @property
    def constant(self) -> float:
        return 2.0 ** (-7.0 / 6.0) if self.include_2pow else 1.0

    def to_dict(self) -> dict:
        out = asdict(self)
        out["edge_exponent"] = {"QR": "lambda_minus^(1/3)", "IP": "lambda_minus^(1/3)", "P": "lambda_plus^(1/3)"}
        return out


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Immutable sorted sample set."""

    samples: np.ndarray

    def __post_init__(self):
        x = np.sort(np.asarray(self.samples, dtype=float).ravel())
        if x.size == 0:
            raise ValueError("empirical distribution needs at least one sample")
        if not np.all(np.isfinite(x)):
            raise ValueError("samples must be finite")
        x.flags.writeable = False
        object.__setattr__(self, "samples", x)

    def __len__(self) -> int:
        return self.samples.shape[0]

    def cdf(self, x):
        """Right-continuous step function ``#{samples <= x} / n``."""
        out = np.searchsorted(self.samples, x, side="right") / len(self)
        return float(out) if np.ndim(out) == 0 else out

    def quantiles(self, q=(0.25, 0.5, 0.75)) -> np.ndarray:
        return np.quantile(self.samples, q)

    def summary(self) -> dict:
        q1, q2, q3 = self.quantiles()
        return {
            "n": len(self),
            "mean": float(self.samples.mean()),
            "variance": float(self.samples.var(ddof=1)) if len(self) > 1 else 0.0,
            "q25": float(q1),
            "median": float(q2),
            "q75": float(q3),
        }


def ecdf(samples) -> EmpiricalDistribution:
    return samples if isinstance(samples, EmpiricalDistribution) else EmpiricalDistribution(samples)


def cdf_eval(E, x):
    return ecdf(E).cdf(x)


def ks_distance(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic ``sup |F_a - F_b|``."""
    a, b = ecdf(a), ecdf(b)
    # only the statistic is used; the p-value can divide by zero for tiny samples
    with np.errstate(divide="ignore", invalid="ignore"):
        return float(stats.ks_2samp(a.samples, b.samples, method="asymp").statistic)


def ks_against_cdf(a, cdf) -> float:
    """One-sample KS statistic of ``a`` against a continuous distribution function."""
    return float(stats.kstest(ecdf(a).samples, cdf, method="asymp").statistic)


def half_normal_cdf(x):
    """CDF of ``|G|`` for a real standard Gaussian ``G``."""
    return stats.halfnorm.cdf(x)


def rayleigh_cdf(x):
    """CDF ``1 - exp(-x^2)`` of ``|G|`` for a standard complex Gaussian ``G``."""
    x = np.asarray(x, dtype=float)
    return np.where(x > 0, -np.expm1(-np.square(x)), 0.0)


def normalize_mean_var(samples) -> np.ndarray:
    """Center to mean zero and scale to unit (unbiased) variance."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least two samples to normalize")
    sd = x.std(ddof=1)
    if not sd > 0:
        raise ValueError("samples have zero variance")
    return (x - x.mean()) / sd


def histogram(samples, bin_rule: str = "fd") -> tuple[np.ndarray, np.ndarray]:
    """Bin edges and counts; ``bin_rule`` is any rule accepted by ``numpy.histogram``."""
    counts, edges = np.histogram(np.asarray(samples, dtype=float), bins=bin_rule)
    return edges, counts


def _edge_indices(N: int, edge: str):
    if edge == "lower":
        return 0, 2
    if edge == "upper":
        return N - 3, N - 1
    raise ValueError(f"edge must be one of {EDGES}")


def sample_gap(spec: EnsembleSpec, edge: str, rng, fast: bool = False) -> GapSample:
    """Sample the three eigenvalues at one edge of an SCM spectrum.

    ``fast=True`` draws the spectrally equivalent bidiagonal model instead of the
    full matrix (Gaussian entries only).
    """
    if spec.N < 3:
        raise ValueError("gap sampling needs N >= 3")
    lo, hi = _edge_indices(spec.N, edge)
    if fast:
        d, e = BidiagonalModel.sample(spec, rng).gram_tridiagonal()
        lam = tridiag_extreme_eigs(d, e, 3, side="smallest" if edge == "lower" else "largest")
    else:
        lam = hermitian_eig(sample_scm(spec, rng), subset=(lo, hi)).eigenvalues
    return GapSample(spec.N, spec.d_N, edge, lam)


def edge_triples(spec: EnsembleSpec, num_samples: int, master_seed: int, *, fast: bool = False,
                 start_index: int = 0, batch: int = 500, edges=EDGES) -> dict[str, np.ndarray]:
    """Edge eigenvalue triples for samples ``start_index, ...``; arrays of shape ``(n, 3)`` keyed by edge.

    Sample ``i`` is drawn from ``RngStream(master_seed, i)`` with the ensemble's
    stream key, whichever path is used, so results do not depend on batching.
    """
    if spec.N < 3:
        raise ValueError("gap sampling needs N >= 3")
    key = spec.stream_key()
    gens = (RngStream(master_seed, start_index + i).generator(key) for i in range(num_samples))
    if any(e not in EDGES for e in edges):
        raise ValueError(f"edges must be drawn from {EDGES}")
    out = {e: np.empty((num_samples, 3)) for e in edges}
    if not fast:
        for i, gen in enumerate(gens):
            lam = hermitian_eig(sample_scm(spec, gen)).eigenvalues
            for e in edges:
                out[e][i] = lam[:3] if e == "lower" else lam[-3:]
        return out
    for s in range(0, num_samples, batch):
        models = [BidiagonalModel.sample(spec, next(gens)) for _ in range(min(batch, num_samples - s))]
        parts = [m.gram_tridiagonal() for m in models]
        d = np.stack([p[0] for p in parts])
        e = np.stack([p[1] for p in parts])
        for edge in edges:
            side = "smallest" if edge == "lower" else "largest"
            out[edge][s:s + len(models)] = tridiag_extreme_eigs(d, e, 3, side=side)
    return out


def sample_gaps(spec: EnsembleSpec, edge: str, num_samples: int, master_seed: int, *, fast: bool = False,
                start_index: int = 0) -> list[GapSample]:
    """``num_samples`` independent :class:`GapSample` objects at one edge."""
    triples = edge_triples(spec, num_samples, master_seed, fast=fast, start_index=start_index, edges=(edge,))[edge]
    return [GapSample(spec.N, spec.d_N, edge, t) for t in triples]


def _gap_scale(N: int, d_N: float, edge: str, conv: RescaleConvention) -> float:
    lo, hi = mp_edges(d_N)
    lam = lo if edge == "lower" else hi
    return conv.constant * N ** (2.0 / 3.0) * lam ** (-2.0 / 3.0) * d_N ** conv.d_exponent


def rescale_gap(g: GapSample, conv: RescaleConvention = RescaleConvention()) -> float:
    """``1 / (c N^(2/3) edge^(-2/3) d^x gap)``."""
    if not g.gap > 0:
        raise ValueError("zero gap cannot be rescaled")
    return 1.0 / (_gap_scale(g.N, g.d_N, g.edge, conv) * g.gap)


def rescale_gaps(gaps, N: int, d_N: float, edge: str, conv: RescaleConvention = RescaleConvention()) -> np.ndarray:
    """Vectorized :func:`rescale_gap` for an array of raw gaps."""
    gaps = np.asarray(gaps, dtype=float)
    if np.any(gaps <= 0):
        raise ValueError("zero gap cannot be rescaled")
    return 1.0 / (_gap_scale(N, d_N, edge, conv) * gaps)


@dataclass(frozen=True)
class ZetaEstimate:
    algorithm: str
    value: float
    stderr: float
    num_samples: int


def zeta_offset(algorithm: str, d_N: float) -> float:
    """Deterministic part of the constant: ``0`` for QR, edge and ``log 2`` terms for P and IP."""
    lo, hi = mp_edges(d_N)
    if algorithm == "QR":
        return 0.0
    if algorithm == "IP":
        return -1.5 * math.log(lo) + 0.5 * math.log(2.0)
    if algorithm == "P":
        return -0.5 * math.log(hi) + 0.5 * math.log(2.0)
    raise ValueError(f"unknown algorithm {algorithm!r}")


def zeta_from_gaps(algorithm: str, gaps, N: int, d_N: float) -> ZetaEstimate:
    """Monte Carlo mean of ``log(N^(2/3) gap)`` plus the algorithm's offset.

    ``gaps`` must be lower-edge gaps for QR and IP and upper-edge gaps for P.
    """
    g = np.asarray(gaps, dtype=float)
    if g.size < 2 or np.any(g <= 0):
        raise ValueError("need at least two positive gaps")
    logs = np.log(N ** (2.0 / 3.0) * g)
    se = float(logs.std(ddof=1) / math.sqrt(g.size))
    return ZetaEstimate(algorithm, float(logs.mean()) + zeta_offset(algorithm, d_N), se, int(g.size))


def estimate_zeta(algorithm: str, spec: EnsembleSpec, num_samples: int, master_seed: int, *,
                  fast: bool | None = None) -> ZetaEstimate:
    """Estimate the constant for ``algorithm`` from ``num_samples`` fresh spectra.

    The fast bidiagonal path is used by default for Gaussian ensembles.
    """
    if num_samples < 100:
        raise ValueError("num_samples must be at least 100")
    if fast is None:
        fast = spec.entry_law == "gaussian"
    edge = _ALGORITHM_EDGE[algorithm]
    t = edge_triples(spec, num_samples, master_seed, fast=fast, edges=(edge,))[edge]
    gaps = t[:, 1] - t[:, 0] if edge == "lower" else t[:, 2] - t[:, 1]
    return zeta_from_gaps(algorithm, gaps, spec.N, spec.d_N)


def halting_scale(algorithm: str, N: int, d_N: float, epsilon: float, zeta: float,
                  conv: RescaleConvention = RescaleConvention()) -> float:
    """Denominator ``c edge^(1/3) d^x N^(2/3) (log(1/eps) - (2/3) log N + zeta)``."""
    lo, hi = mp_edges(d_N)
    lam = hi if _ALGORITHM_EDGE[algorithm] == "upper" else lo
    bracket = math.log(1.0 / epsilon) - (2.0 / 3.0) * math.log(N) + zeta
    scale = conv.constant * lam ** (1.0 / 3.0) * d_N ** conv.d_exponent * N ** (2.0 / 3.0) * bracket
    if not scale > 0:
        raise ValueError("non-positive halting scale; epsilon is too large for this N")
    return scale


def rescale_halting(rec, N: int, d_N: float, zeta: float, conv: RescaleConvention = RescaleConvention()) -> float:
    """Rescaled halting time ``tau / halting_scale(...)`` of a :class:`HaltingRecord`."""
    if rec.capped:
        raise ValueError("capped runs have no halting time")
    return rec.tau / halting_scale(rec.algorithm, N, d_N, rec.epsilon, zeta, conv)
