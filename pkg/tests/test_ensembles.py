import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from halting_lab.ensembles import (
    EnsembleSpec,
    RngStream,
    build_scm,
    mp_cdf,
    mp_density,
    mp_edges,
    mp_quantiles,
    sample_entry_matrix,
    sample_scm,
    sample_unit_vector,
)


def test_spec_derives_M_and_validates():
    s = EnsembleSpec.from_name("LOE", 200, 0.5)
    assert (s.M, s.d_N, s.beta, s.name) == (400, 0.5, 1, "LOE")
    assert EnsembleSpec.from_name("cbe", 30, 2 / 3).M == 45
    assert EnsembleSpec(1, "gaussian", 7, 0.3).M == 23
    for bad in [(3, "gaussian", 5, 0.5), (1, "cauchy", 5, 0.5), (1, "gaussian", 0, 0.5), (1, "gaussian", 5, 1.0)]:
        with pytest.raises(ValueError):
            EnsembleSpec(*bad)
    with pytest.raises(ValueError):
        EnsembleSpec.from_name("GUE", 5, 0.5)


@given(st.integers(1, 500), st.floats(0.01, 0.99))
def test_M_at_least_N(N, d):
    assert EnsembleSpec(1, "gaussian", N, d).M >= N


def test_real_bernoulli_entries_are_signs():
    V = sample_entry_matrix(EnsembleSpec.from_name("BE", 20, 0.5), 1)
    assert set(np.unique(V)) == {-1.0, 1.0}


def test_complex_bernoulli_entries_are_rescaled_quarter_set():
    # the set (+-1 +- i)/2 has variance 1/2; scaled by sqrt(2) it has variance 1
    V = sample_entry_matrix(EnsembleSpec.from_name("CBE", 20, 0.5), 2)
    half = {complex(a, b) / 2 for a in (1, -1) for b in (1, -1)}
    scaled = {complex(round(z.real, 12), round(z.imag, 12)) for z in (V / math.sqrt(2)).ravel()}
    assert scaled == {complex(round(z.real, 12), round(z.imag, 12)) for z in half}
    assert np.allclose(np.abs(V), 1.0)


@pytest.mark.parametrize("name", ["LOE", "LUE", "BE", "CBE"])
def test_entry_moments(name):
    # K = 10^6 draws
    spec = EnsembleSpec.from_name(name, 500, 0.25)
    V = sample_entry_matrix(spec, RngStream(9, 0)).ravel()
    K = V.size
    assert K == 10**6
    assert abs(V.mean()) <= 4 / math.sqrt(K)
    assert abs(np.mean(np.abs(V) ** 2) - 1.0) <= 10 / math.sqrt(K)
    if spec.beta == 2:
        assert abs(np.mean(V**2)) <= 10 / math.sqrt(K)


def test_build_scm_small_cases():
    assert np.allclose(build_scm(np.array([[2.0]])), [[4.0]])
    assert np.allclose(build_scm(np.eye(2)), 0.5 * np.eye(2))
    with pytest.raises(ValueError):
        build_scm(np.ones((2, 3)))
    with pytest.raises(ValueError):
        build_scm(np.ones(3))


@pytest.mark.parametrize("name", ["LOE", "LUE", "BE", "CBE"])
def test_scm_hermitian_and_psd(name):
    H = sample_scm(EnsembleSpec.from_name(name, 40, 0.5), 3)
    assert np.max(np.abs(H - H.conj().T)) <= 1e-12 * np.max(np.abs(H))
    assert np.linalg.eigvalsh(H).min() >= -1e-10


def test_stream_reproducibility():
    spec = EnsembleSpec.from_name("LUE", 10, 0.5)
    a = sample_entry_matrix(spec, RngStream(7, 3))
    b = sample_entry_matrix(spec, RngStream(7, 3))
    c = sample_entry_matrix(spec, RngStream(7, 4))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(RngStream(7, 3).generator(1).random(4), RngStream(7, 3).generator(2).random(4))
    with pytest.raises(ValueError):
        RngStream(1, -1)


def test_unit_vector():
    for beta in (1, 2):
        for law in ("gaussian", "rademacher"):
            v = sample_unit_vector(13, beta, 5, law=law)
            assert abs(np.linalg.norm(v) - 1.0) <= 1e-14
    v = sample_unit_vector(1, 1, 0)
    assert abs(abs(v[0]) - 1.0) <= 1e-15
    assert abs(abs(sample_unit_vector(1, 2, 0)[0]) - 1.0) <= 1e-15
    with pytest.raises(ValueError):
        sample_unit_vector(3, 1, 0, law="uniform")


def test_unit_vector_first_coordinate_mean():
    gen = np.random.default_rng(4)
    vals = [sample_unit_vector(16, 1, gen)[0] for _ in range(10**5)]
    assert abs(np.mean(vals)) <= 0.01


def test_mp_edges():
    assert mp_edges(0.25) == pytest.approx((0.25, 2.25), abs=1e-15)
    lo, hi = mp_edges(0.5)
    mpmath.mp.dps = 30
    assert lo == pytest.approx(float((1 - mpmath.sqrt(0.5)) ** 2), rel=1e-15)
    assert hi == pytest.approx(float((1 + mpmath.sqrt(0.5)) ** 2), rel=1e-15)
    assert lo == pytest.approx(0.0857864376, abs=1e-10)
    assert hi == pytest.approx(2.9142135623, abs=1e-10)
    lo, hi = mp_edges(1e-12)
    assert lo == pytest.approx(1, abs=1e-5) and hi == pytest.approx(1, abs=1e-5)
    for bad in (0.0, 1.0, -0.3):
        with pytest.raises(ValueError):
            mp_edges(bad)


def test_mp_density_edges_and_mass():
    lo, hi = mp_edges(0.5)
    assert mp_density(lo, 0.5) == 0.0 and mp_density(hi, 0.5) == 0.0
    assert mp_density(-1.0, 0.5) == 0.0 and mp_density(4.0, 0.5) == 0.0
    mpmath.mp.dps = 30
    d = mpmath.mpf(1) / 2
    lo_m, hi_m = (1 - mpmath.sqrt(d)) ** 2, (1 + mpmath.sqrt(d)) ** 2
    rho = lambda x: mpmath.sqrt((hi_m - x) * (x - lo_m)) / (2 * mpmath.pi * d * x)
    assert float(mpmath.quad(rho, [lo_m, hi_m])) == pytest.approx(1.0, abs=1e-12)
    # the vectorized density agrees with the high-precision formula
    xs = np.linspace(lo, hi, 9)[1:-1]
    assert np.allclose(mp_density(xs, 0.5), [float(rho(mpmath.mpf(x))) for x in xs], rtol=1e-12)


@pytest.mark.parametrize("d", [0.25, 0.5, 2 / 3])
def test_mp_cdf_matches_mpmath(d):
    mpmath.mp.dps = 25
    dm = mpmath.mpf(d)
    lo_m, hi_m = (1 - mpmath.sqrt(dm)) ** 2, (1 + mpmath.sqrt(dm)) ** 2
    rho = lambda x: mpmath.sqrt((hi_m - x) * (x - lo_m)) / (2 * mpmath.pi * dm * x)
    lo, hi = mp_edges(d)
    for x in np.linspace(lo, hi, 7)[1:-1]:
        assert mp_cdf(x, d) == pytest.approx(float(mpmath.quad(rho, [lo_m, mpmath.mpf(x)])), abs=1e-10)
    assert mp_cdf(lo - 1, d) == 0.0 and mp_cdf(hi + 1, d) == 1.0


def test_quantiles():
    lo, hi = mp_edges(0.5)
    assert mp_quantiles(1, 0.5) == pytest.approx([hi])
    g = mp_quantiles(2, 0.5)
    assert mp_cdf(g[0], 0.5) == pytest.approx(0.5, abs=1e-10)
    N = 60
    q = mp_quantiles(N, 0.5)
    assert np.all(np.diff(q) > 0) and q[0] > lo and q[-1] == pytest.approx(hi, abs=1e-10)
    for n in range(1, N):
        assert mp_cdf(q[n - 1], 0.5) == pytest.approx(n / N, abs=1e-8)
