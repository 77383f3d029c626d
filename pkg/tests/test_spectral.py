import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from halting_lab.algorithms import last_row_error, run_inverse_power, run_power, run_qr_halting
from halting_lab.ensembles import EnsembleSpec, mp_quantiles, sample_scm, sample_unit_vector
from halting_lab.linalg import SpectralData, hermitian_eig
from halting_lab.spectral import (
    DegenerateSpectrumError,
    SpectralCoefficients,
    check_conditions,
    coefficients_for_projection,
    coefficients_for_qr,
    e_ip,
    e_p,
    e_qr,
    error_function,
    halting_time_continuous,
    lambda_ip,
    lambda_p,
    t_star,
    t_star_ip,
    t_star_p,
    t_star_qr,
    true_error,
    x_nn,
)


def _mp_moments(lam, beta, power):
    """Weights proportional to ``lambda^power beta^2`` in 40-digit arithmetic."""
    mpmath.mp.dps = 40
    w = [mpmath.mpf(l) ** power * mpmath.mpf(b) ** 2 for l, b in zip(lam, beta)]
    return w, sum(w)


def direct_qr_error(lam, beta, t):
    # variance of lambda under p_n proportional to lambda_n^{-2t} beta_n^2
    w, S = _mp_moments(lam, beta, -2 * mpmath.mpf(t))
    m1 = sum(wi * mpmath.mpf(l) for wi, l in zip(w, lam)) / S
    m2 = sum(wi * mpmath.mpf(l) ** 2 for wi, l in zip(w, lam)) / S
    return m2 - m1**2


def direct_inverse_rayleigh(lam, beta, t):
    w, S = _mp_moments(lam, beta, -2 * mpmath.mpf(t))
    return sum(wi / mpmath.mpf(l) for wi, l in zip(w, lam)) / S


def direct_rayleigh(lam, beta, t):
    w, S = _mp_moments(lam, beta, 2 * mpmath.mpf(t))
    return sum(wi * mpmath.mpf(l) for wi, l in zip(w, lam)) / S


@pytest.fixture
def sample():
    H = sample_scm(EnsembleSpec.from_name("LOE", 12, 0.5), 21)
    sd = hermitian_eig(H)
    v = sample_unit_vector(12, 1, 22)
    return H, v, sd


def test_coefficient_validation_and_inversion():
    with pytest.raises(ValueError):
        SpectralCoefficients(np.array([2.0, 1.0]), np.array([1.0, 1.0]))
    with pytest.raises(ValueError):
        SpectralCoefficients(np.array([1.0, 2.0]), np.array([1.0]))
    c = SpectralCoefficients(np.array([1.0, 2.0, 4.0]), np.array([0.1, 0.2, 0.3]))
    assert np.allclose(c.delta, [1, 0.25, 1 / 16])
    assert np.allclose(c.nu, [1, 4, 9])
    assert np.allclose(c.Delta, [0, 1, 3])
    ci = c.inverted()
    assert np.allclose(ci.eigenvalues, [0.25, 0.5, 1.0]) and np.allclose(ci.weights, [0.3, 0.2, 0.1])
    deg = SpectralCoefficients(np.array([1.0, 2.0]), np.array([0.0, 1.0]))
    assert deg.degenerate
    with pytest.raises(DegenerateSpectrumError):
        e_qr(0, deg)


def test_two_by_two_qr_error():
    H = np.array([[2.0, 1.0], [1.0, 2.0]])
    c = coefficients_for_qr(hermitian_eig(H))
    assert e_qr(0, c)[2] == pytest.approx(1.0, rel=1e-14)
    assert e_qr(1, c)[2] == pytest.approx(9 / 25, rel=1e-14)
    assert e_qr(2, c)[2] == pytest.approx(81 / 1681, rel=1e-13)
    assert x_nn(2, c) == pytest.approx(42 / 41, rel=1e-14)


def test_true_error_half():
    c = SpectralCoefficients(np.array([1.0, 2.0]), np.array([1.0, 1.0]) / math.sqrt(2))
    assert true_error("QR", 0, c) == pytest.approx(0.5)
    # inverse power: lambda_IP(0) = 4/3
    assert lambda_ip(0, c) == pytest.approx(4 / 3)
    assert true_error("IP", 0, c) == pytest.approx(1 / 3)
    assert lambda_p(0, c) == pytest.approx(1.5) and lambda_p(1, c) == pytest.approx(1.8)
    assert true_error("P", 0, c) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        true_error("LU", 0, c)


def test_error_functions_against_high_precision(sample):
    _, v, sd = sample
    lam = sd.eigenvalues
    cq = coefficients_for_qr(sd)
    cp = coefficients_for_projection(sd, v)
    ts = np.arange(21)
    eq, eip, ep = e_qr(ts, cq)[2], e_ip(ts, cp)[2], e_p(ts, cp)[2]
    for t in range(21):
        ref = direct_qr_error(lam, cq.weights, t)
        assert abs(eq[t] - float(ref)) <= 1e-10 * float(ref) + 1e-300
        ref = direct_inverse_rayleigh(lam, cp.weights, t + 1) - direct_inverse_rayleigh(lam, cp.weights, t)
        assert abs(eip[t] - float(ref)) <= 1e-9 * float(ref)
        ref = direct_rayleigh(lam, cp.weights, t + 1) - direct_rayleigh(lam, cp.weights, t)
        assert abs(ep[t] - float(ref)) <= 1e-9 * float(ref)
        assert lambda_ip(t, cp) == pytest.approx(float(1 / direct_inverse_rayleigh(lam, cp.weights, t)), rel=1e-12)
        assert lambda_p(t, cp) == pytest.approx(float(direct_rayleigh(lam, cp.weights, t)), rel=1e-12)


def test_error_parts_sum(sample):
    _, v, sd = sample
    cp = coefficients_for_projection(sd, v)
    for fn in (e_qr, e_ip, e_p):
        e0, e1, e = fn(np.arange(5.0), cp)
        assert np.allclose(e0 + e1, e) and np.all(e0 >= 0) and np.all(e1 >= 0)
    assert isinstance(e_qr(1.5, cp)[2], float)


@given(st.lists(st.floats(0.1, 10.0), min_size=2, max_size=8, unique=True),
       st.lists(st.floats(0.01, 1.0), min_size=8, max_size=8),
       st.floats(0, 50))
def test_errors_nonnegative(lams, betas, t):
    lam = np.sort(np.array(lams))
    c = SpectralCoefficients(lam, np.array(betas[: lam.size]))
    for fn in (e_qr, e_ip, e_p):
        assert fn(t, c)[2] >= 0
    assert true_error("QR", t, c) >= 0 and true_error("IP", t, c) >= 0 and true_error("P", t, c) >= 0


def test_true_error_matches_rayleigh_values(sample):
    _, v, sd = sample
    cp = coefficients_for_projection(sd, v)
    lam = sd.eigenvalues
    for t in (0.0, 1.0, 3.5, 10.0):
        assert true_error("IP", t, cp) == pytest.approx(lambda_ip(t, cp) - lam[0], rel=1e-9)
        assert true_error("P", t, cp) == pytest.approx(lam[-1] - lambda_p(t, cp), rel=1e-9)
        cq = coefficients_for_qr(sd)
        assert true_error("QR", t, cq) == pytest.approx(x_nn(t, cq) - lam[0], rel=1e-9)


def test_closed_forms_track_the_iterations(sample):
    H, v, sd = sample
    cq = coefficients_for_qr(sd)
    cp = coefficients_for_projection(sd, v)
    _, its = run_qr_halting(H, 1e-300, cap=15, keep_iterates=True)
    for n, X in enumerate(its):
        assert last_row_error(X) == pytest.approx(e_qr(n, cq)[2], rel=1e-8)
        assert X[-1, -1] == pytest.approx(x_nn(n, cq), rel=1e-10)
    eps = 1e-4
    for alg, run in (("P", run_power), ("IP", run_inverse_power)):
        rec = run(H, v, eps, spectral=sd)
        t_cont = halting_time_continuous(error_function(alg, cp), eps)
        assert rec.tau == math.ceil(t_cont)
        assert rec.true_error == pytest.approx(true_error(alg, rec.tau + 1, cp), rel=1e-8)
    rec = run_qr_halting(H, eps, spectral=sd)
    assert rec.tau == math.ceil(halting_time_continuous(error_function("QR", cq), eps))


def test_halting_time_continuous():
    fn = lambda t: np.exp(-np.asarray(t, dtype=float))
    eps = math.exp(-1.25)
    t = halting_time_continuous(fn, eps)
    assert 2.5 <= t <= 2.5 + 1e-6
    assert halting_time_continuous(fn, 2.0) == 0.0
    assert halting_time_continuous(lambda t: np.ones_like(np.asarray(t, dtype=float)), 0.5, cap=1000) == math.inf
    slow = lambda t: np.exp(-np.asarray(t, dtype=float) / 100.0)
    far = halting_time_continuous(slow, math.exp(-25.0))
    assert 5000 <= far <= 5000 + 1e-6


def test_t_star_defining_relations(sample):
    _, v, sd = sample
    cq = coefficients_for_qr(sd)
    N, alpha = 12, 6.0
    T = t_star_qr(cq, alpha, N)
    lhs = T * cq.log_delta[1] + 2 * math.log(cq.Delta[1]) + cq.log_nu[1]
    assert abs(lhs + alpha * math.log(N)) <= 1e-12 * alpha * math.log(N)

    cp = coefficients_for_projection(sd, v)
    lam1, lam2 = cp.eigenvalues[:2]
    T = t_star_ip(cp, alpha, N)
    lhs = (T * cp.log_delta[1] + 2 * math.log(1 - math.sqrt(cp.delta[1]))
           + math.log(1 / lam2 + 1 / lam1) + cp.log_nu[1])
    assert abs(lhs + alpha * math.log(N)) <= 1e-12 * alpha * math.log(N)

    assert t_star_p(cp, alpha, N) == t_star_ip(cp.inverted(), alpha, N)
    assert t_star("QR", cq, alpha, N) == t_star_qr(cq, alpha, N)


def test_t_star_shift_by_one():
    # replacing nu_2 by nu_2 / delta_2 adds exactly one iteration
    lam = np.array([1.0, 1.5, 3.0])
    base = SpectralCoefficients(lam, np.array([0.5, 0.4, 0.3]))
    shifted = SpectralCoefficients(lam, np.array([0.5, 0.4 * 1.5, 0.3]))
    assert t_star_qr(shifted, 4.0, 50) == pytest.approx(t_star_qr(base, 4.0, 50) + 1.0, abs=1e-12)
    with pytest.raises(DegenerateSpectrumError):
        t_star_qr(SpectralCoefficients(np.array([1.0, 1.0, 2.0]), np.ones(3)), 4.0, 50)


def test_conditions_examples():
    N = 100
    spec = EnsembleSpec.from_name("LOE", N, 0.5)
    sd = hermitian_eig(sample_scm(spec, 5))
    q = mp_quantiles(N, spec.d_N)
    flags = check_conditions(sd, coefficients_for_qr(sd), q, epsilon=N ** -3.0)
    assert flags.scaling_ok
    assert flags.in_R == all(flags.rigidity)
    assert not check_conditions(sd, coefficients_for_qr(sd), q).scaling_ok
    assert not check_conditions(sd, coefficients_for_qr(sd), q, epsilon=N ** -0.5).scaling_ok
    flat = SpectralData(np.ones(6), np.eye(6))
    f = check_conditions(flat, coefficients_for_qr(flat), mp_quantiles(6, 0.5))
    assert not f.in_L and not f.in_U
    with pytest.raises(ValueError):
        small = SpectralData(np.ones(3), np.eye(3))
        check_conditions(small, coefficients_for_qr(small), np.ones(3))


def test_gap_condition_threshold():
    # in_L holds iff p < log(lambda_3/lambda_2) / log(lambda_2/lambda_1)
    lam = np.array([1.0, 1.2, 1.5, 2.0, 3.0])
    sd = SpectralData(lam, np.eye(5))
    crit = math.log(1.5 / 1.2) / math.log(1.2)
    c = coefficients_for_qr(sd)
    assert check_conditions(sd, c, lam, p=crit * 0.99).in_L
    assert not check_conditions(sd, c, lam, p=crit * 1.01).in_L
