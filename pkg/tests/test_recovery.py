import math

import numpy as np
import pytest
from scipy import integrate
from scipy.special import ndtr, ndtri

from climcred import (
    RecoveryParams,
    ValidationError,
    binormal_cdf,
    calibrate_recovery,
    conditional_lgd,
    conditional_moments,
    expected_lgd,
    kendall_tau,
    sample_recovery,
)
from climcred.errors import CalibrationError


def _phi2_quadrature(x, y, rho):
    """Independent oracle: 2-D adaptive quadrature of the bivariate density."""
    det = 1.0 - rho * rho

    def density(v, u):
        q = (u * u - 2.0 * rho * u * v + v * v) / det
        return math.exp(-0.5 * q) / (2.0 * math.pi * math.sqrt(det))

    val, err = integrate.dblquad(density, -8.5, x, -8.5, y, epsabs=1e-11)
    return val


def test_binormal_trivial_points():
    assert binormal_cdf(0.0, 0.0, 0.0) == pytest.approx(0.25, abs=1e-15)
    assert binormal_cdf(1.3, math.inf, 0.7) == pytest.approx(float(ndtr(1.3)), abs=1e-15)
    assert binormal_cdf(math.inf, -0.4, -0.2) == pytest.approx(float(ndtr(-0.4)), abs=1e-15)
    assert binormal_cdf(-math.inf, 0.0, 0.5) == 0.0
    assert binormal_cdf(math.inf, math.inf, 0.5) == 1.0


def test_binormal_quadrant_identity():
    # Phi2(0,0;rho) = 1/4 + asin(rho)/(2 pi); rho=0.5 gives exactly 1/3
    assert binormal_cdf(0.0, 0.0, 0.5) == pytest.approx(1.0 / 3.0, abs=1e-14)
    for rho in np.arange(-0.9, 0.95, 0.1):
        want = 0.25 + math.asin(rho) / (2.0 * math.pi)
        assert binormal_cdf(0.0, 0.0, float(rho)) == pytest.approx(want, abs=1e-14)


def test_binormal_against_quadrature_oracle():
    cases = [
        (0.0, 0.0, 0.5),
        (0.3, -1.1, 0.6),
        (-2.0, 1.5, -0.8),
        (0.0, 0.7, 0.3),
        (1.0, 1.0, -0.4),
        (-0.5, -0.5, 0.9),
    ]
    for x, y, rho in cases:
        assert binormal_cdf(x, y, rho) == pytest.approx(
            _phi2_quadrature(x, y, rho), abs=1e-8
        )


def test_binormal_symmetry_and_independence():
    rng = np.random.default_rng(9)
    for _ in range(50):
        x, y = rng.normal(size=2)
        rho = rng.uniform(-0.99, 0.99)
        assert binormal_cdf(x, y, rho) == pytest.approx(binormal_cdf(y, x, rho), abs=1e-14)
        assert binormal_cdf(x, y, 0.0) == pytest.approx(
            float(ndtr(x)) * float(ndtr(y)), abs=1e-14
        )


def test_binormal_comonotone_limits_and_domain():
    assert binormal_cdf(0.4, -0.2, 1.0) == pytest.approx(float(ndtr(-0.2)), abs=1e-15)
    assert binormal_cdf(0.4, -0.2, -1.0) == pytest.approx(
        max(0.0, float(ndtr(0.4)) + float(ndtr(-0.2)) - 1.0), abs=1e-15
    )
    with pytest.raises(ValidationError):
        binormal_cdf(0.0, 0.0, 1.5)


def test_sample_recovery_deterministic():
    params = RecoveryParams(mu=float(ndtri(0.4)), sigma=0.0, loadings=np.zeros(2))
    for Z in (np.zeros(2), np.array([3.0, -2.0])):
        assert sample_recovery(params, np.eye(2), Z, 1.7) == pytest.approx(0.4, abs=1e-15)


def test_sample_recovery_idiosyncratic_only():
    params = RecoveryParams(mu=0.2, sigma=0.7, loadings=np.zeros(1))
    rng = np.random.default_rng(1)
    eps = rng.standard_normal(200_000)
    draws = ndtri([sample_recovery(params, np.eye(1), np.array([5.0]), float(e)) for e in eps[:100]])
    # independent of Z, and Phi^-1(RR) is N(mu, sigma^2)
    assert sample_recovery(params, np.eye(1), np.zeros(1), 0.3) == pytest.approx(
        sample_recovery(params, np.eye(1), np.array([-4.0]), 0.3), abs=1e-15
    )
    full = params.mu + params.sigma * eps
    assert float(np.mean(full)) == pytest.approx(params.mu, abs=4 * params.sigma / math.sqrt(eps.size))
    assert np.allclose(sorted(draws), sorted(params.mu + params.sigma * eps[:100]), atol=1e-9)


def test_sample_recovery_fully_systematic():
    params = RecoveryParams(mu=0.1, sigma=0.5, loadings=np.array([1.0]))
    Z = np.array([0.8])
    a = sample_recovery(params, np.eye(1), Z, -2.0)
    b = sample_recovery(params, np.eye(1), Z, 3.0)
    assert a == pytest.approx(b, abs=1e-15)  # zero idiosyncratic weight


def test_expected_lgd_independent_and_deterministic_cases():
    z = float(ndtri(0.05))
    params = RecoveryParams(mu=0.3, sigma=0.8, loadings=np.zeros(1))
    want = 1.0 - float(ndtr(params.mu / math.sqrt(1.0 + params.sigma**2)))
    got = expected_lgd(params, np.array([0.5]), np.eye(1), z, 0.05)
    assert got == pytest.approx(want, abs=1e-12)

    det = RecoveryParams(mu=float(ndtri(0.55)), sigma=0.0, loadings=np.zeros(1))
    assert expected_lgd(det, np.array([0.5]), np.eye(1), z, 0.05) == pytest.approx(
        0.45, abs=1e-12
    )


def test_expected_lgd_against_joint_gaussian_mc():
    # appendix-style construction: (X, Phi^-1(RR)) jointly Gaussian
    mu, sigma, rho, pd = 0.0, 1.0, 0.5, 0.05
    z = float(ndtri(pd))
    rng = np.random.default_rng(2024)
    n = 2_000_000
    x = rng.standard_normal(n)
    y = mu + sigma * (rho * x + math.sqrt(1 - rho * rho) * rng.standard_normal(n))
    sel = x <= z
    lgd_draws = 1.0 - ndtr(y[sel])
    mc = float(lgd_draws.mean())
    se = float(lgd_draws.std(ddof=1) / math.sqrt(sel.sum()))
    params = RecoveryParams(mu=mu, sigma=sigma, loadings=np.array([rho]))
    got = expected_lgd(params, np.array([1.0]), np.eye(1), z, pd)
    assert abs(got - mc) <= 4 * se


def test_expected_lgd_requires_consistent_pd():
    params = RecoveryParams(mu=0.0, sigma=1.0, loadings=np.zeros(1))
    with pytest.raises(ValidationError):
        expected_lgd(params, np.zeros(1), np.eye(1), float(ndtri(0.05)), 0.06)
    with pytest.raises(ValidationError):
        expected_lgd(params, np.zeros(1), np.eye(1), -np.inf, 0.0)


def test_conditional_lgd_cases():
    det = RecoveryParams(mu=float(ndtri(0.7)), sigma=0.0, loadings=np.array([0.4]))
    for Z in (np.zeros(1), np.array([2.5])):
        assert conditional_lgd(det, np.eye(1), Z) == pytest.approx(0.3, abs=1e-12)

    params = RecoveryParams(mu=0.2, sigma=0.9, loadings=np.array([0.6]))
    share = 0.36
    want = 1.0 - float(ndtr(params.mu / math.sqrt(1.0 + params.sigma**2 * (1.0 - share))))
    assert conditional_lgd(params, np.eye(1), np.zeros(1)) == pytest.approx(want, abs=1e-12)


def test_conditional_lgd_monotone_in_factors():
    params = RecoveryParams(mu=0.1, sigma=0.8, loadings=np.array([0.5, 0.0]))
    vals = [
        conditional_lgd(params, np.eye(2), np.array([z, 0.0])) for z in (-2.0, 0.0, 1.0, 3.0)
    ]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert all(0.0 <= v <= 1.0 for v in vals)


def test_conditional_lgd_consistency_with_expected_lgd():
    # E_Z[pd(Z) lgd(Z)] = pd * expected_lgd ties the conditional and average forms
    mu, sigma = 0.1, 0.7
    a = np.array([0.55])
    b = np.array([0.35])
    C = np.eye(1)
    pd = 0.08
    z = float(ndtri(pd))
    params = RecoveryParams(mu=mu, sigma=sigma, loadings=b)
    rng = np.random.default_rng(77)
    Zs = rng.standard_normal((1_000_000, 1))
    share = float(a @ C @ a)
    pd_cond = ndtr((z - Zs[:, 0] * a[0]) / math.sqrt(1.0 - share))
    lgd_cond = 1.0 - ndtr(
        (mu + sigma * Zs[:, 0] * b[0]) / math.sqrt(1.0 + sigma**2 * (1.0 - float(b @ C @ b)))
    )
    prod = pd_cond * lgd_cond
    se = float(prod.std(ddof=1) / math.sqrt(prod.size))
    want = pd * expected_lgd(params, a, C, z, pd)
    assert abs(float(prod.mean()) - want) <= 4 * se
    # spot-check the scalar op against the vectorized expression used above
    k = 123
    assert conditional_lgd(params, C, Zs[k]) == pytest.approx(float(lgd_cond[k]), abs=1e-12)


def test_kendall_tau_values():
    assert kendall_tau(np.zeros(2), np.eye(2), np.array([0.3, 0.1])) == 0.0
    assert kendall_tau(np.array([1.0]), np.eye(1), np.array([1.0])) == pytest.approx(1.0)
    assert kendall_tau(np.array([1.0]), np.eye(1), np.array([0.5])) == pytest.approx(
        1.0 / 3.0, abs=1e-14
    )
    with pytest.raises(ValidationError):
        kendall_tau(np.array([2.0]), np.eye(1), np.array([1.0]))


def test_conditional_moments_degenerate_cases():
    params = RecoveryParams(mu=0.4, sigma=0.9, loadings=np.zeros(1))
    m1, m2 = conditional_moments(params, 0.0, -1.2, float(ndtr(-1.2)))
    assert m1 == pytest.approx(0.4, abs=1e-14)
    assert m2 == pytest.approx(0.4**2 + 0.9**2, abs=1e-14)

    det = RecoveryParams(mu=0.4, sigma=0.0, loadings=np.zeros(1))
    m1, m2 = conditional_moments(det, 0.6, -1.2, float(ndtr(-1.2)))
    assert (m1, m2) == (pytest.approx(0.4), pytest.approx(0.16))


def test_conditional_moments_against_truncated_gaussian_mc():
    mu, sigma, rho, z = 0.5, 0.8, 0.6, -1.5
    pd = float(ndtr(z))
    rng = np.random.default_rng(31)
    n = 2_000_000
    x = rng.standard_normal(n)
    y = mu + sigma * (rho * x + math.sqrt(1 - rho * rho) * rng.standard_normal(n))
    sel = x <= z
    ys = y[sel]
    params = RecoveryParams(mu=mu, sigma=sigma, loadings=np.array([rho]))
    m1, m2 = conditional_moments(params, rho, z, pd)
    se1 = float(ys.std(ddof=1) / math.sqrt(ys.size))
    se2 = float((ys**2).std(ddof=1) / math.sqrt(ys.size))
    assert abs(m1 - float(ys.mean())) <= 4 * se1
    assert abs(m2 - float((ys**2).mean())) <= 4 * se2


def test_calibration_round_trip():
    a = np.array([0.5, 0.3])
    C = np.array([[1.0, -0.2], [-0.2, 1.0]])
    share = float(a @ C @ a)
    for mu, sigma, coupling in [(0.3, 0.8, 0.9), (-0.2, 0.4, -0.5), (0.0, 1.3, 0.0)]:
        b = coupling * a
        mean_lgd = 1.0 - float(ndtr(mu / math.sqrt(1.0 + sigma**2)))
        var = sigma**2
        tau = kendall_tau(a, C, b)
        got_mu, got_sigma, got_coupling = calibrate_recovery(mean_lgd, var, tau, a, C)
        assert got_mu == pytest.approx(mu, abs=1e-6)
        assert got_sigma == pytest.approx(sigma, abs=1e-6)
        assert got_coupling == pytest.approx(coupling, abs=1e-6)


def test_calibration_decoupled_cases():
    a = np.array([0.6])
    C = np.eye(1)
    mu, sigma, coupling = calibrate_recovery(0.45, 0.49, 0.0, a, C)
    assert coupling == 0.0
    assert sigma == pytest.approx(0.7)
    assert mu == pytest.approx(math.sqrt(1.49) * float(ndtri(0.55)), abs=1e-12)

    mu, sigma, coupling = calibrate_recovery(0.35, 0.0, 0.0, a, C)
    assert sigma == 0.0
    assert mu == pytest.approx(float(ndtri(0.65)), abs=1e-12)


def test_calibration_infeasible_targets():
    a = np.array([0.3])  # a.C.a = 0.09 caps the achievable rank correlation
    with pytest.raises(CalibrationError):
        calibrate_recovery(0.4, 0.5, 0.9, a, np.eye(1))
    with pytest.raises(CalibrationError):
        calibrate_recovery(1.2, 0.5, 0.1, a, np.eye(1))
    with pytest.raises(CalibrationError):
        calibrate_recovery(0.4, -0.1, 0.1, a, np.eye(1))
