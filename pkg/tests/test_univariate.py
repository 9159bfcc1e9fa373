import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from mzcount.univariate import (
    ConvergenceError,
    MarginKind,
    UnivariateParams,
    fit_margin_regression,
    fit_truncated_margin,
    logpmf_margin,
    logpmf_negbin,
    logpmf_poisson,
    margin_loglik_derivatives,
    pmf_margin,
    pmf_negbin,
    pmf_poisson,
    pmf_zero_modified,
    sample_univariate,
)

KINDS = list(MarginKind)

# Maximum-likelihood values from an independent scipy Nelder-Mead fit of the
# positive counts of each margin of the bundled claim table.
MARGIN_ORACLE = {
    ("W1", "ZTP"): (-3546.5344938943276, 0.53018583, None),
    ("W1", "ZTNB"): (-3481.342440369855, 0.12597953, 0.26248156),
    ("W1", "USP"): (-3604.3882930491445, 0.28840865, None),
    ("W1", "USNB"): (-3481.012614361905, 0.28840865, 0.69030892),
    ("W2", "ZTP"): (-4864.864072038284, 0.63918885, None),
    ("W2", "ZTNB"): (-4751.65587798023, 0.16371524, 0.2802215),
    ("W2", "USP"): (-4963.0008846796745, 0.3534117, None),
    ("W2", "USNB"): (-4751.311518703287, 0.3534117, 0.69635682),
}


def positive_margin(data, j):
    pos = data.counts[:, j] > 0
    return data.counts[pos, j], data.weights[pos]


def test_pmf_poisson_examples():
    assert pmf_poisson(0, 1.0) == pytest.approx(0.3678794412, rel=1e-10)
    assert pmf_poisson(3, 2.0) == pytest.approx(0.1804470443, rel=1e-9)
    assert sum(pmf_poisson(y, 5.0) for y in range(61)) == pytest.approx(1.0, abs=1e-12)


def test_pmf_negbin_examples():
    assert pmf_negbin(0, 1.0, 1.0) == pytest.approx(0.5, rel=1e-14)
    for y in range(11):
        assert pmf_negbin(y, 2.0, 1e8) == pytest.approx(pmf_poisson(y, 2.0), abs=1e-6)


def test_negbin_moments_by_summation():
    y = np.arange(0, 4000)
    p = np.exp(logpmf_negbin(y, 2.0, 0.5))
    mean = p @ y
    var = p @ (y - mean) ** 2
    assert mean == pytest.approx(2.0, abs=1e-6)
    assert var == pytest.approx(10.0, abs=1e-6)


def test_negbin_matches_scipy():
    y = np.arange(30)
    lam, phi = 1.7, 0.6
    ref = stats.nbinom.logpmf(y, phi, phi / (lam + phi))
    np.testing.assert_allclose(logpmf_negbin(y, lam, phi), ref, rtol=1e-12, atol=1e-13)


def test_pmf_margin_examples():
    assert pmf_margin(1, "ZTP", UnivariateParams(1.0)) == pytest.approx(0.5819767069, rel=1e-9)
    assert pmf_margin(1, "USP", UnivariateParams(2.0)) == pytest.approx(0.1353352832, rel=1e-9)
    w = np.arange(1, 301)
    assert np.exp(logpmf_margin(w, "ZTNB", 2.0, 0.8)).sum() == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("kind", KINDS)
def test_margin_mass(kind):
    w = np.arange(1, 301)
    phi = 0.8 if kind.has_dispersion else None
    assert np.exp(logpmf_margin(w, kind, 1.3, phi)).sum() == pytest.approx(1.0, abs=1e-10)


def test_pmf_margin_rejects_zero():
    with pytest.raises(ValueError):
        pmf_margin(0, "ZTP", UnivariateParams(1.0))


def test_zero_modified_examples():
    for kind in KINDS:
        prm = UnivariateParams(1.0, 1.0 if kind.has_dispersion else None)
        assert pmf_zero_modified(0, kind, prm, 0.3) == pytest.approx(0.7)
    pi0 = 1 - math.exp(-1.0)
    assert pmf_zero_modified(2, "ZTP", UnivariateParams(1.0), pi0) == pytest.approx(pmf_poisson(2, 1.0), rel=1e-12)


@pytest.mark.parametrize("kind", KINDS)
def test_zero_modified_mass(kind):
    prm = UnivariateParams(1.5, 0.9 if kind.has_dispersion else None)
    total = sum(pmf_zero_modified(z, kind, prm, 0.35) for z in range(301))
    assert total == pytest.approx(1.0, abs=1e-10)


@settings(max_examples=50)
@given(st.integers(1, 40), st.floats(0.01, 20))
def test_zero_truncation_identity(w, lam):
    lhs = pmf_margin(w, "ZTP", UnivariateParams(lam)) * (-math.expm1(-lam))
    assert lhs == pytest.approx(pmf_poisson(w, lam), rel=1e-11)


@settings(max_examples=50)
@given(st.integers(0, 40), st.floats(0.01, 20), st.floats(0.05, 50))
def test_log_and_linear_pmfs_agree(y, lam, phi):
    assert math.exp(logpmf_poisson(y, lam)) == pytest.approx(pmf_poisson(y, lam), rel=1e-12)
    assert math.exp(logpmf_negbin(y, lam, phi)) == pytest.approx(pmf_negbin(y, lam, phi), rel=1e-12)


@pytest.mark.parametrize("pi0_prime", np.linspace(0.05, 0.95, 10))
def test_zero_modification_direction(pi0_prime):
    lam = 1.0
    pi0 = 1 - math.exp(-lam)
    at_zero = pmf_zero_modified(0, "ZTP", UnivariateParams(lam), pi0_prime)
    base_zero = pmf_poisson(0, lam)
    if pi0_prime < pi0:
        assert at_zero > base_zero
    elif pi0_prime > pi0:
        assert at_zero < base_zero


@pytest.mark.parametrize("bad", [dict(lam=0.0), dict(lam=1.0, phi=-1.0), dict(lam=1.0, pi0=1.0)])
def test_params_validation(bad):
    with pytest.raises(ValueError):
        UnivariateParams(**bad)


@pytest.mark.parametrize("margin, kind", sorted(MARGIN_ORACLE))
def test_margin_fit_matches_direct_search(claims, margin, kind):
    ll, lam, phi = MARGIN_ORACLE[(margin, kind)]
    w, weights = positive_margin(claims, 0 if margin == "W1" else 1)
    fit = fit_truncated_margin(w, kind, weights=weights)
    assert fit.loglik == pytest.approx(ll, abs=1e-5)
    assert fit.params.lam == pytest.approx(lam, rel=1e-5)
    if phi is not None:
        assert fit.phi == pytest.approx(phi, rel=1e-5)
    assert np.all(np.diff(fit.loglik_trace) >= -1e-8 * abs(fit.loglik))


def test_margin_fit_reference_examples(claims):
    w2, wt2 = positive_margin(claims, 1)
    assert fit_truncated_margin(w2, "USNB", weights=wt2).loglik == pytest.approx(-4751.31, abs=0.5)
    w1, wt1 = positive_margin(claims, 0)
    fit = fit_truncated_margin(w1, "ZTP", weights=wt1)
    assert fit.loglik == pytest.approx(-3546.53, abs=0.5)
    assert fit.chi2 == pytest.approx(293.32, rel=0.01)
    np.testing.assert_allclose(fit.observed, [4003, 796, 226, 51, 7, 7])


def test_margin_fit_all_ones():
    fit = fit_truncated_margin(np.ones(50, dtype=int), "ZTP")
    assert fit.params.lam < 1e-3
    assert fit.expected[0] == pytest.approx(50.0, rel=1e-3)


def test_two_parameter_fit_needs_two_values():
    with pytest.raises(ValueError):
        fit_truncated_margin(np.full(10, 2), "USNB")


def test_non_convergence_raises():
    w = np.array([1, 1, 2, 3, 7, 1, 2])
    with pytest.raises(ConvergenceError) as info:
        fit_margin_regression(w, kind="ZTNB", max_iter=1)
    assert info.value.result is not None


@pytest.mark.parametrize("kind", KINDS)
def test_margin_derivatives_against_finite_differences(kind, rng):
    w = rng.integers(1, 8, size=40)
    eta, rho = -0.4, 0.3
    r = rho if kind.has_dispersion else None
    ll, de, dr, d2e, d2r, d2er = margin_loglik_derivatives(w, kind, eta, r)
    h = 1e-6
    up = margin_loglik_derivatives(w, kind, eta + h, r)[0]
    dn = margin_loglik_derivatives(w, kind, eta - h, r)[0]
    np.testing.assert_allclose(de, (up - dn) / (2 * h), rtol=1e-6, atol=1e-8)
    if kind.has_dispersion:
        up = margin_loglik_derivatives(w, kind, eta, rho + h)[0]
        dn = margin_loglik_derivatives(w, kind, eta, rho - h)[0]
        np.testing.assert_allclose(dr, (up - dn) / (2 * h), rtol=1e-6, atol=1e-8)


def test_covariate_margin_regression_recovers_truth(rng):
    n = 20000
    x = rng.integers(0, 2, n)
    lam = np.exp(-0.5 + 0.6 * x)
    w = 1 + rng.negative_binomial(1.5, 1.5 / (lam + 1.5))
    X = np.column_stack([np.ones(n), x])
    fit = fit_margin_regression(w, X, "USNB")
    np.testing.assert_allclose(fit.coef, [-0.5, 0.6], atol=0.08)
    assert fit.phi == pytest.approx(1.5, rel=0.2)


def test_sampler_degenerate_inflation():
    draws = sample_univariate("poisson", UnivariateParams(3.0, pi0=1e-12), 10000, seed=1)
    assert np.all(draws == 0)


def test_sampler_zero_modified_zero_fraction():
    draws = sample_univariate("ZTP", UnivariateParams(1.2, pi0=0.4), 10 ** 6, seed=2)
    assert np.mean(draws == 0) == pytest.approx(0.6, abs=0.002)


def test_sampler_ztp_total_variation():
    draws = sample_univariate("ZTP", UnivariateParams(2.0), 10 ** 6, seed=3)
    assert draws.min() >= 1
    ks = np.arange(1, 40)
    emp = np.bincount(draws, minlength=40)[1:40] / draws.size
    pmf = np.exp(logpmf_margin(ks, "ZTP", 2.0))
    assert 0.5 * np.abs(emp - pmf).sum() <= 0.005


def test_sampler_is_deterministic():
    a = sample_univariate("USNB", UnivariateParams(0.7, 1.1, 0.3), 1000, seed=9)
    b = sample_univariate("USNB", UnivariateParams(0.7, 1.1, 0.3), 1000, seed=9)
    np.testing.assert_array_equal(a, b)


def test_kind_parsing():
    assert MarginKind.parse("usnb") is MarginKind.USNB
    assert MarginKind.ZTNB.truncated and MarginKind.ZTNB.has_dispersion
    assert not MarginKind.USP.truncated
    with pytest.raises(ValueError):
        MarginKind.parse("geometric")
