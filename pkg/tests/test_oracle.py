import math

import numpy as np
import pytest
from scipy import stats

from _helpers import random_params, synthetic
from mzcount import _engine
from mzcount.multivariate import ModelSpec, ParameterSet, loglik
from mzcount.observations import ObservationSet
from mzcount.oracle import (
    GridSpec,
    direct_mle_small,
    fd_gradient,
    grid_total_mass,
    monte_carlo_moments,
    moments_by_grid,
    self_check,
)
from mzcount.surrogates import gamma_mixing_block, poisson_block


def test_grid_mass_independent_poisson():
    spec = ModelSpec("MIP")
    params = ParameterSet(beta=[[0.0], [math.log(2.0)]])
    mass = grid_total_mass(spec, params, [1.0], GridSpec((40, 40), 0.0))
    expected = stats.poisson.cdf(40, 1.0) * stats.poisson.cdf(40, 2.0)
    assert mass == pytest.approx(expected, abs=1e-12)


def test_grid_mass_shock_poisson():
    spec = ModelSpec("MP")
    params = ParameterSet(beta=[[0.0], [0.0]], lambda0=2.0)
    assert grid_total_mass(spec, params, [1.0], GridSpec((60, 60), 0.0)) >= 1 - 1e-10


def test_grid_spec_bound_is_small():
    spec = ModelSpec("MZINB1")
    params = random_params(spec, np.random.default_rng(0))
    grid = GridSpec.for_model(spec, params, [1.0], tol=1e-10)
    assert grid.tail_mass_bound <= 1e-10
    assert grid_total_mass(spec, params, [1.0], grid) >= 1 - 1e-10 - 1e-12


def test_fd_gradient_quadratic():
    g = fd_gradient(lambda v: v[0] ** 2, [2.0])
    assert g[0] == pytest.approx(4.0, abs=1e-8)


def test_fd_gradient_vector():
    g = fd_gradient(lambda v: v[0] * v[1] + math.sin(v[1]), [3.0, 0.5])
    np.testing.assert_allclose(g, [0.5, 3.0 + math.cos(0.5)], atol=1e-8)


def test_direct_mle_independent_poisson_closed_form():
    rng = np.random.default_rng(1)
    Z = np.column_stack([rng.poisson(1.3, 400), rng.poisson(0.6, 400)])
    data = ObservationSet(Z)
    fit = direct_mle_small(data, ModelSpec("MIP"))
    means = Z.mean(axis=0)
    closed = sum(stats.poisson.logpmf(Z[:, j], means[j]).sum() for j in range(2))
    assert fit.identifiable
    assert fit.loglik == pytest.approx(closed, abs=1e-6)
    np.testing.assert_allclose([b[0] for b in fit.params.beta], np.log(means), atol=1e-4)


def test_direct_mle_zero_modified_gate_closed_form():
    # the gate of an intercept-only zero-modified fit is the nonzero fraction
    spec = ModelSpec("MZMP1")
    data = synthetic(spec, random_params(spec, np.random.default_rng(2)), 400, seed=2)
    fit = direct_mle_small(data, spec)
    frac = np.mean(~data.zero_rows)
    assert 1 / (1 + math.exp(-fit.params.gamma[0])) == pytest.approx(frac, abs=1e-4)


def test_direct_mle_all_zero_is_unidentifiable():
    fit = direct_mle_small(ObservationSet(np.zeros((10, 2), dtype=int)), ModelSpec("MZIP1"))
    assert not fit.identifiable
    assert fit.params is None
    assert math.isnan(fit.loglik)


def test_direct_mle_rejects_covariates():
    spec = ModelSpec.build("MIP", covariates="all", p=1)
    data = ObservationSet.from_covariates(np.zeros((4, 2), dtype=int), np.ones((4, 1)))
    with pytest.raises(ValueError):
        direct_mle_small(data, spec)


def test_self_check_passes():
    results = self_check()
    assert len(results) >= 15
    failed = [r for r in results if not r[1]]
    assert not failed, failed


def test_poisson_block_gradient_matches_formula(rng):
    # zero-modified Poisson case: gradient of the beta surrogate is sum w (z - u' lam) x
    spec = ModelSpec.build("MZMP1", covariates="all", p=2)
    params = random_params(spec, rng)
    data = synthetic(spec, params, 400, seed=3, p=2).nonzero()
    pb = _engine.Problem.build(spec, data, "zm")
    es = _engine.e_step(pb, params)
    X = spec.design("beta1", pb.X)
    z = pb.Z[:, 0].astype(float)
    beta = params.beta[0]
    lam = np.exp(X @ beta)
    _, grad, _ = poisson_block(beta, X, pb.w, z, es.poisson_coef)
    np.testing.assert_allclose(grad, X.T @ (pb.w * (z - es.poisson_coef * lam)), rtol=1e-12)
    fd = fd_gradient(lambda b: poisson_block(b, X, pb.w, z, es.poisson_coef)[0], beta)
    np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-6)


def test_gamma_mixing_gradient_matches_fd(rng):
    spec = ModelSpec("MZMNB2")
    params = random_params(spec, rng)
    data = synthetic(spec, params, 400, seed=4).nonzero()
    pb = _engine.Problem.build(spec, data, "zm")
    es = _engine.e_step(pb, params)
    phi = params.phi
    _, grad, hess = gamma_mixing_block(phi, pb.w, es.c, es.S, es.R)
    fd = fd_gradient(lambda v: gamma_mixing_block(v, pb.w, es.c, es.S, es.R)[0], phi)
    np.testing.assert_allclose(np.ravel(grad), fd, rtol=1e-5, atol=1e-6)
    fd2 = fd_gradient(lambda v: np.ravel(gamma_mixing_block(v, pb.w, es.c, es.S, es.R)[1])[0], phi)
    np.testing.assert_allclose(np.ravel(hess), fd2, rtol=1e-4, atol=1e-5)


def test_direct_mle_matches_objective():
    spec = ModelSpec("MZINB1")
    data = synthetic(spec, random_params(spec, np.random.default_rng(7)), 300, seed=7)
    fit = direct_mle_small(data, spec)
    assert fit.loglik == pytest.approx(loglik(spec, fit.params, data), abs=1e-9)


def test_monte_carlo_agrees_with_grid():
    spec = ModelSpec("MZIP2")
    params = ParameterSet(beta=[[0.1], [-0.3]], gamma=[0.4], lambda0=0.5)
    exact = moments_by_grid(spec, params, [1.0])
    mc = monte_carlo_moments(spec, params, [1.0], draws=200000, seed=3)
    assert np.all(np.abs(mc.summary.mean - exact.mean) <= 4 * mc.mean_se)
    assert abs(mc.summary.covariance[0, 1] - exact.covariance[0, 1]) <= 4 * mc.covariance_se[0, 1]


def test_monte_carlo_is_reproducible():
    spec = ModelSpec("MINB")
    params = ParameterSet(beta=[[0.0], [0.2]], phi=[1.0, 2.0])
    a = monte_carlo_moments(spec, params, [1.0], draws=5000, seed=9)
    b = monte_carlo_moments(spec, params, [1.0], draws=5000, seed=9)
    np.testing.assert_array_equal(a.summary.mean, b.summary.mean)
