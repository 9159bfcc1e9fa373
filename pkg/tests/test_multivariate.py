import math

import numpy as np
import pytest
from scipy import stats

from _helpers import random_params
from mzcount.multivariate import (
    ALL_FAMILIES,
    ZI_FAMILIES,
    Family,
    ModelSpec,
    ParameterSet,
    classify_modification,
    counterpart,
    expit,
    moments,
    nonzero_probabilities,
    pmf_joint,
    pmf_mnb,
    pmf_mp,
    sample_joint,
)
from mzcount.multivariate.sampling import BLOCK_ROWS
from mzcount.oracle import GridSpec, demo_params, grid_points, grid_total_mass, moments_by_grid
from mzcount.univariate import MarginKind, logpmf_margin, pmf_negbin, pmf_poisson

X0 = np.array([1.0])


def logit(p):
    return math.log(p / (1 - p))


def grid_pmf(spec, params, K=40, x=X0):
    return np.array([[pmf_joint(spec, params, x, [a, b]) for b in range(K + 1)] for a in range(K + 1)])


# -- common-shock and gamma-mixed pmfs ---------------------------------------------


def test_pmf_mp_examples():
    assert pmf_mp([0, 0], 0.5, [1, 1]) == pytest.approx(math.exp(-2.5), rel=1e-14)
    assert pmf_mp([1, 1], 0.0, [1, 2]) == pytest.approx(pmf_poisson(1, 1) * pmf_poisson(1, 2), rel=1e-14)
    assert pmf_mp([1, 1], 0.0, [1, 2]) == pytest.approx(2 * math.exp(-3), rel=1e-14)
    assert pmf_mp([1, 1], 1.0, [1, 1]) == pytest.approx(2 * math.exp(-3), rel=1e-14)


def test_pmf_mp_by_convolution():
    lam0, lam = 0.7, (1.2, 0.4)
    for z in [(0, 3), (2, 2), (4, 1), (3, 5)]:
        ref = sum(
            stats.poisson.pmf(k, lam0) * stats.poisson.pmf(z[0] - k, lam[0]) * stats.poisson.pmf(z[1] - k, lam[1])
            for k in range(min(z) + 1)
        )
        assert pmf_mp(z, lam0, lam) == pytest.approx(ref, rel=1e-12)


def test_pmf_mp_rejects_negative_counts():
    with pytest.raises(ValueError):
        pmf_mp([-1, 0], 0.5, [1, 1])


def test_pmf_mnb_examples():
    assert pmf_mnb([0], [1.0], 1.0) == pytest.approx(0.5, rel=1e-14)
    assert pmf_mnb([0, 0], [1.0, 1.0], 2.0) == pytest.approx(0.25, rel=1e-14)


def test_pmf_mnb_margin_is_negative_binomial():
    lam, phi = (1.0, 2.0), 1.5
    for z1 in range(6):
        marginal = sum(pmf_mnb([z1, z2], lam, phi) for z2 in range(201))
        assert marginal == pytest.approx(pmf_negbin(z1, 1.0, phi), abs=1e-8)


# -- family pmfs -------------------------------------------------------------------


def test_mzmp1_at_induced_gate_is_mip():
    lam = np.array([0.8, 1.3])
    mip = ModelSpec("MIP")
    base = ParameterSet(beta=[[math.log(lam[0])], [math.log(lam[1])]])
    zm = ModelSpec("MZMP1")
    params = base.copy()
    params.gamma = np.array([logit(1 - math.exp(-lam.sum()))])
    for z in [(0, 0), (1, 0), (0, 2), (3, 1)]:
        assert pmf_joint(zm, params, X0, z) == pytest.approx(pmf_joint(mip, base, X0, z), rel=1e-12)


def test_mzip1_zero_cell_example():
    params = ParameterSet(beta=[[0.0], [0.0]], gamma=[logit(0.6)])
    assert pmf_joint(ModelSpec("MZIP1"), params, X0, [0, 0]) == pytest.approx(0.4 + 0.6 * math.exp(-2), rel=1e-12)


def _closed_form_zero(spec, params):
    b = [float(v[0]) for v in params.beta]
    lam = np.exp(b)
    base = spec.base
    if base == "ip":
        f0 = math.exp(-lam.sum())
    elif base == "inb":
        phi = params.phi
        f0 = float(np.prod((phi / (lam + phi)) ** phi))
    elif base == "ih":
        f0 = float(np.prod(1 - expit(np.array(b))))
    elif base == "mp":
        f0 = math.exp(-lam.sum() - params.lambda0)
    else:
        phi = float(params.phi[0])
        f0 = (phi / (phi + lam.sum())) ** phi
    if spec.layer == "base":
        return f0
    g = float(expit(params.gamma[0]))
    return 1 - g + g * f0 if spec.layer == "zi" else 1 - g


@pytest.mark.parametrize("family", ALL_FAMILIES)
def test_zero_cell_identity(family, rng):
    spec = ModelSpec(family)
    params = random_params(spec, rng)
    assert pmf_joint(spec, params, X0, [0, 0]) == pytest.approx(_closed_form_zero(spec, params), rel=1e-12)


@pytest.mark.parametrize("family", ALL_FAMILIES)
def test_total_mass_on_grid(family):
    spec = ModelSpec(family)
    assert grid_pmf(spec, demo_params(spec)).sum() == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("family", ALL_FAMILIES)
def test_total_mass_on_tail_bounded_grid(family, rng):
    spec = ModelSpec(family)
    params = random_params(spec, rng)
    grid = GridSpec.for_model(spec, params, X0)
    assert grid.tail_mass_bound <= 1e-10
    assert grid_total_mass(spec, params, X0, grid) >= 1 - 1e-10


@pytest.mark.parametrize("zi, zm", [("MZIP2", "MZIP1"), ("MZMP2", "MZMP1")])
def test_type_two_poisson_with_zero_shock_is_type_one(zi, zm):
    params = ParameterSet(beta=[[0.2], [-0.3]], gamma=[0.4], lambda0=0.0)
    one = ParameterSet(beta=[[0.2], [-0.3]], gamma=[0.4])
    np.testing.assert_allclose(grid_pmf(ModelSpec(zi), params, 20), grid_pmf(ModelSpec(zm), one, 20), rtol=1e-13)


@pytest.mark.parametrize("family", ZI_FAMILIES)
def test_zero_inflated_reparameterized_as_zero_modified(family, rng):
    zi = ModelSpec(family)
    zm = ModelSpec(counterpart(Family(family)))
    params = random_params(zi, rng)
    pi0, pi0p = nonzero_probabilities(zi, params, X0[None, :])
    other = params.copy()
    other.gamma = np.array([logit(float(pi0p[0]))])
    np.testing.assert_allclose(grid_pmf(zi, params, 30), grid_pmf(zm, other, 30), rtol=1e-10, atol=1e-300)


@pytest.mark.parametrize("kinds", [("ZTP", "ZTNB"), ("USP", "USNB"), ("ZTNB", "USP")])
def test_hurdle_margins_factorize(kinds):
    spec = ModelSpec("MIH", margin_kinds=kinds)
    params = ParameterSet(beta=[[-0.5], [0.2]], alpha=[[-0.3], [0.1]], phi=[1.4, 0.9])
    pi = expit(np.array([-0.5, 0.2]))
    lam = np.exp([-0.3, 0.1])
    for z in [(0, 0), (2, 0), (0, 1), (3, 4)]:
        ref = 1.0
        for j in range(2):
            kind = MarginKind(kinds[j])
            phi = params.phi[j] if kind.has_dispersion else None
            ref *= 1 - pi[j] if z[j] == 0 else pi[j] * math.exp(logpmf_margin(z[j], kind, lam[j], phi))
        assert pmf_joint(spec, params, X0, z) == pytest.approx(ref, rel=1e-12)


def test_pmf_joint_requires_intercept():
    spec = ModelSpec("MIP")
    with pytest.raises(ValueError):
        pmf_joint(spec, ParameterSet(beta=[[0.0], [0.0]]), [0.0], [0, 0])


def test_pmf_joint_rejects_mismatched_params():
    with pytest.raises(ValueError):
        pmf_joint(ModelSpec("MZIP1"), ParameterSet(beta=[[0.0], [0.0]]), X0, [0, 0])


# -- classification ----------------------------------------------------------------


@pytest.mark.parametrize(
    "pi0, pi0p, label",
    [(0.9, 0.7, "inflated"), (0.5, 0.5, "standard"), (0.582, 0.736, "deflated"), (0.5, 0.5 + 5e-10, "standard")],
)
def test_classify_modification(pi0, pi0p, label):
    assert classify_modification(pi0, pi0p) == label


# -- moments -----------------------------------------------------------------------


def test_moments_no_inflation_limit():
    params = ParameterSet(beta=[[math.log(2)], [math.log(3)]], gamma=[logit(1 - 1e-12)])
    s = moments(ModelSpec("MZIP1"), params, X0)
    np.testing.assert_allclose(s.mean, [2, 3], rtol=1e-9)
    assert abs(s.covariance[0, 1]) < 1e-9


def test_moments_type_two_mzinb_covariance():
    params = ParameterSet(beta=[[0.0], [math.log(2)]], gamma=[logit(0.8)], phi=[2.0])
    s = moments(ModelSpec("MZINB2"), params, X0)
    assert s.covariance[0, 1] == pytest.approx(1.12, rel=1e-12)


def test_moments_type_two_mzip_covariance():
    lam0, lam, pi0 = 0.3, np.array([1.1, 0.6]), 0.7
    params = ParameterSet(beta=[[math.log(lam[0])], [math.log(lam[1])]], gamma=[logit(pi0)], lambda0=lam0)
    s = moments(ModelSpec("MZIP2"), params, X0)
    ref = pi0 * lam0 + pi0 * (1 - pi0) * (lam[0] + lam0) * (lam[1] + lam0)
    assert s.covariance[0, 1] == pytest.approx(ref, rel=1e-12)


def test_moments_hurdle_unit_shifted_mean():
    # zero-modified hurdle with USNB margins: E Z_j = (pi0'/pi0) pi_j (lambda_j + 1)
    params = ParameterSet(beta=[[-0.2], [0.4]], alpha=[[-0.5], [0.3]], gamma=[0.6], phi=[1.5, 0.8])
    spec = ModelSpec("MZMH1")
    pi = expit(np.array([-0.2, 0.4]))
    lam = np.exp([-0.5, 0.3])
    pi0 = 1 - np.prod(1 - pi)
    ratio = float(expit(0.6)) / pi0
    np.testing.assert_allclose(moments(spec, params, X0).mean, ratio * pi * (lam + 1), rtol=1e-12)


@pytest.mark.parametrize("family", ALL_FAMILIES)
@pytest.mark.parametrize("kinds", [None, ("ZTP", "ZTNB")])
def test_moments_match_grid(family, kinds, rng):
    if kinds is not None and not Family(family).is_hurdle:
        pytest.skip("margin kinds only apply to hurdle families")
    spec = ModelSpec(family, margin_kinds=kinds)
    params = random_params(spec, rng)
    closed = moments(spec, params, X0)
    grid = moments_by_grid(spec, params, X0)
    np.testing.assert_allclose(closed.mean, grid.mean, rtol=1e-8)
    np.testing.assert_allclose(closed.covariance, grid.covariance, rtol=1e-7, atol=1e-9)


@pytest.mark.parametrize("family", ALL_FAMILIES)
def test_moment_summary_invariants(family, rng):
    spec = ModelSpec(family)
    s = moments(spec, random_params(spec, rng), X0)
    np.testing.assert_allclose(s.covariance, s.covariance.T)
    np.testing.assert_allclose(np.diag(s.covariance), s.variance)
    assert s.total_mean == pytest.approx(s.mean.sum())
    assert s.total_variance == pytest.approx(s.variance.sum() + 2 * s.covariance[0, 1])
    assert np.all(np.abs(s.correlation) <= 1 + 1e-12)


def test_moments_with_covariates_use_the_row():
    spec = ModelSpec.build("MZINB1", covariates="all", p=2)
    params = ParameterSet(beta=[[0.1, 0.3, -0.2], [-0.2, 0.1, 0.4]], gamma=[0.5, -0.3, 0.2], phi=[1.2, 2.0])
    x = np.array([1.0, 1.0, 0.0])
    s = moments(spec, params, x)
    g = moments_by_grid(spec, params, x)
    np.testing.assert_allclose(s.mean, g.mean, rtol=1e-8)


# -- sampling ----------------------------------------------------------------------


def test_sampling_zero_fraction_mzip1():
    params = ParameterSet(beta=[[math.log(5)], [math.log(5)]], gamma=[0.0])
    data = sample_joint(ModelSpec("MZIP1"), params, X0, 10 ** 6, seed=4)
    assert data.zero_fraction == pytest.approx(0.5 + math.exp(-10) / 2, abs=0.002)


def test_sampling_common_shock_correlation():
    params = ParameterSet(beta=[[0.0], [0.0]], lambda0=1.0)
    data = sample_joint(ModelSpec("MP"), params, X0, 10 ** 6, seed=5)
    assert data.correlation()[0, 1] == pytest.approx(0.5, abs=0.01)


def test_sampling_is_deterministic_and_block_keyed():
    spec = ModelSpec("MZMNB2")
    params = ParameterSet(beta=[[0.1], [-0.4]], gamma=[0.3], phi=[1.3])
    a = sample_joint(spec, params, X0, BLOCK_ROWS + 100, seed=8)
    b = sample_joint(spec, params, X0, BLOCK_ROWS + 100, seed=8)
    c = sample_joint(spec, params, X0, BLOCK_ROWS, seed=8)
    np.testing.assert_array_equal(a.counts, b.counts)
    np.testing.assert_array_equal(a.counts[:BLOCK_ROWS], c.counts)


def test_zero_modified_samples_respect_gate():
    spec = ModelSpec("MZMP1")
    params = ParameterSet(beta=[[-2.0], [-2.0]], gamma=[logit(0.3)])
    data = sample_joint(spec, params, X0, 200000, seed=6)
    assert 1 - data.zero_fraction == pytest.approx(0.3, abs=0.004)


# -- specification -----------------------------------------------------------------


def test_family_catalog():
    assert len(ALL_FAMILIES) == 15
    assert Family.parse("Type I MZMH") is Family.MZMH1
    assert Family.MZINB2.label == "Type II MZINB"
    assert counterpart(Family.MZIP1) is Family.MZMP1
    with pytest.raises(ValueError):
        Family.parse("MZQP")


def test_margin_kinds_only_for_hurdles():
    assert ModelSpec("MZIH1").margin_kinds == (MarginKind.USNB, MarginKind.USNB)
    with pytest.raises(ValueError):
        ModelSpec("MZIP1", margin_kinds=("ZTP", "ZTP"))


def test_lambda0_takes_no_covariates():
    with pytest.raises(ValueError):
        ModelSpec("MZIP2", covariate_mask={"lambda0": (1,)})


def test_layout_and_pack_round_trip(rng):
    spec = ModelSpec.build("MZMH1", margin_kinds=("USNB", "ZTP"), covariates="all", p=2)
    params = random_params(spec, rng)
    names = spec.param_names(["age", "urban"])
    assert names[0] == "gamma:intercept" and names[1] == "gamma:age"
    assert names[-1] == "phi1"
    vec = spec.pack(params)
    assert vec.size == spec.n_params == len(names)
    np.testing.assert_array_equal(spec.unpack(vec).gamma, params.gamma)
    assert ModelSpec.from_dict(spec.to_dict()) == spec
    back = ParameterSet.from_dict(params.to_dict())
    np.testing.assert_array_equal(spec.pack(back), vec)


@pytest.mark.parametrize(
    "family, n_params",
    [("MIP", 2), ("MINB", 4), ("MIH", 6), ("MP", 3), ("MNB", 3), ("MZIP1", 3), ("MZINB1", 5), ("MZIH1", 7),
     ("MZIP2", 4), ("MZINB2", 4), ("MZMP1", 3), ("MZMNB1", 5), ("MZMH1", 7), ("MZMP2", 4), ("MZMNB2", 4)],
)
def test_parameter_counts(family, n_params):
    assert ModelSpec(family).n_params == n_params


def test_grid_points_cover_box():
    pts = grid_points(GridSpec((2, 3), 0.0))
    assert pts.shape == (12, 2)
