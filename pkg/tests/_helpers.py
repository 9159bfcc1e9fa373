"""Shared builders for the test modules."""

import numpy as np

from mzcount.multivariate import sample_joint
from mzcount.multivariate.spec import ModelSpec, ParameterSet


def random_params(spec: ModelSpec, rng) -> ParameterSet:
    """Moderate random parameters; non-intercept coefficients are small."""

    def coefs(comp, lo, hi):
        k = len(spec.columns(comp))
        out = rng.uniform(-0.4, 0.4, k)
        out[0] = rng.uniform(lo, hi)
        return out

    gamma = None if spec.layer == "base" else coefs("gamma", -0.5, 1.5)
    if spec.family.is_hurdle:
        beta = [coefs(f"beta{j + 1}", -1.5, 0.5) for j in range(spec.m)]
        alpha = [coefs(f"alpha{j + 1}", -1.2, 0.3) for j in range(spec.m)]
        phi = np.array([rng.uniform(0.5, 3.0) if k.has_dispersion else np.nan for k in spec.margin_kinds])
        return ParameterSet(beta=beta, gamma=gamma, alpha=alpha, phi=phi if spec.has_phi() else None)
    beta = [coefs(f"beta{j + 1}", -1.0, 0.7) for j in range(spec.m)]
    phi = None
    if spec.base == "inb":
        phi = rng.uniform(0.5, 3.0, spec.m)
    elif spec.base == "mnb":
        phi = np.array([rng.uniform(0.5, 3.0)])
    lambda0 = float(rng.uniform(0.1, 1.0)) if spec.base == "mp" else None
    return ParameterSet(beta=beta, gamma=gamma, phi=phi, lambda0=lambda0)


def binary_design(n: int, p: int, rng, prob=0.5) -> np.ndarray:
    return np.column_stack([np.ones(n), (rng.random((n, p)) < prob).astype(float)])


def synthetic(spec: ModelSpec, params: ParameterSet, n: int, seed: int, p: int = 0):
    rng = np.random.default_rng([seed, 7])
    X = binary_design(n, p, rng) if p else np.ones((n, 1))
    return sample_joint(spec, params, X, seed=seed)
