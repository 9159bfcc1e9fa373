"""Independent checks: grid summation, Monte Carlo, finite differences and
direct likelihood maximization.

Nothing here reuses the EM/MM code paths.  The direct maximizer only needs
the joint pmf and a derivative-free search, so agreement with the engines is
a meaningful cross-check.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import optimize, stats

from .multivariate.moments import MomentSummary, mixing_constant
from .multivariate.pmf import logpmf_rows
from .multivariate.sampling import sample_joint
from .multivariate.spec import ModelSpec, ParameterSet, row_params
from .observations import ObservationSet


@dataclass(frozen=True)
class GridSpec:
    """Support box ``[0, upper_j]`` per margin and a bound on the mass outside it."""

    upper: tuple
    tail_mass_bound: float

    @classmethod
    def for_model(cls, spec: ModelSpec, params: ParameterSet, covariates, tol: float = 1e-10,
                  cap: int = 2000) -> "GridSpec":
        """Smallest box whose neglected mass is at most ``tol`` by a union bound
        over the marginal tails."""
        x = np.atleast_2d(np.asarray(covariates, dtype=float))
        rp = row_params(spec, params, x)
        c = mixing_constant(spec, params, x[0])
        upper = []
        bound = 0.0
        for j in range(spec.m):
            sf = _marginal_sf(spec, rp, j)
            K = 1
            while c * sf(K) > tol / spec.m and K < cap:
                K = int(K * 1.5) + 1
            lo, hi = K // 2, K
            while lo < hi:  # smallest K meeting the target
                mid = (lo + hi) // 2
                if c * sf(mid) <= tol / spec.m:
                    hi = mid
                else:
                    lo = mid + 1
            upper.append(hi)
            bound += c * sf(hi)
        return cls(tuple(upper), float(bound))


def _marginal_sf(spec: ModelSpec, rp, j: int) -> Callable[[int], float]:
    """Survival function ``Pr(Y_j > k)`` of the base-model margin."""
    lam = float(rp.lam[0, j])
    base = spec.base
    if base == "ip":
        return lambda k: float(stats.poisson.sf(k, lam))
    if base == "mp":
        return lambda k: float(stats.poisson.sf(k, lam + rp.lambda0))
    if base in ("inb", "mnb"):
        phi = float(rp.phi[j] if base == "inb" else rp.phi[0])
        return lambda k: float(stats.nbinom.sf(k, phi, phi / (lam + phi)))
    kind = spec.margin_kinds[j]
    pi = float(rp.pi[0, j])
    phi = float(rp.phi[j]) if kind.has_dispersion else None
    if kind.truncated:
        dist = stats.poisson(lam) if phi is None else stats.nbinom(phi, phi / (lam + phi))
        p0 = float(dist.pmf(0))
        return lambda k: pi * float(dist.sf(k)) / (1.0 - p0)
    dist = stats.poisson(lam) if phi is None else stats.nbinom(phi, phi / (lam + phi))
    return lambda k: pi * float(dist.sf(k - 1))


def grid_points(grid: GridSpec) -> np.ndarray:
    return np.array(list(itertools.product(*[range(u + 1) for u in grid.upper])), dtype=np.int64)


def grid_total_mass(spec: ModelSpec, params: ParameterSet, covariates, grid: Optional[GridSpec] = None) -> float:
    """Sum of the joint pmf over the grid box."""
    x = np.atleast_1d(np.asarray(covariates, dtype=float))
    grid = grid or GridSpec.for_model(spec, params, x)
    Z = grid_points(grid)
    lp = logpmf_rows(spec, params, Z, np.broadcast_to(x, (Z.shape[0], x.size)))
    return float(np.exp(lp).sum())


def moments_by_grid(spec: ModelSpec, params: ParameterSet, covariates, grid: Optional[GridSpec] = None) -> MomentSummary:
    """Means and covariances by brute-force summation over the grid box."""
    x = np.atleast_1d(np.asarray(covariates, dtype=float))
    grid = grid or GridSpec.for_model(spec, params, x, tol=1e-14)
    Z = grid_points(grid).astype(float)
    p = np.exp(logpmf_rows(spec, params, Z.astype(np.int64), np.broadcast_to(x, (Z.shape[0], x.size))))
    mean = p @ Z
    D = Z - mean
    cov = (D * p[:, None]).T @ D
    return MomentSummary.from_covariance(mean, cov)


@dataclass
class MonteCarloMoments:
    summary: MomentSummary
    mean_se: np.ndarray
    covariance_se: np.ndarray
    total_mean_se: float
    total_variance_se: float


def monte_carlo_moments(spec: ModelSpec, params: ParameterSet, covariates, draws: int = 10 ** 6,
                        seed: int = 0) -> MonteCarloMoments:
    """Sample moments of ``draws`` joint draws with their standard errors."""
    x = np.atleast_1d(np.asarray(covariates, dtype=float))
    Z = sample_joint(spec, params, x, draws, seed).counts.astype(float)
    n = Z.shape[0]
    mean = Z.mean(axis=0)
    D = Z - mean
    cov = D.T @ D / (n - 1)
    m = spec.m
    cov_se = np.empty((m, m))
    for j in range(m):
        for k in range(m):
            prod = D[:, j] * D[:, k]
            cov_se[j, k] = prod.std(ddof=1) / np.sqrt(n)
    T = Z.sum(axis=1)
    dT = T - T.mean()
    return MonteCarloMoments(
        MomentSummary.from_covariance(mean, cov),
        Z.std(axis=0, ddof=1) / np.sqrt(n),
        cov_se,
        float(T.std(ddof=1) / np.sqrt(n)),
        float((dT * dT).std(ddof=1) / np.sqrt(n)),
    )


def fd_gradient(objective: Callable, point, rel_step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient with step ``rel_step * max(1, |x_k|)``."""
    x = np.atleast_1d(np.asarray(point, dtype=float))
    grad = np.empty(x.size)
    for k in range(x.size):
        h = rel_step * max(1.0, abs(x[k]))
        up, down = x.copy(), x.copy()
        up[k] += h
        down[k] -= h
        grad[k] = (objective(up) - objective(down)) / (2.0 * h)
    return grad


# -- direct maximum likelihood -------------------------------------------------


@dataclass
class OracleFit:
    params: Optional[ParameterSet]
    loglik: float
    identifiable: bool
    evaluations: int = 0
    message: str = ""


def _positive_mask(spec: ModelSpec) -> np.ndarray:
    return np.array([np.isfinite(lb) for _, lb in spec.layout()])


def _crude_center(spec: ModelSpec, data: ObservationSet) -> np.ndarray:
    """A data-driven starting point built from margin means only."""
    w = data.weights / data.n
    means = w @ data.counts.astype(float)
    frac = 1.0 - data.zero_fraction
    u = []
    for name, _ in spec.layout():
        comp = name.split(":")[0]
        if comp == "gamma":
            u.append(np.log(max(frac, 0.02) / max(1 - frac, 0.02)))
        elif comp.startswith("beta"):
            j = int(comp[4:]) - 1
            if spec.family.is_hurdle:
                share = float(w @ (data.counts[:, j] > 0))
                u.append(np.log(max(share, 0.02) / max(1 - share, 0.02)))
            else:
                u.append(np.log(means[j] / max(frac, 0.05) + 0.05))
        elif comp.startswith("alpha"):
            u.append(np.log(means[int(comp[5:]) - 1] + 0.1))
        else:  # phi or lambda0, on the log scale
            u.append(0.0 if comp.startswith("phi") else np.log(0.05))
    return np.array(u)


def direct_mle_small(data: ObservationSet, spec: ModelSpec, starts: int = 12, seed: int = 0,
                     tol: float = 1e-6, max_rounds: int = 40) -> OracleFit:
    """Maximize the observed log-likelihood of an intercept-only model directly.

    Random starts around a moment-based center are screened, then the best
    few are polished by repeated Nelder-Mead searches in unconstrained scale
    (log for ``phi`` and ``lambda0``) until a restart improves the
    log-likelihood by less than ``tol``.
    """
    if data.p != 0 or any(spec.columns(c) != (0,) for c in spec.components()):
        raise ValueError("direct search is limited to intercept-only models")
    data = data.compress()
    if data.weights[~data.zero_rows].sum() == 0:
        return OracleFit(None, float("nan"), False, 0, "all counts are zero; the model is not identifiable")
    if spec.layer == "zi" and data.weights[data.zero_rows].sum() == 0:
        return OracleFit(None, float("nan"), False, 0, "no all-zero rows; inflation is not identifiable")
    positive = _positive_mask(spec)
    X = data.design
    evals = [0]

    def to_natural(u):
        x = np.array(u, dtype=float)
        x[positive] = np.exp(np.clip(x[positive], -40.0, 40.0))
        return x

    def negloglik(u):
        evals[0] += 1
        try:
            value = float(data.weights @ logpmf_rows(spec, spec.unpack(to_natural(u)), data.counts, X))
        except (ValueError, FloatingPointError):
            return np.inf
        return -value if np.isfinite(value) else np.inf

    rng = np.random.default_rng(seed)
    center = _crude_center(spec, data)
    candidates = [center] + [center + rng.normal(0.0, 0.75, center.size) for _ in range(starts - 1)]
    with np.errstate(all="ignore"):
        screened = sorted(candidates, key=negloglik)[:3]
        best_u, best_f = None, np.inf
        for u0 in screened:
            u, f = u0, negloglik(u0)
            for _ in range(max_rounds):
                res = optimize.minimize(
                    negloglik, u, method="Nelder-Mead",
                    options={"xatol": 1e-10, "fatol": 1e-10, "maxiter": 4000 * u.size, "adaptive": True},
                )
                improved = f - res.fun
                if res.fun < f:
                    u, f = res.x, res.fun
                if improved < tol * 1e-2:
                    break
            if f < best_f:
                best_u, best_f = u, f
    return OracleFit(spec.unpack(to_natural(best_u)), -best_f, True, evals[0])


# -- self-check battery ------------------------------------------------------------


def self_check(quick: bool = True) -> list:
    """Run a compact oracle battery; returns ``(name, passed, detail)`` tuples."""
    from .fit_em import EmConfig, fit_zero_inflated
    from .fit_mm import MmConfig, fit_zero_modified
    from .multivariate.spec import ALL_FAMILIES
    from .numeric import digamma, log_gamma, trigamma

    out = []
    # special functions against recurrences
    x = np.linspace(0.1, 30.0, 50)
    err = np.max(np.abs(log_gamma(x + 1) - log_gamma(x) - np.log(x)))
    out.append(("log_gamma recurrence", err < 1e-12, f"max error {err:.2e}"))
    err = np.max(np.abs(digamma(x + 1) - digamma(x) - 1 / x))
    out.append(("digamma recurrence", err < 1e-12, f"max error {err:.2e}"))
    err = np.max(np.abs(trigamma(x) - trigamma(x + 1) - 1 / x ** 2))
    out.append(("trigamma recurrence", err < 1e-12, f"max error {err:.2e}"))
    # normalization of every family
    for fam in ALL_FAMILIES:
        spec = ModelSpec(fam)
        params = demo_params(spec)
        mass = grid_total_mass(spec, params, [1.0])
        out.append((f"mass {fam.value}", mass >= 1 - 1e-8, f"total {mass:.12f}"))
    # engine vs direct search on a small sample
    for fam, fitter, cfg in (("MZIP1", fit_zero_inflated, EmConfig(loglik_tol=1e-12)),
                             ("MZMP1", fit_zero_modified, MmConfig(loglik_tol=1e-12))):
        spec = ModelSpec(fam)
        data = sample_joint(spec, demo_params(spec), [1.0], 500, seed=11)
        engine = fitter(data, spec, cfg)
        direct = direct_mle_small(data, spec)
        gap = abs(engine.loglik - direct.loglik)
        out.append((f"direct MLE {fam}", gap < 1e-4, f"|engine - direct| = {gap:.2e}"))
    return out


def demo_params(spec: ModelSpec) -> ParameterSet:
    """Moderate intercept-only parameters for any family (used by checks and docs)."""
    gamma = None if spec.layer == "base" else np.array([0.3])
    m = spec.m
    if spec.family.is_hurdle:
        beta = [np.array([-0.4 + 0.2 * j]) for j in range(m)]
        alpha = [np.array([-0.2 - 0.1 * j]) for j in range(m)]
        phi = np.array([1.2 if k.has_dispersion else np.nan for k in spec.margin_kinds])
        return ParameterSet(beta=beta, gamma=gamma, alpha=alpha, phi=phi if spec.has_phi() else None)
    beta = [np.array([0.2 - 0.3 * j]) for j in range(m)]
    phi = {"inb": np.full(m, 1.5), "mnb": np.array([1.3])}.get(spec.base)
    lambda0 = 0.4 if spec.base == "mp" else None
    return ParameterSet(beta=beta, gamma=gamma, phi=phi, lambda0=lambda0)
