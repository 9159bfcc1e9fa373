"""Univariate count distributions: Poisson, negative binomial, their
zero-inflated and zero-modified versions, and the four positive-support
margins (zero-truncated or unit-shifted Poisson / negative binomial).

Vectorized ``log*`` functions take arrays and are what the fitting engines
use; the ``pmf_*`` functions are scalar conveniences with argument checks.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .numeric import (
    NonAscentError,
    SingularSystemError,
    ascent_newton_step,
    digamma,
    log_factorial,
    log_gamma,
    positive_definite_part,
    trigamma,
)

ETA_CAP = 30.0
_RISING_LOOP_MAX = 64


class MarginKind(str, enum.Enum):
    ZTP = "ZTP"
    ZTNB = "ZTNB"
    USP = "USP"
    USNB = "USNB"

    @property
    def has_dispersion(self) -> bool:
        return self in (MarginKind.ZTNB, MarginKind.USNB)

    @property
    def truncated(self) -> bool:
        return self in (MarginKind.ZTP, MarginKind.ZTNB)

    @classmethod
    def parse(cls, value) -> "MarginKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"unknown margin kind {value!r}") from None


@dataclass
class UnivariateParams:
    lam: float
    phi: Optional[float] = None
    pi0: Optional[float] = None

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.phi is not None and not self.phi > 0:
            raise ValueError("phi must be positive")
        if self.pi0 is not None and not 0 < self.pi0 < 1:
            raise ValueError("pi0 must lie in (0, 1)")


def _check_counts(y, lower=0):
    arr = np.asarray(y)
    if np.any(arr < lower) or np.any(np.asarray(arr, dtype=float) % 1 != 0):
        raise ValueError(f"counts must be integers >= {lower}")
    return arr


def log_rising(phi, y):
    """log Gamma(y + phi) - log Gamma(phi) for integer ``y >= 0``."""
    phi, y = np.broadcast_arrays(np.asarray(phi, float), np.asarray(y, float))
    out = np.zeros(phi.shape)
    small = y <= _RISING_LOOP_MAX
    if small.any():
        ps, ys = phi[small], y[small]
        acc = np.zeros(ps.shape)
        for k in range(int(ys.max()) if ys.size else 0):
            live = ys > k
            acc[live] += np.log(ps[live] + k)
        out[small] = acc
    if (~small).any():
        out[~small] = log_gamma(y[~small] + phi[~small]) - log_gamma(phi[~small])
    return out


def logpmf_poisson(y, lam):
    y = np.asarray(y, dtype=float)
    lam = np.asarray(lam, dtype=float)
    return y * np.log(lam) - lam - log_factorial(y)


def logpmf_negbin(y, lam, phi):
    y = np.asarray(y, dtype=float)
    lam = np.asarray(lam, dtype=float)
    phi = np.asarray(phi, dtype=float)
    return (
        log_rising(phi, y)
        - log_factorial(y)
        + y * (np.log(lam) - np.log(lam + phi))
        - phi * np.log1p(lam / phi)
    )


def log_zero_prob(lam, phi=None):
    """log Pr(Y = 0) of the Poisson (``phi is None``) or NB base."""
    lam = np.asarray(lam, dtype=float)
    if phi is None:
        return -lam
    return -np.asarray(phi, dtype=float) * np.log1p(lam / phi)


def log1mexp(a):
    """log(1 - exp(a)) for a <= 0, accurate near both ends."""
    a = np.asarray(a, dtype=float)
    return np.where(a > -0.6931471805599453, np.log(-np.expm1(a)), np.log1p(-np.exp(a)))


def logpmf_margin(w, kind, lam, phi=None):
    """Log pmf of a positive-support margin at ``w >= 1`` (vectorized)."""
    kind = MarginKind.parse(kind)
    w = np.asarray(w, dtype=float)
    if kind.has_dispersion and phi is None:
        raise ValueError(f"{kind.value} needs a dispersion parameter")
    if kind is MarginKind.USP:
        return logpmf_poisson(w - 1, lam)
    if kind is MarginKind.USNB:
        return logpmf_negbin(w - 1, lam, phi)
    if kind is MarginKind.ZTP:
        return logpmf_poisson(w, lam) - log1mexp(log_zero_prob(lam))
    return logpmf_negbin(w, lam, phi) - log1mexp(log_zero_prob(lam, phi))


def pmf_poisson(y, lam) -> float:
    if not lam > 0:
        raise ValueError("lambda must be positive")
    _check_counts(y)
    return float(np.exp(logpmf_poisson(y, lam)))


def pmf_negbin(y, lam, phi) -> float:
    if not lam > 0 or not phi > 0:
        raise ValueError("lambda and phi must be positive")
    _check_counts(y)
    return float(np.exp(logpmf_negbin(y, lam, phi)))


def pmf_margin(w, kind, params: UnivariateParams) -> float:
    _check_counts(w, lower=1)
    return float(np.exp(logpmf_margin(w, kind, params.lam, params.phi)))


def pmf_zero_modified(z, kind, params: UnivariateParams, pi0_prime: float) -> float:
    """Hurdle pmf: ``1 - pi0_prime`` at zero, ``pi0_prime * f_W(z)`` above."""
    if not 0 < pi0_prime < 1:
        raise ValueError("pi0_prime must lie in (0, 1)")
    _check_counts(z)
    if z == 0:
        return 1.0 - pi0_prime
    return pi0_prime * pmf_margin(z, kind, params)


# ---------------------------------------------------------------------------
# Margin regression: log f_W(w; lambda = exp(eta), phi = exp(rho))
# ---------------------------------------------------------------------------


def margin_loglik_derivatives(w, kind, eta, rho=None):
    """Per-observation log pmf of a margin and its derivatives.

    Derivatives are with respect to ``eta = log lambda`` and ``rho = log phi``.
    Returns ``(ll, d_eta, d_rho, d2_eta, d2_rho, d2_eta_rho)``; the ``rho``
    entries are ``None`` for the Poisson kinds.
    """
    kind = MarginKind.parse(kind)
    w = np.asarray(w, dtype=float)
    eta = np.clip(np.asarray(eta, dtype=float), -ETA_CAP, ETA_CAP)
    lam = np.exp(eta)
    y = w - 1.0 if not kind.truncated else w

    if not kind.has_dispersion:
        ll = logpmf_poisson(y, lam)
        d_eta = y - lam
        d2_eta = -lam
        d_rho = d2_rho = d2_er = None
        if kind.truncated:
            # T = -log(1 - exp(a)), a = -lambda
            a = -lam
            q = np.exp(a - log1mexp(a))
            ll = ll - log1mexp(a)
            d_eta = d_eta + q * (-lam)
            d2_eta = d2_eta + q * (1 + q) * lam * lam + q * (-lam)
        return ll, d_eta, d_rho, d2_eta, d_rho, d2_er

    phi = np.exp(np.asarray(rho, dtype=float))
    s = lam + phi
    ll = logpmf_negbin(y, lam, phi)
    d_eta = phi * (y - lam) / s
    d2_eta = -phi * lam * (y + phi) / s**2
    d_phi = digamma(y + phi) - digamma(phi) + np.log(phi / s) + (lam - y) / s
    d2_phi = trigamma(y + phi) - trigamma(phi) + (lam * lam + phi * y) / (phi * s**2)
    d2_eta_phi = lam * (y - lam) / s**2
    if kind.truncated:
        a = phi * np.log(phi / s)
        q = np.exp(a - log1mexp(a))
        da_eta = -phi * lam / s
        d2a_eta = -phi * phi * lam / s**2
        da_phi = np.log(phi / s) + lam / s
        d2a_phi = lam * lam / (phi * s**2)
        d2a_eta_phi = -lam * lam / s**2
        qq = q * (1 + q)
        ll = ll - log1mexp(a)
        d_eta = d_eta + q * da_eta
        d_phi = d_phi + q * da_phi
        d2_eta = d2_eta + qq * da_eta**2 + q * d2a_eta
        d2_phi = d2_phi + qq * da_phi**2 + q * d2a_phi
        d2_eta_phi = d2_eta_phi + qq * da_eta * da_phi + q * d2a_eta_phi
    d_rho = phi * d_phi
    d2_rho = phi * phi * d2_phi + phi * d_phi
    d2_eta_rho = phi * d2_eta_phi
    return ll, d_eta, d_rho, d2_eta, d2_rho, d2_eta_rho


@dataclass
class MarginFit:
    """Result of fitting one positive-support margin."""

    kind: MarginKind
    coef: np.ndarray
    phi: Optional[float]
    loglik: float
    n: float
    converged: bool
    iterations: int
    loglik_trace: list = field(default_factory=list)
    observed: Optional[np.ndarray] = None
    expected: Optional[np.ndarray] = None
    chi2: Optional[float] = None

    @property
    def params(self) -> UnivariateParams:
        """Fitted (lambda, phi) at the intercept, i.e. for an all-zero covariate row."""
        return UnivariateParams(lam=float(np.exp(self.coef[0])), phi=self.phi)


class ConvergenceError(RuntimeError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


def _margin_objective(w, X, weights, kind, theta):
    k = X.shape[1]
    eta = X @ theta[:k]
    rho = theta[k] if kind.has_dispersion else None
    if rho is not None and not -30 < rho < 30:
        return -np.inf
    ll = margin_loglik_derivatives(w, kind, eta, rho)[0]
    return float(weights @ ll)


def _margin_grad_hess(w, X, weights, kind, theta):
    k = X.shape[1]
    eta = X @ theta[:k]
    rho = theta[k] if kind.has_dispersion else None
    _, de, dr, d2e, d2r, d2er = margin_loglik_derivatives(w, kind, eta, rho)
    g_beta = X.T @ (weights * de)
    H_bb = (X * (weights * d2e)[:, None]).T @ X
    if rho is None:
        return g_beta, H_bb
    g = np.append(g_beta, weights @ dr)
    H = np.zeros((k + 1, k + 1))
    H[:k, :k] = H_bb
    H[:k, k] = H[k, :k] = X.T @ (weights * d2er)
    H[k, k] = weights @ d2r
    return g, H


def fit_margin_regression(
    w,
    X=None,
    kind=MarginKind.USNB,
    weights=None,
    max_iter: int = 500,
    tol: float = 1e-12,
    init=None,
) -> MarginFit:
    """Maximum likelihood for a positive-support margin with log-link covariates.

    Newton ascent in ``(coefficients, log phi)``.
    """
    kind = MarginKind.parse(kind)
    w = np.asarray(w, dtype=float)
    if w.size == 0:
        raise ValueError("no positive observations to fit")
    _check_counts(w, lower=1)
    X = np.ones((w.size, 1)) if X is None else np.asarray(X, dtype=float)
    weights = np.ones(w.size) if weights is None else np.asarray(weights, dtype=float)
    n = float(weights.sum())
    if kind.has_dispersion and np.unique(w).size < 2:
        raise ValueError(f"{kind.value} needs at least two distinct counts")

    k = X.shape[1]
    if init is None:
        mean = float(weights @ w) / n
        loc = mean - 1.0 if not kind.truncated else mean
        theta = np.zeros(k + kind.has_dispersion)
        theta[0] = np.log(max(loc, 0.05))
    else:
        theta = np.asarray(init, dtype=float).copy()

    def objective(t):
        return _margin_objective(w, X, weights, kind, t)

    ll = objective(theta)
    trace = [ll]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g, H = _margin_grad_hess(w, X, weights, kind, theta)
        negH = -H
        try:
            report = ascent_newton_step(g, negH, theta, objective)
        except SingularSystemError:
            report = ascent_newton_step(g, positive_definite_part(negH), theta, objective)
        except NonAscentError:
            converged = True
            break
        step = np.max(np.abs(report.proposed_delta)) if report.proposed_delta.size else 0.0
        theta = report.params
        # keep eta within the overflow guard
        new_ll = report.objective_after
        trace.append(new_ll)
        done = abs(new_ll - ll) <= tol * max(1.0, abs(new_ll)) and step < 1e-8
        ll = new_ll
        if done or np.max(np.abs(g)) < 1e-10 * max(1.0, n):
            converged = True
            break
    phi = float(np.exp(theta[k])) if kind.has_dispersion else None
    result = MarginFit(kind, theta[:k].copy(), phi, ll, n, converged, it, trace)
    if not converged:
        raise ConvergenceError(
            f"{kind.value} margin fit did not converge in {max_iter} iterations", result
        )
    return result


def chi_square_table(w, kind, lam, phi=None, weights=None, last_cell: int = 6):
    """Observed and expected cell counts for ``1..last_cell-1`` plus a pooled
    ``>= last_cell`` cell, and the Pearson statistic."""
    kind = MarginKind.parse(kind)
    w = np.asarray(w, dtype=float)
    weights = np.ones(w.size) if weights is None else np.asarray(weights, dtype=float)
    lam = np.broadcast_to(np.asarray(lam, dtype=float), w.shape)
    cells = np.arange(1, last_cell)
    observed = np.array([weights[w == c].sum() for c in cells] + [weights[w >= last_cell].sum()])
    probs = np.exp(logpmf_margin(cells[None, :], kind, lam[:, None],
                                 None if phi is None else phi))
    expected_head = weights @ probs
    expected = np.append(expected_head, weights.sum() - expected_head.sum())
    chi2 = float(np.sum((observed - expected) ** 2 / expected))
    return observed, expected, chi2


def fit_truncated_margin(
    positive_counts,
    kind,
    X=None,
    weights=None,
    max_iter: int = 500,
) -> MarginFit:
    """Fit a ZTP/ZTNB/USP/USNB margin to positive counts.

    Without covariates the result also carries the observed/expected cell
    counts (cells 1-5 and a pooled ">= 6" cell) and the chi-square statistic.
    """
    w = _check_counts(positive_counts, lower=1)
    fit = fit_margin_regression(w, X=X, kind=kind, weights=weights, max_iter=max_iter)
    lam = np.exp(np.clip((np.ones((np.size(w), 1)) if X is None else np.asarray(X, float)) @ fit.coef,
                         -ETA_CAP, ETA_CAP))
    fit.observed, fit.expected, fit.chi2 = chi_square_table(w, fit.kind, lam, fit.phi, weights)
    return fit


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

BaseName = Union[str, MarginKind]


def _rng(seed):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def draw_base(rng, lam, phi, size=None):
    """Poisson (``phi is None``) or negative binomial draws."""
    if phi is None:
        return rng.poisson(lam, size=size)
    return rng.negative_binomial(phi, phi / (lam + phi), size=size)


def draw_margin(rng, kind, lam, phi=None, size=None):
    """Draws from a positive-support margin.

    Zero-truncated kinds use inversion of the base cdf restricted to
    ``(F(0), 1)``, which avoids rejection loops for small ``lambda``.
    """
    from scipy import stats

    kind = MarginKind.parse(kind)
    if not kind.truncated:
        return 1 + draw_base(rng, lam, phi if kind.has_dispersion else None, size)
    lam = np.asarray(lam, dtype=float)
    shape = size if size is not None else lam.shape
    if kind is MarginKind.ZTP:
        dist = stats.poisson(lam)
        p0 = np.exp(-lam)
    else:
        dist = stats.nbinom(phi, phi / (lam + phi))
        p0 = np.exp(log_zero_prob(lam, phi))
    u = rng.uniform(size=shape)
    q = p0 + u * (1.0 - p0)
    draws = dist.ppf(q)
    return np.maximum(draws, 1).astype(np.int64)


def sample_univariate(dist: BaseName, params: UnivariateParams, count: int, seed: int) -> np.ndarray:
    """Sample ``count`` draws.

    ``dist`` is ``"poisson"``/``"negbin"`` for a base distribution or a
    :class:`MarginKind`.  When ``params.pi0`` is set it is the Bernoulli
    mixing probability: zero inflation ``Z = U0 * Y`` for a base distribution,
    zero modification ``Z = U0' * W`` for a margin kind.
    """
    if count < 0:
        raise ValueError("count must be nonnegative")
    rng = _rng(seed)
    if isinstance(dist, MarginKind) or str(dist).upper() in MarginKind.__members__:
        kind = MarginKind.parse(dist)
        if kind.has_dispersion and params.phi is None:
            raise ValueError(f"{kind.value} needs phi")
        values = draw_margin(rng, kind, params.lam, params.phi, size=count)
    elif dist == "poisson":
        values = draw_base(rng, params.lam, None, size=count)
    elif dist == "negbin":
        if params.phi is None:
            raise ValueError("negbin needs phi")
        values = draw_base(rng, params.lam, params.phi, size=count)
    else:
        raise ValueError(f"unknown distribution {dist!r}")
    if params.pi0 is not None:
        gate = rng.uniform(size=count) < params.pi0
        values = np.where(gate, values, 0)
    return np.asarray(values, dtype=np.int64)
