"""Closed-form means, variances and covariances.

All families share one mixing rule.  With ``c = 1`` (base), ``c = pi0``
(zero-inflated gate) or ``c = pi0' / pi0`` (zero-modified, ``pi0 = Pr(Y != 0)``),
every product moment of ``Z`` with no constant term is ``c`` times the same
moment of ``Y``, hence::

    E Z_j = c E Y_j
    Var Z_j = c E Y_j^2 - c^2 (E Y_j)^2
    Cov(Z_j, Z_k) = c E[Y_j Y_k] - c^2 E Y_j E Y_k
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..univariate import MarginKind, log_zero_prob
from .pmf import base_log_zero
from .spec import ModelSpec, ParameterSet, row_params


@dataclass
class MomentSummary:
    mean: np.ndarray
    variance: np.ndarray
    covariance: np.ndarray
    total_mean: float
    total_variance: float

    @classmethod
    def from_covariance(cls, mean, covariance) -> "MomentSummary":
        mean = np.asarray(mean, dtype=float)
        cov = np.asarray(covariance, dtype=float)
        cov = 0.5 * (cov + cov.T)
        return cls(mean, np.diag(cov).copy(), cov, float(mean.sum()), float(cov.sum()))

    @property
    def correlation(self) -> np.ndarray:
        sd = np.sqrt(self.variance)
        return self.covariance / np.outer(sd, sd)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "variance": self.variance.tolist(),
            "covariance": self.covariance.tolist(),
            "total_mean": self.total_mean,
            "total_variance": self.total_variance,
        }


def margin_raw_moments(kind, lam: float, phi=None) -> tuple:
    """``(E W, E W^2)`` of a positive-support margin."""
    kind = MarginKind.parse(kind)
    var_base = lam + (lam * lam / phi if kind.has_dispersion else 0.0)
    if kind.truncated:
        p_pos = -np.expm1(log_zero_prob(lam, phi if kind.has_dispersion else None))
        return lam / p_pos, (var_base + lam * lam) / p_pos
    return 1.0 + lam, var_base + (1.0 + lam) ** 2


def base_raw_moments(spec: ModelSpec, params: ParameterSet, x) -> tuple:
    """``(E Y, E Y Y^T)`` of the base model at one covariate row."""
    rp = row_params(spec, params, np.atleast_2d(x))
    lam = rp.lam[0]
    m = spec.m
    base = spec.base
    if base == "ih":
        pi = rp.pi[0]
        ew = np.empty(m)
        ew2 = np.empty(m)
        for j, kind in enumerate(spec.margin_kinds):
            phi = float(rp.phi[j]) if kind.has_dispersion else None
            ew[j], ew2[j] = margin_raw_moments(kind, lam[j], phi)
        mean = pi * ew
        second = np.outer(mean, mean)
        np.fill_diagonal(second, pi * ew2)
        return mean, second
    if base == "mp":
        mean = lam + rp.lambda0
        cov = np.full((m, m), rp.lambda0)
        np.fill_diagonal(cov, mean)
        return mean, cov + np.outer(mean, mean)
    mean = lam.copy()
    if base == "ip":
        cov = np.diag(lam)
    elif base == "inb":
        cov = np.diag(lam + lam * lam / rp.phi)
    else:  # mnb: gamma frailty with unit mean and variance 1/phi
        cov = np.outer(lam, lam) / float(rp.phi[0]) + np.diag(lam)
    return mean, cov + np.outer(mean, mean)


def mixing_constant(spec: ModelSpec, params: ParameterSet, x) -> float:
    if spec.layer == "base":
        return 1.0
    rp = row_params(spec, params, np.atleast_2d(x))
    gate = float(rp.gate[0])
    if spec.layer == "zi":
        return gate
    pi0 = float(-np.expm1(base_log_zero(spec, rp))[0])
    return gate / pi0


def moments(spec: ModelSpec, params: ParameterSet, covariates) -> MomentSummary:
    """Mean vector, covariance matrix and total-count moments at one covariate row."""
    spec.validate(params)
    x = np.atleast_1d(np.asarray(covariates, dtype=float))
    if x[0] != 1.0:
        raise ValueError("covariates must start with the intercept 1")
    mean_y, second_y = base_raw_moments(spec, params, x)
    c = mixing_constant(spec, params, x)
    mean = c * mean_y
    cov = c * second_y - np.outer(mean, mean)
    return MomentSummary.from_covariance(mean, cov)
