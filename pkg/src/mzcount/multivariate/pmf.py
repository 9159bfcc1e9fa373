"""Joint probability mass functions of the fifteen count families.

Every family is a layer over one of five base models ``Y``: independent
Poisson (``ip``), independent negative binomial (``inb``), independent
hurdle margins ``V_j W_j`` (``ih``), common-shock Poisson (``mp``) and the
gamma-mixed multivariate negative binomial (``mnb``).  The zero-inflated
layer mixes ``Y`` with a point mass at zero; the zero-modified layer replaces
the mass of the all-zero outcome by ``1 - pi0'``.
"""

from __future__ import annotations

import numpy as np

from ..numeric import log_factorial
from ..univariate import (
    log1mexp,
    log_rising,
    log_zero_prob,
    logpmf_margin,
    logpmf_negbin,
    logpmf_poisson,
)
from .spec import ModelSpec, ParameterSet, RowParams, log_expit, row_params


def _counts(z) -> np.ndarray:
    z = np.asarray(z)
    zf = z.astype(float)
    if np.any(zf < 0) or np.any(zf % 1 != 0):
        raise ValueError("counts must be nonnegative integers")
    return z.astype(np.int64)


# -- base models: row-vectorized log pmfs ---------------------------------------


def logpmf_mp_rows(Z, lambda0, Lam) -> np.ndarray:
    """Log pmf of the common-shock Poisson model, one value per row.

    ``Z`` and ``Lam`` are ``(n, m)``; ``lambda0`` is a scalar or ``(n,)``.
    The sum over the shared shock ``n0 = 0..min_j z_j`` uses log-sum-exp.
    """
    Z = np.atleast_2d(Z).astype(float)
    Lam = np.broadcast_to(np.asarray(Lam, dtype=float), Z.shape)
    lam0 = np.broadcast_to(np.asarray(lambda0, dtype=float), Z.shape[:1])
    logLam = np.log(Lam)
    top = Z.min(axis=1)
    kmax = int(top.max()) if top.size else 0
    terms = np.full((Z.shape[0], kmax + 1), -np.inf)
    with np.errstate(divide="ignore"):
        log_lam0 = np.log(lam0)
    for k in range(kmax + 1):
        live = top >= k
        if not live.any():
            continue
        R = Z[live] - k
        val = np.sum(R * logLam[live] - log_factorial(R), axis=1)
        if k > 0:
            l0 = log_lam0[live]
            val = np.where(np.isfinite(l0), val + k * l0 - log_factorial(k), -np.inf)
        terms[live, k] = val
    peak = terms.max(axis=1)
    lse = peak + np.log(np.exp(terms - peak[:, None]).sum(axis=1))
    return lse - lam0 - Lam.sum(axis=1)


def logpmf_mnb_rows(Z, Lam, phi) -> np.ndarray:
    """Log pmf of the multivariate negative binomial with shared dispersion."""
    Z = np.atleast_2d(Z).astype(float)
    Lam = np.broadcast_to(np.asarray(Lam, dtype=float), Z.shape)
    phi = float(np.atleast_1d(phi)[0])
    s = Z.sum(axis=1)
    L = Lam.sum(axis=1)
    return (
        log_rising(phi, s)
        - log_factorial(Z).sum(axis=1)
        + np.sum(Z * np.log(Lam), axis=1)
        - s * np.log(L + phi)
        - phi * np.log1p(L / phi)
    )


def _phi_j(rp: RowParams, j: int):
    return None if rp.phi is None else float(rp.phi[j])


def base_logpmf(spec: ModelSpec, rp: RowParams, Z) -> np.ndarray:
    """log Pr(Y = z) of the base model for each row."""
    Z = np.atleast_2d(Z)
    base = spec.base
    if base == "ip":
        return logpmf_poisson(Z, rp.lam).sum(axis=1)
    if base == "inb":
        return sum(logpmf_negbin(Z[:, j], rp.lam[:, j], rp.phi[j]) for j in range(spec.m))
    if base == "mp":
        return logpmf_mp_rows(Z, rp.lambda0, rp.lam)
    if base == "mnb":
        return logpmf_mnb_rows(Z, rp.lam, rp.phi)
    out = np.zeros(Z.shape[0])
    for j, kind in enumerate(spec.margin_kinds):
        zj = Z[:, j]
        pos = zj > 0
        out += np.where(pos, log_expit(rp.eta_pi[:, j]), log_expit(-rp.eta_pi[:, j]))
        if pos.any():
            phi = _phi_j(rp, j) if kind.has_dispersion else None
            contrib = np.zeros(Z.shape[0])
            contrib[pos] = logpmf_margin(zj[pos], kind, rp.lam[pos, j], phi)
            out += contrib
    return out


def base_log_zero(spec: ModelSpec, rp: RowParams) -> np.ndarray:
    """log Pr(Y = 0) of the base model for each row."""
    base = spec.base
    if base == "ip":
        return -rp.lam.sum(axis=1)
    if base == "inb":
        return sum(log_zero_prob(rp.lam[:, j], rp.phi[j]) for j in range(spec.m))
    if base == "mp":
        return -rp.lambda0 - rp.lam.sum(axis=1)
    if base == "mnb":
        phi = float(rp.phi[0])
        return -phi * np.log1p(rp.lam.sum(axis=1) / phi)
    return log_expit(-rp.eta_pi).sum(axis=1)


# -- family layer --------------------------------------------------------------


def family_logpmf(spec: ModelSpec, rp: RowParams, Z) -> np.ndarray:
    Z = np.atleast_2d(Z)
    logf = base_logpmf(spec, rp, Z)
    if spec.layer == "base":
        return logf
    zero = np.all(Z == 0, axis=1)
    log_on = log_expit(rp.eta_gamma)
    log_off = log_expit(-rp.eta_gamma)
    if spec.layer == "zi":
        at_zero = np.logaddexp(log_off, log_on + logf)
        return np.where(zero, at_zero, log_on + logf)
    # zero-modified: renormalize the nonzero part of Y
    with np.errstate(divide="ignore"):
        log_nonzero = log1mexp(np.minimum(base_log_zero(spec, rp), 0.0))
    return np.where(zero, log_off, log_on + logf - log_nonzero)


def logpmf_rows(spec: ModelSpec, params: ParameterSet, Z, X) -> np.ndarray:
    """Log pmf of each row of ``Z`` given its design row in ``X``."""
    Z = _counts(np.atleast_2d(Z))
    if Z.shape[1] != spec.m:
        raise ValueError(f"expected {spec.m} margins, got {Z.shape[1]}")
    return family_logpmf(spec, row_params(spec, params, X), Z)


def loglik(spec: ModelSpec, params: ParameterSet, data) -> float:
    """Weighted log-likelihood of an ObservationSet."""
    return float(data.weights @ logpmf_rows(spec, params, data.counts, data.design))


def pmf_joint(spec: ModelSpec, params: ParameterSet, covariates, z) -> float:
    """Pr(Z = z) for one covariate row (which starts with the intercept 1)."""
    spec.validate(params)
    x = np.atleast_1d(np.asarray(covariates, dtype=float))
    if x[0] != 1.0:
        raise ValueError("covariates must start with the intercept 1")
    return float(np.exp(logpmf_rows(spec, params, np.atleast_1d(z)[None, :], x[None, :])[0]))


def pmf_mp(z, lambda0, lambdas) -> float:
    """Common-shock Poisson pmf."""
    z = _counts(np.atleast_1d(z))
    lam = np.asarray(lambdas, dtype=float)
    if lambda0 < 0 or np.any(lam <= 0) or lam.shape != z.shape:
        raise ValueError("need lambda0 >= 0 and one positive lambda per margin")
    return float(np.exp(logpmf_mp_rows(z[None, :], lambda0, lam[None, :])[0]))


def pmf_mnb(z, lambdas, phi) -> float:
    """Multivariate negative binomial pmf (gamma-mixed Poisson margins)."""
    z = _counts(np.atleast_1d(z))
    lam = np.asarray(lambdas, dtype=float)
    if not phi > 0 or np.any(lam <= 0) or lam.shape != z.shape:
        raise ValueError("need phi > 0 and one positive lambda per margin")
    return float(np.exp(logpmf_mnb_rows(z[None, :], lam[None, :], phi)[0]))


# -- zero-mass accessors --------------------------------------------------------


def nonzero_probabilities(spec: ModelSpec, params: ParameterSet, X):
    """Per-row ``(pi0, pi0_prime)``.

    ``pi0 = Pr(Y != 0)`` for the base model and ``pi0_prime = Pr(Z != 0)``
    for the family.  For zero-modified families ``pi0_prime`` is the gate
    probability; for zero-inflated ones it equals ``gate * pi0``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    rp = row_params(spec, params, X)
    pi0 = -np.expm1(base_log_zero(spec, rp))
    if spec.layer == "base":
        return pi0, pi0.copy()
    gate = rp.gate
    if spec.layer == "zi":
        return pi0, gate * pi0
    return pi0, gate


def gate_probability(spec: ModelSpec, params: ParameterSet, X) -> np.ndarray:
    """Per-row mixing probability ``expit(x'gamma)`` of a ZI or ZM family."""
    if spec.layer == "base":
        raise ValueError("base families have no gate")
    return row_params(spec, params, np.atleast_2d(X)).gate


def classify_modification(pi0: float, pi0_prime: float, tol: float = 1e-9) -> str:
    """``inflated``, ``standard`` or ``deflated`` relative to the base model."""
    if pi0_prime < pi0 - tol:
        return "inflated"
    if abs(pi0_prime - pi0) <= tol:
        return "standard"
    return "deflated"
