"""Weighted objective blocks maximized inside the EM and MM iterations.

Each block returns ``(value, gradient, hessian)`` with additive constants
dropped.  The per-row coefficient ``c`` carries the E-step or minorization
weights, so the same block serves the complete-data expectations and the
zero-truncation surrogates:

* Poisson:   ``sum w [y eta - c exp(eta)]``
* NB:        ``sum w [log Gamma(z+phi) - log Gamma(phi) + z log(lam/(lam+phi))
  + c phi log(phi/(lam+phi))]``
* logistic:  ``sum w [y log pi + (c - y) log(1 - pi)]``
* gamma mixing: ``sum w [a (phi log phi - log Gamma(phi)) + (phi - 1) S - phi R]``
"""

from __future__ import annotations

import numpy as np

from .numeric import digamma, log_gamma, trigamma
from .univariate import ETA_CAP, log_rising

_LOOP_MAX = 64


def digamma_rising(phi, z):
    """psi(z + phi) - psi(phi) for integer ``z >= 0``."""
    phi, z = np.broadcast_arrays(np.asarray(phi, float), np.asarray(z, float))
    out = np.zeros(phi.shape)
    small = z <= _LOOP_MAX
    if small.any():
        ps, zs = phi[small], z[small]
        acc = np.zeros(ps.shape)
        for k in range(int(zs.max()) if zs.size else 0):
            live = zs > k
            acc[live] += 1.0 / (ps[live] + k)
        out[small] = acc
    if (~small).any():
        out[~small] = digamma(z[~small] + phi[~small]) - digamma(phi[~small])
    return out


def trigamma_rising(phi, z):
    """psi_1(z + phi) - psi_1(phi) for integer ``z >= 0``."""
    phi, z = np.broadcast_arrays(np.asarray(phi, float), np.asarray(z, float))
    out = np.zeros(phi.shape)
    small = z <= _LOOP_MAX
    if small.any():
        ps, zs = phi[small], z[small]
        acc = np.zeros(ps.shape)
        for k in range(int(zs.max()) if zs.size else 0):
            live = zs > k
            acc[live] -= 1.0 / (ps[live] + k) ** 2
        out[small] = acc
    if (~small).any():
        out[~small] = trigamma(z[~small] + phi[~small]) - trigamma(phi[~small])
    return out


def _eta(X, beta):
    return np.clip(X @ beta, -ETA_CAP, ETA_CAP)


def poisson_block(beta, X, w, y, c):
    eta = _eta(X, beta)
    lam = np.exp(eta)
    value = float(w @ (y * eta - c * lam))
    grad = X.T @ (w * (y - c * lam))
    hess = -(X.T * (w * c * lam)) @ X
    return value, grad, hess


def logistic_block(beta, X, w, y, c):
    eta = X @ beta
    log_pi = -np.logaddexp(0.0, -eta)
    log_1mpi = -np.logaddexp(0.0, eta)
    pi = np.exp(log_pi)
    value = float(w @ (y * log_pi + (c - y) * log_1mpi))
    grad = X.T @ (w * (y - c * pi))
    hess = -(X.T * (w * c * pi * (1.0 - pi))) @ X
    return value, grad, hess


def negbin_block(theta, X, w, z, c):
    """NB block in ``theta = (beta, phi)`` with ``phi`` on its natural scale."""
    beta, phi = theta[:-1], theta[-1]
    if not phi > 0:
        return -np.inf, None, None
    eta = _eta(X, beta)
    lam = np.exp(eta)
    lp = lam + phi
    log_lp = np.log(lp)
    value = float(w @ (log_rising(phi, z) + z * (eta - log_lp) + c * phi * (np.log(phi) - log_lp)))
    d_eta = phi * (z - c * lam) / lp
    d_phi = digamma_rising(phi, z) + c * (np.log(phi) - log_lp) + (c * lam - z) / lp
    h_eta = -phi * lam * (c * phi + z) / lp ** 2
    h_phi = trigamma_rising(phi, z) + c * lam / (phi * lp) - (c * lam - z) / lp ** 2
    h_cross = (z - c * lam) * lam / lp ** 2
    k = X.shape[1]
    grad = np.empty(k + 1)
    grad[:k] = X.T @ (w * d_eta)
    grad[k] = w @ d_phi
    hess = np.empty((k + 1, k + 1))
    hess[:k, :k] = (X.T * (w * h_eta)) @ X
    hess[:k, k] = hess[k, :k] = X.T @ (w * h_cross)
    hess[k, k] = w @ h_phi
    return value, grad, hess


def gamma_mixing_block(phi, w, a, S, R):
    """Dispersion block of the gamma-mixed Poisson complete-data likelihood."""
    phi = float(np.atleast_1d(phi)[0])
    if not phi > 0:
        return -np.inf, None, None
    A = float(w @ a)
    value = A * (phi * np.log(phi) - log_gamma(phi)) + (phi - 1.0) * float(w @ S) - phi * float(w @ R)
    grad = A * (np.log(phi) + 1.0 - digamma(phi)) + float(w @ S) - float(w @ R)
    hess = A * (1.0 / phi - trigamma(phi))
    return value, np.array([grad]), np.array([[hess]])


def shock_block(lambda0, w, n0, c):
    """``sum w [n0 log lambda0 - c lambda0]``; maximized at ``sum w n0 / sum w c``."""
    if lambda0 < 0:
        return -np.inf
    N = float(w @ n0)
    if N == 0.0:
        return -lambda0 * float(w @ c)
    if lambda0 == 0.0:
        return -np.inf
    return N * np.log(lambda0) - lambda0 * float(w @ c)


def shock_update(w, n0, c) -> float:
    return float(w @ n0) / float(w @ c)
