"""Iteration machinery shared by the EM and MM fits.

Both algorithms maximize, at each iteration, a surrogate of the form::

    sum_i w_i [a_i log f_Y(z_i) + b_i log f_Y(0)]

where ``f_Y`` is the base-model pmf.  ``a = 1, b = 0`` is the base model
itself; the zero-inflated E-step gives ``a = tau`` (posterior probability
that the row came from ``Y``) and ``b = 0``; the zero-truncation minorizer
gives ``a = 1`` and ``b = u' - 1 = f_Y(0) / (1 - f_Y(0))``.  Common-shock and
gamma-mixed bases add their own latent-variable expectations on top.  Every
block of the surrogate is then maximized by one safeguarded Newton step, or
by a closed form for the common-shock rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .multivariate.pmf import base_log_zero, base_logpmf, family_logpmf, logpmf_mp_rows
from .multivariate.spec import ModelSpec, ParameterSet, log_expit, row_params
from .numeric import (
    NonAscentError,
    SingularSystemError,
    ascent_newton_step,
    digamma,
    positive_definite_part,
)
from .surrogates import (
    gamma_mixing_block,
    logistic_block,
    negbin_block,
    poisson_block,
    shock_block,
    shock_update,
)
from .univariate import ConvergenceError, fit_margin_regression, log1mexp

FLOOR = 0.05


@dataclass
class Problem:
    """Rows entering one iterative fit.

    ``mode`` is ``"base"``, ``"zi"`` or ``"zm"``; for ``"zm"`` the rows are
    the nonzero observations and the objective is the zero-truncated part of
    the log-likelihood.
    """

    spec: ModelSpec
    Z: np.ndarray
    X: np.ndarray
    w: np.ndarray
    mode: str
    fixed: frozenset = frozenset()
    pinned: frozenset = frozenset()

    @classmethod
    def build(cls, spec: ModelSpec, data, mode: str, fixed=()) -> "Problem":
        if data.m != spec.m:
            raise ValueError(f"data has {data.m} margins but the model expects {spec.m}")
        if data.p + 1 <= max(max(spec.columns(c)) for c in spec.components()):
            raise ValueError("covariate mask refers to columns missing from the design")
        pos = (data.weights[:, None] * (data.counts > 0)).sum(axis=0)
        pinned = frozenset(int(j) for j in np.flatnonzero(pos == 0))
        return cls(spec, data.counts, data.design, data.weights, mode, frozenset(fixed), pinned)

    @property
    def zero(self) -> np.ndarray:
        return np.all(self.Z == 0, axis=1)


@dataclass
class EStep:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray           # a + b, the coefficient of every "exp" term
    y_shift: np.ndarray     # expected common shock n0 (zeros otherwise)
    poisson_coef: np.ndarray
    S: Optional[np.ndarray] = None
    R: Optional[np.ndarray] = None


def objective(pb: Problem, params: ParameterSet) -> float:
    """Observed log-likelihood (``zm``: its zero-truncated part)."""
    rp = row_params(pb.spec, params, pb.X)
    if pb.mode == "zm":
        with np.errstate(divide="ignore"):
            ll = base_logpmf(pb.spec, rp, pb.Z) - log1mexp(np.minimum(base_log_zero(pb.spec, rp), 0.0))
    else:
        ll = family_logpmf(pb.spec, rp, pb.Z)
    value = float(pb.w @ ll)
    return value if np.isfinite(value) else -np.inf


def e_step(pb: Problem, params: ParameterSet) -> EStep:
    spec = pb.spec
    rp = row_params(spec, params, pb.X)
    n = pb.Z.shape[0]
    log_f0 = base_log_zero(spec, rp)
    a = np.ones(n)
    b = np.zeros(n)
    if pb.mode == "zi":
        log_on = log_expit(rp.eta_gamma)
        log_off = log_expit(-rp.eta_gamma)
        log_tau = log_on + log_f0 - np.logaddexp(log_off, log_on + log_f0)
        a = np.where(pb.zero, np.exp(log_tau), 1.0)
    elif pb.mode == "zm":
        b = np.exp(log_f0 - log1mexp(np.minimum(log_f0, -1e-300)))
    c = a + b
    shift = np.zeros(n)
    coef = c
    S = R = None
    if spec.base == "mp":
        inner = pb.Z.min(axis=1) > 0
        if inner.any() and rp.lambda0 > 0:
            Zi = pb.Z[inner]
            lam = rp.lam[inner]
            ratio = logpmf_mp_rows(Zi - 1, rp.lambda0, lam) - logpmf_mp_rows(Zi, rp.lambda0, lam)
            shift[inner] = rp.lambda0 * np.exp(ratio)
    elif spec.base == "mnb":
        phi = float(rp.phi[0])
        L = rp.lam.sum(axis=1)
        total = pb.Z.sum(axis=1)
        log_lp = np.log(L + phi)
        r1 = (total + phi) / (L + phi)
        s1 = digamma(total + phi) - log_lp
        r2 = phi / (L + phi)
        s2 = digamma(phi) - log_lp
        coef = a * r1 + b * r2
        S = a * s1 + b * s2
        R = coef
    return EStep(a, b, c, shift, coef, S, R)


def newton_update(block: Callable, theta, *args) -> np.ndarray:
    """One safeguarded Newton ascent step on ``block(theta, *args)``."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    value, grad, hess = block(theta, *args)
    if not np.isfinite(value):
        return theta

    def f(t):
        return block(t, *args)[0]

    negH = -hess
    try:
        try:
            return ascent_newton_step(grad, negH, theta, f).params
        except SingularSystemError:
            return ascent_newton_step(grad, positive_definite_part(negH), theta, f).params
    except (SingularSystemError, NonAscentError):
        return theta


def m_step(pb: Problem, params: ParameterSet, es: EStep) -> ParameterSet:
    spec = pb.spec
    new = params.copy()
    w = pb.w
    if pb.mode == "zi" and "gamma" not in pb.fixed:
        Xg = spec.design("gamma", pb.X)
        new.gamma = newton_update(logistic_block, new.gamma, Xg, w, es.a, np.ones_like(es.a))
    for j in range(spec.m):
        comp = f"beta{j + 1}"
        if j in pb.pinned or comp in pb.fixed:
            continue
        Xb = spec.design(comp, pb.X)
        zj = pb.Z[:, j].astype(float)
        if spec.base == "ih":
            new.beta[j] = newton_update(logistic_block, new.beta[j], Xb, w, (zj > 0).astype(float), es.c)
        elif spec.base == "inb":
            theta = newton_update(negbin_block, np.append(new.beta[j], new.phi[j]), Xb, w, zj, es.c)
            new.beta[j] = theta[:-1]
            new.phi[j] = theta[-1]
        else:
            y = zj - es.y_shift
            new.beta[j] = newton_update(poisson_block, new.beta[j], Xb, w, y, es.poisson_coef)
    if spec.base == "mp" and "lambda0" not in pb.fixed:
        new.lambda0 = shock_update(w, es.y_shift, es.c)
    if spec.base == "mnb" and "phi" not in pb.fixed:
        new.phi = newton_update(gamma_mixing_block, new.phi, w, es.c, es.S, es.R)
    return new


def surrogate_value(pb: Problem, params: ParameterSet, es: EStep) -> float:
    """Value of the surrogate built from ``es``, up to an additive constant.

    Only the blocks updated by :func:`m_step` are included; the hurdle
    location parts are constant during the iteration.
    """
    spec = pb.spec
    w = pb.w
    total = 0.0
    if pb.mode == "zi":
        total += logistic_block(params.gamma, spec.design("gamma", pb.X), w, es.a, np.ones_like(es.a))[0]
    for j in range(spec.m):
        Xb = spec.design(f"beta{j + 1}", pb.X)
        zj = pb.Z[:, j].astype(float)
        if spec.base == "ih":
            total += logistic_block(params.beta[j], Xb, w, (zj > 0).astype(float), es.c)[0]
        elif spec.base == "inb":
            total += negbin_block(np.append(params.beta[j], params.phi[j]), Xb, w, zj, es.c)[0]
        else:
            total += poisson_block(params.beta[j], Xb, w, zj - es.y_shift, es.poisson_coef)[0]
    if spec.base == "mp":
        total += shock_block(params.lambda0, w, es.y_shift, es.c)
    if spec.base == "mnb":
        total += gamma_mixing_block(params.phi, w, es.c, es.S, es.R)[0]
    return float(total)


def flat(params: ParameterSet) -> np.ndarray:
    parts = [] if params.gamma is None else [params.gamma]
    parts += list(params.beta)
    if params.alpha is not None:
        parts += list(params.alpha)
    if params.phi is not None:
        parts.append(np.nan_to_num(params.phi, nan=0.0))
    if params.lambda0 is not None:
        parts.append([params.lambda0])
    return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])


def to_vector(params: ParameterSet) -> np.ndarray:
    """Unconstrained coordinates used for extrapolation (logs of phi and lambda0)."""
    parts = [] if params.gamma is None else [params.gamma]
    parts += list(params.beta)
    if params.alpha is not None:
        parts += list(params.alpha)
    if params.phi is not None:
        parts.append(np.log(np.nan_to_num(params.phi, nan=1.0)))
    if params.lambda0 is not None:
        parts.append([np.log(max(params.lambda0, 1e-300))])
    return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])


def from_vector(template: ParameterSet, vec) -> ParameterSet:
    vec = np.asarray(vec, dtype=float)
    pos = 0

    def take(k):
        nonlocal pos
        out = vec[pos:pos + k].copy()
        pos += k
        return out

    gamma = None if template.gamma is None else take(template.gamma.size)
    beta = [take(b.size) for b in template.beta]
    alpha = None if template.alpha is None else [take(a.size) for a in template.alpha]
    phi = None
    if template.phi is not None:
        phi = np.exp(take(template.phi.size))
        phi[np.isnan(template.phi)] = np.nan
    lambda0 = None if template.lambda0 is None else float(np.exp(take(1)[0]))
    return ParameterSet(beta=beta, gamma=gamma, alpha=alpha, phi=phi, lambda0=lambda0)


@dataclass
class IterationResult:
    params: ParameterSet
    objective: float
    trace: list
    iterations: int
    converged: bool
    notes: list = field(default_factory=list)


def _squarem_cycle(pb: Problem, params: ParameterSet, ll: float, callback, it):
    """One squared-extrapolation cycle built from two plain steps.

    The extrapolated point is followed by a plain step and kept only when it
    does at least as well as the second plain step, so the objective never
    decreases.
    """
    es0 = e_step(pb, params)
    p1 = m_step(pb, params, es0)
    if callback is not None:
        callback(it, params, p1, es0)
    es1 = e_step(pb, p1)
    p2 = m_step(pb, p1, es1)
    ll2 = objective(pb, p2)
    x0, x1, x2 = to_vector(params), to_vector(p1), to_vector(p2)
    r = x1 - x0
    v = x2 - x1 - r
    nv = np.linalg.norm(v)
    if nv == 0.0 or not np.isfinite(nv):
        return p2, ll2
    alpha = min(-np.linalg.norm(r) / nv, -1.0)
    if alpha == -1.0:
        return p2, ll2
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            xe = x0 - 2.0 * alpha * r + alpha * alpha * v
            pe = from_vector(params, xe)
            if objective(pb, pe) == -np.inf:
                return p2, ll2
            pe = m_step(pb, pe, e_step(pb, pe))
            lle = objective(pb, pe)
    except (ValueError, FloatingPointError, np.linalg.LinAlgError):
        return p2, ll2
    if np.isfinite(lle) and lle >= ll2:
        return pe, lle
    return p2, ll2


def iterate(
    pb: Problem,
    params: ParameterSet,
    max_iter: int,
    loglik_tol: float,
    param_tol: float,
    callback: Optional[Callable] = None,
    accelerate: bool = True,
) -> IterationResult:
    """Run E/M (or minorize/maximize) steps until both stopping rules pass.

    Stops when the relative objective change is below ``loglik_tol`` and the
    sup-norm parameter change is below ``param_tol``.  With ``accelerate``
    each iteration is a squared-extrapolation cycle over two plain steps.
    """
    ll = objective(pb, params)
    if not np.isfinite(ll):
        raise ValueError("log-likelihood is not finite at the starting values")
    trace = [ll]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if accelerate:
            new, new_ll = _squarem_cycle(pb, params, ll, callback, it)
        else:
            es = e_step(pb, params)
            new = m_step(pb, params, es)
            new_ll = objective(pb, new)
            if callback is not None:
                callback(it, params, new, es)
        step = float(np.max(np.abs(flat(new) - flat(params))))
        rel = abs(new_ll - ll) / max(1.0, abs(ll))
        params, ll = new, new_ll
        trace.append(ll)
        if rel < loglik_tol and step < param_tol:
            converged = True
            break
    return IterationResult(params, ll, trace, it, converged)


# -- starting values ------------------------------------------------------------


def _logit(p):
    p = float(np.clip(p, 1e-6, 1 - 1e-6))
    return np.log(p / (1 - p))


# |eta| beyond this puts a fitted probability within 2e-9 of 0 or 1
ETA_EXTREME = 20.0


def logistic_irls(X, y, w, max_iter=100, tol=1e-10, cap=30.0):
    """Weighted logistic regression by Newton/IRLS.

    Returns ``(coef, converged, separated)``.  Coefficients whose size on the
    standardized scale exceeds ``cap`` signal separation and are clipped; so do
    fitted probabilities that are numerically 0 or 1.
    """
    k = X.shape[1]
    beta = np.zeros(k)
    n = float(w.sum())
    mean_y = float(w @ y) / n
    beta[0] = _logit(mean_y)
    ones = np.ones_like(y)
    scale = np.ones(k)
    if k > 1:
        mu = (w @ X) / n
        scale[1:] = np.sqrt(np.maximum((w @ (X - mu) ** 2) / n, 1e-300))[1:]
    converged = False
    for _ in range(max_iter):
        value, grad, hess = logistic_block(beta, X, w, y, ones)
        new = newton_update(logistic_block, beta, X, w, y, ones)
        step = np.max(np.abs(new - beta))
        beta = new
        if step < tol or np.max(np.abs(grad)) < 1e-12 * max(n, 1.0):
            converged = True
            break
        if np.any(np.abs(beta * scale) > cap):
            break
    extreme = np.max(np.abs(X[w > 0] @ beta)) > ETA_EXTREME if np.any(w > 0) else False
    separated = bool(np.any(np.abs(beta * scale) > cap)) or bool(extreme) or mean_y in (0.0, 1.0)
    if separated:
        beta = np.clip(beta * scale, -cap, cap) / scale
    return beta, converged or separated, separated


def fit_hurdle_locations(spec: ModelSpec, Z, X, w, pinned=frozenset(), max_iter=500):
    """Separate ML fits of the positive-support margins on the positive counts."""
    alpha, phi, fits = [], np.full(spec.m, np.nan), []
    for j, kind in enumerate(spec.margin_kinds):
        Xa = spec.design(f"alpha{j + 1}", X)
        if j in pinned:
            coef = np.zeros(Xa.shape[1])
            coef[0] = np.log(FLOOR)
            alpha.append(coef)
            if kind.has_dispersion:
                phi[j] = 1.0
            fits.append(None)
            continue
        pos = Z[:, j] > 0
        try:
            fit = fit_margin_regression(Z[pos, j], Xa[pos], kind, weights=w[pos], max_iter=max_iter)
        except ConvergenceError as err:
            fit = err.result
        alpha.append(fit.coef)
        if kind.has_dispersion:
            phi[j] = fit.phi
        fits.append(fit)
    return alpha, phi, fits


def initial_params(pb: Problem, strategy: str = "moment") -> ParameterSet:
    spec = pb.spec
    Z, X, w = pb.Z.astype(float), pb.X, pb.w
    nz = ~pb.zero
    n = float(w.sum())
    frac_nonzero = float(w[nz].sum()) / n
    gamma = None
    if pb.mode == "zi":
        Xg = spec.design("gamma", X)
        gamma = np.zeros(Xg.shape[1])
        if strategy == "moment":
            gamma, _, _ = logistic_irls(Xg, nz.astype(float), w)
        else:
            gamma[0] = _logit(frac_nonzero)
    if pb.mode == "base" or strategy == "zero-fraction":
        means = (w @ Z) / n
    else:
        means = (w[nz] @ Z[nz]) / max(float(w[nz].sum()), 1e-300)
    lambda0 = None
    if spec.base == "mp":
        lambda0 = 0.1 * float(max(means.min(), FLOOR))
    beta = []
    for j in range(spec.m):
        k = len(spec.columns(f"beta{j + 1}"))
        coef = np.zeros(k)
        if spec.base == "ih":
            rows = w if pb.mode == "base" else w * nz
            share = float(rows @ (Z[:, j] > 0)) / float(rows.sum())
            coef[0] = _logit(min(max(share, FLOOR), 1 - FLOOR))
        else:
            loc = means[j] - (lambda0 or 0.0)
            coef[0] = np.log(max(loc, FLOOR))
        beta.append(coef)
    alpha = None
    phi = None
    if spec.base == "inb":
        phi = np.ones(spec.m)
    elif spec.base == "mnb":
        phi = np.ones(1)
    elif spec.base == "ih":
        alpha, phi, _ = fit_hurdle_locations(spec, pb.Z, X, w, pb.pinned)
        if not spec.has_phi():
            phi = None
    return ParameterSet(beta=beta, gamma=gamma, alpha=alpha, phi=phi, lambda0=lambda0)


def pin_margins(pb: Problem, params: ParameterSet) -> ParameterSet:
    """Coefficients of margins with no positive counts sit at the floor value."""
    out = params.copy()
    for j in pb.pinned:
        coef = np.zeros_like(out.beta[j])
        coef[0] = _logit(FLOOR) if pb.spec.base == "ih" else np.log(FLOOR)
        out.beta[j] = coef
    return out


# -- standard errors -----------------------------------------------------------


def numerical_hessian(f: Callable, x: np.ndarray, steps: np.ndarray) -> np.ndarray:
    """Central-difference Hessian with the four-point cross stencil."""
    x = np.asarray(x, dtype=float)
    k = x.size
    H = np.empty((k, k))
    f0 = f(x)
    E = np.diag(steps)
    for i in range(k):
        ei = E[i]
        H[i, i] = (f(x + 2 * ei) - 2 * f0 + f(x - 2 * ei)) / (4 * steps[i] ** 2)
        for j in range(i):
            ej = E[j]
            H[i, j] = H[j, i] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4 * steps[i] * steps[j])
    return H


def standard_errors(f: Callable, x, lower, exclude=None, rel_step: float = 1e-4):
    """Square roots of the diagonal of the inverse observed information.

    ``f`` is the log-likelihood in the natural parametrization.  Parameters
    in ``exclude`` get NaN.  Returns ``None`` when the numerical Hessian is
    not negative definite on the free parameters.
    """
    x = np.asarray(x, dtype=float)
    lower = np.asarray(lower, dtype=float)
    free = np.ones(x.size, dtype=bool) if exclude is None else ~np.asarray(exclude, dtype=bool)
    idx = np.flatnonzero(free)
    out = np.full(x.size, np.nan)
    if idx.size == 0:
        return out
    steps = rel_step * np.maximum(1.0, np.abs(x[idx]))
    bounded = np.isfinite(lower[idx])
    room = (x[idx] - lower[idx]) / 4.0
    steps = np.where(bounded, np.minimum(steps, room), steps)
    if np.any(steps <= 0):
        return None

    def g(sub):
        full = x.copy()
        full[idx] = sub
        return f(full)

    H = numerical_hessian(g, x[idx], steps)
    if not np.all(np.isfinite(H)):
        return None
    try:
        L = np.linalg.cholesky(-H)
    except np.linalg.LinAlgError:
        return None
    Linv = np.linalg.inv(L)
    cov = Linv.T @ Linv
    out[idx] = np.sqrt(np.diag(cov))
    return out
