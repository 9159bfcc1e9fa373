"""Two-part estimation of the zero-modified families.

The log-likelihood splits into a Bernoulli part ``l1`` for the indicator
``1(z_i != 0)``, which only involves ``gamma``, and a zero-truncated part
``l2`` over the nonzero rows::

    l2 = sum_{i in I} [log f_Y(z_i) - log(1 - f_Y(0 | x_i))]

``l1`` is an ordinary logistic regression.  ``l2`` is maximized by MM: the
convexity bound

    -log(1 - a) >= -log(1 - a0) + a0 / (1 - a0) * log(a / a0)

applied with ``a = f_Y(0)`` turns ``-log(1 - f_Y(0))`` into
``(u' - 1) log f_Y(0)`` plus a constant, where ``u' = 1 / (1 - f_Y(0))`` at
the current iterate.  The resulting surrogate has the same block structure
as the zero-inflated EM, with row coefficient ``u'`` in place of ``tau``.
For the common-shock and gamma-mixed bases an EM-style minorizer of
``log f_Y`` is chained inside.  Hurdle margins separate into occurrence
probabilities, fitted by MM, and positive-count locations, fitted directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _engine
from .fit_em import EmConfig, FitResult, finalize
from .multivariate.pmf import base_log_zero
from .multivariate.spec import ModelSpec, ParameterSet, log_expit, row_params
from .observations import ObservationSet
from .surrogates import logistic_block
from .univariate import log1mexp, logpmf_margin

SEPARATION_CAP = 30.0
SURROGATE_SLACK = 1e-8


@dataclass
class MmConfig(EmConfig):
    """EmConfig plus ``surrogate_check``: verify minorization every iteration."""

    surrogate_check: bool = False
    check_points: int = 100
    check_seed: int = 0


@dataclass
class SplitLikelihood:
    """``ell1`` (Bernoulli part over all rows) and ``ell2`` (zero-truncated part)."""

    ell1: float
    ell2: float
    total: float
    n_nonzero: float = 0.0

    def to_dict(self) -> dict:
        return {"ell1": self.ell1, "ell2": self.ell2, "total": self.total, "n_nonzero": self.n_nonzero}


@dataclass
class LogisticFit:
    coef: np.ndarray
    std_errors: Optional[np.ndarray]
    loglik: float
    converged: bool
    separated: bool

    @property
    def reliable(self) -> bool:
        return not self.separated


@dataclass
class TruncatedFit:
    params: ParameterSet
    ell2: float
    iterations: int
    converged: bool
    trace: list
    pinned: frozenset = frozenset()
    checks: int = 0
    notes: list = field(default_factory=list)


class MinorizationError(AssertionError):
    """The surrogate exceeded the objective at a tested point."""


def fit_logistic_part(data: ObservationSet, columns=None) -> LogisticFit:
    """Logistic regression of ``1(z_i != 0)`` on the design (or selected columns)."""
    X = data.design if columns is None else data.design[:, list(columns)]
    y = (~data.zero_rows).astype(float)
    w = data.weights
    coef, converged, separated = _engine.logistic_irls(X, y, w, cap=SEPARATION_CAP)
    ones = np.ones_like(y)
    value, _, hess = logistic_block(coef, X, w, y, ones)
    se = None
    if not separated:
        try:
            cov = np.linalg.inv(-hess)
            se = np.sqrt(np.diag(cov))
        except np.linalg.LinAlgError:
            se = None
    return LogisticFit(coef, se, float(value), converged, separated)


def ell2_value(spec: ModelSpec, params: ParameterSet, data: ObservationSet) -> float:
    """Zero-truncated part of the log-likelihood over the nonzero rows of ``data``."""
    nz = data.nonzero()
    pb = _engine.Problem(spec, nz.counts, nz.design, nz.weights, "zm")
    return _engine.objective(pb, params)


def hurdle_split(spec: ModelSpec, params: ParameterSet, data: ObservationSet) -> tuple:
    """``(l2_occurrence, l2_locations)`` for a hurdle family on the nonzero rows."""
    if not spec.family.is_hurdle:
        raise ValueError("only hurdle families separate this way")
    nz = data.nonzero()
    rp = row_params(spec, params, nz.design)
    Z, w = nz.counts, nz.weights
    occ = np.where(Z > 0, log_expit(rp.eta_pi), log_expit(-rp.eta_pi)).sum(axis=1)
    occ = occ - log1mexp(base_log_zero(spec, rp))
    loc = 0.0
    for j, kind in enumerate(spec.margin_kinds):
        pos = Z[:, j] > 0
        phi = float(rp.phi[j]) if kind.has_dispersion else None
        loc += float(w[pos] @ logpmf_margin(Z[pos, j], kind, rp.lam[pos, j], phi))
    return float(w @ occ), loc


def _perturb(params: ParameterSet, rng, scale=0.2) -> ParameterSet:
    out = params.copy()
    out.beta = [b + scale * rng.standard_normal(b.size) for b in out.beta]
    if out.phi is not None and out.alpha is None:
        out.phi = out.phi * np.exp(scale * rng.standard_normal(out.phi.size))
    if out.lambda0 is not None:
        out.lambda0 = out.lambda0 * float(np.exp(scale * rng.standard_normal()))
    return out


def check_minorization(pb, current: ParameterSet, points: int, rng) -> float:
    """Largest ``Q + C - l2`` over random points near ``current`` (should be <= 0)."""
    es = _engine.e_step(pb, current)
    const = _engine.objective(pb, current) - _engine.surrogate_value(pb, current, es)
    worst = -np.inf
    for _ in range(points):
        trial = _perturb(current, rng)
        value = _engine.objective(pb, trial)
        if not np.isfinite(value):
            continue
        worst = max(worst, _engine.surrogate_value(pb, trial, es) + const - value)
    return worst


def fit_truncated_part(data: ObservationSet, spec: ModelSpec, config: Optional[MmConfig] = None,
                       callback=None) -> TruncatedFit:
    """MM maximization of the zero-truncated part over the nonzero rows.

    ``data`` may contain all-zero rows; they are dropped.  The returned
    parameter set has no ``gamma``.
    """
    config = config or MmConfig()
    if spec.layer != "zm":
        raise ValueError(f"{spec.family.value} is not a zero-modified family")
    nz = data.nonzero().compress()
    if nz.n_rows == 0:
        raise ValueError("no nonzero rows to fit")
    pb = _engine.Problem.build(spec, nz, "zm", config.fixed)
    if config.init_strategy == "user":
        start = config.initial.copy()
        start.gamma = None
    else:
        start = _engine.initial_params(pb, config.init_strategy)
    start = _engine.pin_margins(pb, start)
    rng = np.random.default_rng(config.check_seed)
    checks = [0]

    def monitor(it, old, new, es):
        if config.surrogate_check:
            worst = check_minorization(pb, old, config.check_points, rng)
            checks[0] += 1
            if worst > SURROGATE_SLACK:
                raise MinorizationError(f"surrogate exceeds l2 by {worst:.3e} at iteration {it}")
        if callback is not None:
            callback(it, old, new, es)

    result = _engine.iterate(pb, start, config.max_iter, config.loglik_tol, config.param_tol, monitor,
                             config.accelerate)
    return TruncatedFit(result.params, result.objective, result.iterations, result.converged,
                        result.trace, pb.pinned, checks[0])


def fit_zero_modified(data: ObservationSet, spec: ModelSpec, config: Optional[MmConfig] = None,
                      callback=None) -> FitResult:
    """Fit a zero-modified family: logistic ``l1`` plus MM on ``l2``."""
    config = config or MmConfig()
    if spec.layer != "zm":
        raise ValueError(f"{spec.family.value} is not a zero-modified family")
    data = data.compress()
    if data.weights[~data.zero_rows].sum() == 0:
        raise ValueError("the data have no nonzero rows")
    logit = fit_logistic_part(data, spec.columns("gamma"))
    part = fit_truncated_part(data, spec, config, callback)
    params = part.params.copy()
    params.gamma = logit.coef
    notes = [f"margin {j + 1} has no positive counts; its coefficients are pinned" for j in sorted(part.pinned)]
    if logit.separated:
        notes.append("logistic part is separated; gamma is capped and its standard errors are unreliable")
    split = SplitLikelihood(logit.loglik, part.ell2, logit.loglik + part.ell2,
                            float(data.weights[~data.zero_rows].sum()))
    it = _engine.IterationResult(params, split.total, [logit.loglik + v for v in part.trace],
                                 part.iterations, part.converged)
    exclude = None
    if logit.separated:
        # gamma and the rest are orthogonal blocks, so dropping gamma leaves the other SEs exact
        exclude = np.zeros(spec.n_params, dtype=bool)
        exclude[:len(spec.columns("gamma"))] = True
    return finalize(spec, params, data, it, "mm", config, part.pinned, split, notes, exclude)


__all__ = [
    "LogisticFit", "MinorizationError", "MmConfig", "SplitLikelihood", "TruncatedFit",
    "check_minorization", "ell2_value", "fit_logistic_part", "fit_truncated_part",
    "fit_zero_modified", "hurdle_split",
]
