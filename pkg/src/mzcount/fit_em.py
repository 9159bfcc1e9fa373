"""EM estimation for the zero-inflated families (and the base models).

The E-step computes, for each all-zero row, the posterior probability
``tau`` that it was generated by the count model rather than the point mass;
nonzero rows have ``tau = 1``.  The M-step then takes one safeguarded Newton
step on each block of the expected complete-data log-likelihood:

* ``gamma``: logistic regression with fractional response ``tau``;
* independent Poisson or NB margins: weighted regressions with weight ``tau``;
* hurdle margins: weighted logistic fits of the occurrence probabilities
  (the positive-count parts do not depend on ``tau`` and are fitted once);
* common-shock Poisson: the shared shock ``N0`` is a further latent variable
  with ``E[N0 | z] = lambda0 f_Y(z - 1) / f_Y(z)``, and ``lambda0`` has a
  closed-form update;
* multivariate NB: the gamma frailty ``theta`` is latent, with
  ``E[theta | z] = (sum z + phi) / (sum lambda + phi)`` and
  ``E[log theta | z] = psi(sum z + phi) - log(sum lambda + phi)``.

Base models run through the same loop with ``tau = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _engine
from .multivariate.pmf import loglik as observed_loglik, nonzero_probabilities
from .multivariate.spec import Family, ModelSpec, ParameterSet
from .observations import ObservationSet

INIT_STRATEGIES = ("moment", "zero-fraction", "user")
LAMBDA0_SE_FLOOR = 1e-6


@dataclass
class EmConfig:
    """Iteration controls.

    Parameters
    ----------
    max_iter : int
    loglik_tol : float
        Relative change of the log-likelihood between iterations.
    param_tol : float
        Sup-norm change of the parameters (natural scale).
    init_strategy : {"moment", "zero-fraction", "user"}
    initial : ParameterSet, optional
        Starting values, required for ``init_strategy="user"``.
    fixed : tuple of str
        Components held at their starting values (``"gamma"``, ``"beta1"``,
        ``"phi"``, ``"lambda0"``, ...).
    compute_se : bool
    accelerate : bool
        Squared extrapolation over pairs of plain steps, with a monotone
        fallback to the plain double step.
    """

    max_iter: int = 2000
    loglik_tol: float = 1e-8
    param_tol: float = 1e-6
    init_strategy: str = "moment"
    initial: Optional[ParameterSet] = None
    fixed: tuple = ()
    compute_se: bool = True
    accelerate: bool = True

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if not (self.loglik_tol > 0 and self.param_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.init_strategy not in INIT_STRATEGIES:
            raise ValueError(f"init_strategy must be one of {INIT_STRATEGIES}")
        if self.init_strategy == "user" and self.initial is None:
            raise ValueError("init_strategy='user' needs initial parameters")


@dataclass
class FitResult:
    """Estimates and fit statistics of one model."""

    spec: ModelSpec
    params: ParameterSet
    loglik: float
    n: float
    n_params: int
    iterations: int
    converged: bool
    loglik_trace: list
    param_names: list
    std_errors: Optional[np.ndarray] = None
    method: str = "em"
    split: Optional[object] = None
    mean_pi0: Optional[float] = None
    mean_pi0_prime: Optional[float] = None
    notes: list = field(default_factory=list)

    @property
    def aic(self) -> float:
        return -2.0 * self.loglik + 2.0 * self.n_params

    @property
    def bic(self) -> float:
        return -2.0 * self.loglik + self.n_params * np.log(self.n)

    @property
    def estimates(self) -> np.ndarray:
        return self.spec.pack(self.params)

    @property
    def t_ratios(self) -> Optional[np.ndarray]:
        if self.std_errors is None:
            return None
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.estimates / self.std_errors

    def coefficient_table(self) -> list:
        se = self.std_errors
        t = self.t_ratios
        return [
            {
                "name": name,
                "estimate": float(est),
                "std_error": None if se is None or np.isnan(se[k]) else float(se[k]),
                "t_ratio": None if t is None or np.isnan(t[k]) else float(t[k]),
            }
            for k, (name, est) in enumerate(zip(self.param_names, self.estimates))
        ]

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "family_label": self.spec.family.label,
            "method": self.method,
            "params": self.params.to_dict(),
            "loglik": self.loglik,
            "aic": self.aic,
            "bic": self.bic,
            "n": self.n,
            "n_params": self.n_params,
            "iterations": self.iterations,
            "converged": self.converged,
            "loglik_trace": [float(v) for v in self.loglik_trace],
            "param_names": list(self.param_names),
            "std_errors": None if self.std_errors is None else [
                None if np.isnan(v) else float(v) for v in self.std_errors
            ],
            "coefficients": self.coefficient_table(),
            "split": None if self.split is None else self.split.to_dict(),
            "mean_pi0": self.mean_pi0,
            "mean_pi0_prime": self.mean_pi0_prime,
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        se = d.get("std_errors")
        split = None
        if d.get("split") is not None:
            from .fit_mm import SplitLikelihood

            split = SplitLikelihood(**d["split"])
        return cls(
            spec=ModelSpec.from_dict(d["spec"]),
            params=ParameterSet.from_dict(d["params"]),
            loglik=float(d["loglik"]),
            n=float(d["n"]),
            n_params=int(d["n_params"]),
            iterations=int(d["iterations"]),
            converged=bool(d["converged"]),
            loglik_trace=list(d.get("loglik_trace", [])),
            param_names=list(d["param_names"]),
            std_errors=None if se is None else np.array([np.nan if v is None else v for v in se]),
            method=d.get("method", "em"),
            split=split,
            mean_pi0=d.get("mean_pi0"),
            mean_pi0_prime=d.get("mean_pi0_prime"),
            notes=list(d.get("notes", [])),
        )


def _check_zero_mix(data: ObservationSet):
    zero = data.zero_rows
    if not (data.weights[zero].sum() > 0 and data.weights[~zero].sum() > 0):
        raise ValueError(
            "the data need at least one all-zero row and one nonzero row; "
            "otherwise the zero-mass parameters are not identifiable"
        )


def _starting_values(pb, config):
    if config.init_strategy == "user":
        pb.spec.validate(config.initial)
        return config.initial.copy()
    return _engine.initial_params(pb, config.init_strategy)


def se_exclusions(spec: ModelSpec, params: ParameterSet, pinned) -> np.ndarray:
    """Mask of packed parameters that get no standard error."""
    names = spec.param_names()
    mask = np.zeros(len(names), dtype=bool)
    for k, name in enumerate(names):
        if name == "lambda0" and params.lambda0 < LAMBDA0_SE_FLOOR:
            mask[k] = True
        for j in pinned:
            if name.startswith(f"beta{j + 1}:") or name.startswith(f"alpha{j + 1}:") or name == f"phi{j + 1}":
                mask[k] = True
    return mask


def compute_standard_errors(spec: ModelSpec, params: ParameterSet, data: ObservationSet, pinned=(), exclude=None):
    x = spec.pack(params)
    mask = se_exclusions(spec, params, pinned)
    if exclude is not None:
        mask = mask | exclude
    lower = np.array([lb for _, lb in spec.layout()])

    def f(v):
        try:
            return observed_loglik(spec, spec.unpack(v), data)
        except ValueError:
            return -np.inf

    return _engine.standard_errors(f, x, lower, mask)


def finalize(spec, params, data, it_result, method, config, pinned, split=None, extra_notes=(), exclude=None):
    """Assemble a FitResult with log-likelihood, SEs and zero-mass summaries."""
    ll = observed_loglik(spec, params, data)
    se = None
    notes = list(extra_notes) + list(it_result.notes)
    if config.compute_se:
        se = compute_standard_errors(spec, params, data, pinned, exclude)
        if se is None:
            notes.append("observed information is not positive definite; standard errors omitted")
    pi0, pi0p = nonzero_probabilities(spec, params, data.design)
    w = data.weights / data.n
    if not it_result.converged:
        notes.append(f"no convergence after {it_result.iterations} iterations")
    return FitResult(
        spec=spec,
        params=params,
        loglik=ll,
        n=data.n,
        n_params=spec.n_params,
        iterations=it_result.iterations,
        converged=it_result.converged,
        loglik_trace=list(it_result.trace),
        param_names=spec.param_names(data.covariate_names),
        std_errors=se,
        method=method,
        split=split,
        mean_pi0=float(w @ pi0),
        mean_pi0_prime=float(w @ pi0p),
        notes=notes,
    )


def _run(data: ObservationSet, spec: ModelSpec, config: EmConfig, mode: str, callback=None) -> FitResult:
    data = data.compress()
    pb = _engine.Problem.build(spec, data, mode, config.fixed)
    start = _engine.pin_margins(pb, _starting_values(pb, config))
    result = _engine.iterate(pb, start, config.max_iter, config.loglik_tol, config.param_tol, callback,
                             config.accelerate)
    notes = [f"margin {j + 1} has no positive counts; its coefficients are pinned" for j in sorted(pb.pinned)]
    return finalize(spec, result.params, data, result, "em" if mode == "zi" else "newton-em", config,
                    pb.pinned, extra_notes=notes)


def fit_zero_inflated(data: ObservationSet, spec: ModelSpec, config: Optional[EmConfig] = None,
                      callback=None) -> FitResult:
    """Fit a zero-inflated family (MZIP1, MZINB1, MZIH1, MZIP2, MZINB2) by EM.

    ``callback(iteration, old_params, new_params, estep)`` is called after
    every iteration.
    """
    config = config or EmConfig()
    if spec.layer != "zi":
        raise ValueError(f"{spec.family.value} is not a zero-inflated family")
    _check_zero_mix(data)
    return _run(data, spec, config, "zi", callback)


def fit_base(data: ObservationSet, spec: ModelSpec, config: Optional[EmConfig] = None,
             callback=None) -> FitResult:
    """Fit one of the base families (MIP, MINB, MIH, MP, MNB).

    Independent margins converge in Newton fashion because the surrogate is
    the log-likelihood itself; the common-shock and gamma-mixed models use
    their latent-variable EM.
    """
    config = config or EmConfig()
    if spec.layer != "base":
        raise ValueError(f"{spec.family.value} is not a base family")
    return _run(data, spec, config, "base", callback)


def e_step_weights(data: ObservationSet, spec: ModelSpec, params: ParameterSet) -> np.ndarray:
    """Posterior probabilities ``u'`` that each row is a structural zero."""
    pb = _engine.Problem.build(spec, data, "zi")
    es = _engine.e_step(pb, params)
    return 1.0 - es.a


__all__ = ["EmConfig", "FitResult", "Family", "fit_base", "fit_zero_inflated", "e_step_weights"]
