"""Special functions and the safeguarded Newton step shared by the fitting engines.

The gamma-family functions are evaluated in-repo (recurrence shifts plus
asymptotic series, and a Taylor series around the two positive roots of
``log_gamma``) so results do not depend on the platform's libm.  All of them
accept scalars or arrays and return the same shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

EULER_GAMMA = 0.57721566490153286061
_HALF_LOG_2PI = 0.91893853320467274178

# B_2, B_4, ..., B_20
_BERNOULLI = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
    -174611.0 / 330.0,
)

_SHIFT = 10.0
_ROOT_RADIUS = 0.25
_TAYLOR_TERMS = 40


class DomainError(ValueError):
    """Argument outside the domain of a special function."""


class SingularSystemError(np.linalg.LinAlgError):
    """The Newton system could not be factorized, even after ridging."""


class NonAscentError(RuntimeError):
    """No step length in the halving sequence avoided an objective decrease."""


def _zeta(s: int) -> float:
    # Euler-Maclaurin with N=10 terms summed directly.
    N = 10
    total = sum(n ** -float(s) for n in range(1, N))
    total += N ** (1.0 - s) / (s - 1.0) + 0.5 * N ** -float(s)
    rising = float(s)
    for k, b in enumerate(_BERNOULLI[:8], start=1):
        total += b / math.factorial(2 * k) * rising * N ** (-s - 2 * k + 1.0)
        rising *= (s + 2 * k - 1.0) * (s + 2 * k)
    return total


# Taylor coefficients of log Gamma(1 + z) = sum_k c_k z^k
_LGAMMA1_COEF = np.array(
    [0.0, -EULER_GAMMA]
    + [(-1.0) ** k * _zeta(k) / k for k in range(2, _TAYLOR_TERMS + 1)]
)


def _as_checked_array(x, name: str) -> tuple[np.ndarray, bool]:
    scalar = np.ndim(x) == 0
    arr = np.asarray(x, dtype=float)
    if np.any(~(arr > 0)):
        raise DomainError(f"{name} requires x > 0")
    return np.atleast_1d(arr), scalar


def _out(values: np.ndarray, scalar: bool):
    return float(values[0]) if scalar else values


def _lgamma1p_series(z: np.ndarray) -> np.ndarray:
    # Horner on the precomputed Taylor coefficients, valid for |z| <= 0.25
    acc = np.zeros_like(z)
    for c in _LGAMMA1_COEF[:0:-1]:
        acc = (acc + c) * z
    return acc


def _stirling(x: np.ndarray) -> np.ndarray:
    inv = 1.0 / x
    inv2 = inv * inv
    corr = np.zeros_like(x)
    power = inv
    for k, b in enumerate(_BERNOULLI[:8], start=1):
        corr += b / (2 * k * (2 * k - 1)) * power
        power = power * inv2
    return (x - 0.5) * np.log(x) - x + _HALF_LOG_2PI + corr


def log_gamma(x):
    """Natural log of the gamma function for ``x > 0``."""
    arr, scalar = _as_checked_array(x, "log_gamma")
    out = np.empty_like(arr)

    near1 = np.abs(arr - 1.0) <= _ROOT_RADIUS
    near2 = np.abs(arr - 2.0) <= _ROOT_RADIUS
    rest = ~(near1 | near2)

    if near1.any():
        out[near1] = _lgamma1p_series(arr[near1] - 1.0)
    if near2.any():
        z = arr[near2] - 2.0
        out[near2] = _lgamma1p_series(z) + np.log1p(z)
    if rest.any():
        xr = arr[rest].copy()
        logprod = np.zeros_like(xr)
        small = xr < _SHIFT
        while small.any():
            logprod[small] += np.log(xr[small])
            xr[small] += 1.0
            small = xr < _SHIFT
        out[rest] = _stirling(xr) - logprod
    return _out(out, scalar)


def digamma(x):
    """Digamma function psi(x) for ``x > 0``."""
    arr, scalar = _as_checked_array(x, "digamma")
    xr = arr.copy()
    acc = np.zeros_like(xr)
    small = xr < _SHIFT
    while small.any():
        acc[small] -= 1.0 / xr[small]
        xr[small] += 1.0
        small = xr < _SHIFT
    inv2 = 1.0 / (xr * xr)
    series = np.zeros_like(xr)
    power = inv2
    for k, b in enumerate(_BERNOULLI[:8], start=1):
        series += b / (2 * k) * power
        power = power * inv2
    out = acc + np.log(xr) - 0.5 / xr - series
    return _out(out, scalar)


def trigamma(x):
    """Trigamma function psi_1(x) for ``x > 0``."""
    arr, scalar = _as_checked_array(x, "trigamma")
    xr = arr.copy()
    acc = np.zeros_like(xr)
    small = xr < _SHIFT
    while small.any():
        acc[small] += 1.0 / (xr[small] * xr[small])
        xr[small] += 1.0
        small = xr < _SHIFT
    inv = 1.0 / xr
    inv2 = inv * inv
    series = np.zeros_like(xr)
    power = inv2 * inv
    for b in _BERNOULLI[:8]:
        series += b * power
        power = power * inv2
    out = acc + inv + 0.5 * inv2 + series
    return _out(out, scalar)


def log_factorial(k):
    """log(k!) for nonnegative integer arrays."""
    k = np.asarray(k, dtype=float)
    return log_gamma(k + 1.0)


@dataclass
class NewtonStepReport:
    proposed_delta: np.ndarray
    halvings_used: int
    objective_before: float
    objective_after: float
    params: np.ndarray
    ridged: bool = False


def solve_symmetric(matrix: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, bool]:
    """Solve ``matrix @ x = rhs`` by Cholesky, ridging the diagonal once on failure.

    Returns the solution and whether the ridge was needed.
    """
    A = np.atleast_2d(np.asarray(matrix, dtype=float))
    b = np.asarray(rhs, dtype=float)
    for attempt in range(2):
        try:
            L = np.linalg.cholesky(A)
        except np.linalg.LinAlgError:
            if attempt == 1:
                break
            dim = A.shape[0]
            ridge = 1e-8 * abs(np.trace(A)) / dim
            if not np.isfinite(ridge) or ridge == 0.0:
                break
            A = A + ridge * np.eye(dim)
            continue
        y = np.linalg.solve(L, b)
        return np.linalg.solve(L.T, y), attempt == 1
    raise SingularSystemError("negative Hessian is not positive definite")


def positive_definite_part(A: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    """Symmetric matrix with the eigenvalues of ``A`` replaced by their absolute values.

    Eigenvalues are also floored at ``floor`` times the largest one, so the
    result can serve as a Newton metric when ``A`` is indefinite.
    """
    vals, vecs = np.linalg.eigh((A + A.T) / 2)
    vals = np.maximum(np.abs(vals), floor * max(1.0, np.abs(vals).max()))
    return (vecs * vals) @ vecs.T


def ascent_newton_step(
    gradient,
    negative_hessian,
    current_params,
    objective: Callable[[np.ndarray], float],
    max_halvings: int = 30,
) -> NewtonStepReport:
    """One Newton step for maximizing ``objective`` with step halving.

    The full step ``H^{-1} g`` is tried first, then halved until the objective
    does not decrease.  Non-finite objective values count as a decrease, which
    lets callers encode parameter constraints by returning ``-inf``.
    """
    g = np.atleast_1d(np.asarray(gradient, dtype=float))
    x0 = np.atleast_1d(np.asarray(current_params, dtype=float))
    if g.shape != x0.shape or np.shape(negative_hessian) != (g.size, g.size):
        raise ValueError("gradient, Hessian and parameter dimensions disagree")
    before = float(objective(x0))
    if not np.isfinite(before):
        raise ValueError("objective is not finite at the current parameters")

    if not np.any(g):
        return NewtonStepReport(np.zeros_like(x0), 0, before, before, x0.copy())

    delta, ridged = solve_symmetric(negative_hessian, g)
    step = 1.0
    for halvings in range(max_halvings + 1):
        trial = x0 + step * delta
        after = float(objective(trial))
        if np.isfinite(after) and after >= before:
            return NewtonStepReport(step * delta, halvings, before, after, trial, ridged)
        step *= 0.5
    raise NonAscentError(
        f"objective decreased for all {max_halvings + 1} step lengths"
    )
