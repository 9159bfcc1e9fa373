"""Deterministic samplers built on the layered stochastic representation."""

from __future__ import annotations

import numpy as np

from ..observations import ObservationSet
from ..univariate import draw_base, draw_margin
from .spec import ModelSpec, ParameterSet, RowParams, row_params

BLOCK_ROWS = 1 << 16
MAX_REJECTION_ROUNDS = 10 ** 6


class SamplingError(RuntimeError):
    """Rejection sampling of the all-zero outcome did not terminate."""


def block_rng(seed: int, block: int) -> np.random.Generator:
    """Counter-based stream for one block of rows."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(block)])))


def _draw_base(spec: ModelSpec, rp: RowParams, rows: np.ndarray, rng) -> np.ndarray:
    lam = rp.lam[rows]
    k, m = lam.shape
    base = spec.base
    if base == "ip":
        return rng.poisson(lam)
    if base == "inb":
        return np.column_stack([draw_base(rng, lam[:, j], rp.phi[j]) for j in range(m)])
    if base == "mp":
        shock = rng.poisson(rp.lambda0, size=k) if rp.lambda0 > 0 else np.zeros(k, np.int64)
        return rng.poisson(lam) + shock[:, None]
    if base == "mnb":
        phi = float(rp.phi[0])
        frailty = rng.gamma(phi, 1.0 / phi, size=k)
        return rng.poisson(lam * frailty[:, None])
    pi = rp.pi[rows]
    out = np.zeros((k, m), dtype=np.int64)
    for j, kind in enumerate(spec.margin_kinds):
        on = rng.uniform(size=k) < pi[:, j]
        phi = float(rp.phi[j]) if kind.has_dispersion else None
        w = draw_margin(rng, kind, lam[:, j], phi)
        out[:, j] = np.where(on, w, 0)
    return out


def _sample_block(spec: ModelSpec, rp: RowParams, rng) -> np.ndarray:
    n = rp.lam.shape[0]
    everyone = np.arange(n)
    if spec.layer == "base":
        return _draw_base(spec, rp, everyone, rng)
    gate = rng.uniform(size=n) < rp.gate
    Y = _draw_base(spec, rp, everyone, rng)
    if spec.layer == "zi":
        return Y * gate[:, None]
    # zero-modified: gated rows need a draw from Y given Y != 0
    redo = np.flatnonzero(gate & np.all(Y == 0, axis=1))
    rounds = 0
    while redo.size:
        rounds += 1
        if rounds > MAX_REJECTION_ROUNDS:
            raise SamplingError(
                f"{redo.size} rows still all-zero after {MAX_REJECTION_ROUNDS} rejection rounds"
            )
        Y[redo] = _draw_base(spec, rp, redo, rng)
        redo = redo[np.all(Y[redo] == 0, axis=1)]
    return Y * gate[:, None]


def sample_joint(spec: ModelSpec, params: ParameterSet, covariates, n=None, seed: int = 0) -> ObservationSet:
    """Draw an ObservationSet.

    ``covariates`` is either one design row (with leading 1), repeated ``n``
    times, or an ``(n, p + 1)`` design.  Rows are generated in fixed-size
    blocks, each with its own counter-based stream keyed by ``(seed, block)``,
    so output does not depend on how blocks are scheduled.
    """
    spec.validate(params)
    X = np.asarray(covariates, dtype=float)
    if X.ndim == 1:
        if n is None:
            raise ValueError("n is required with a single covariate row")
        X = np.broadcast_to(X, (int(n), X.size))
    elif n is not None and X.shape[0] != n:
        raise ValueError("n does not match the number of covariate rows")
    rows = X.shape[0]
    if rows < 1:
        raise ValueError("n must be positive")
    out = np.empty((rows, spec.m), dtype=np.int64)
    for b, start in enumerate(range(0, rows, BLOCK_ROWS)):
        stop = min(start + BLOCK_ROWS, rows)
        rp = row_params(spec, params, X[start:stop])
        out[start:stop] = _sample_block(spec, rp, block_rng(seed, b))
    return ObservationSet(out, np.array(X))
