"""Observation container shared by the fitting engines and the CLI."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


@dataclass
class ObservationSet:
    """Claim counts ``Z`` (rows x margins) with a design matrix ``X``.

    ``X`` always starts with an intercept column of ones.  ``weights`` are
    nonnegative frequency weights, so a contingency table can be held as one
    row per distinct cell; :attr:`n` is the total weight.

    Parameters
    ----------
    counts : (rows, m) array of nonnegative integers
    design : (rows, p + 1) array, optional
        Defaults to the intercept-only design.
    weights : (rows,) array, optional
        Defaults to ones.
    covariate_names : sequence of str, optional
        Names of the non-intercept design columns.
    """

    counts: np.ndarray
    design: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    covariate_names: Sequence[str] = field(default_factory=list)

    def __post_init__(self):
        Z = np.asarray(self.counts)
        if Z.ndim != 2:
            raise ValueError("counts must be a two-dimensional array")
        Zf = Z.astype(float)
        if not np.all(np.isfinite(Zf)) or np.any(Zf < 0) or np.any(Zf % 1 != 0):
            raise ValueError("counts must be nonnegative integers")
        self.counts = Z.astype(np.int64)
        rows = self.counts.shape[0]
        if self.design is None:
            self.design = np.ones((rows, 1))
        X = np.asarray(self.design, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] != rows:
            raise ValueError("design and counts have different row counts")
        if X.shape[1] == 0 or not np.all(X[:, 0] == 1.0):
            raise ValueError("the first design column must be the intercept (all ones)")
        if not np.all(np.isfinite(X)):
            raise ValueError("design contains non-finite values")
        self.design = X
        w = np.ones(rows) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != (rows,) or np.any(~(w >= 0)):
            raise ValueError("weights must be a nonnegative vector, one per row")
        self.weights = w
        names = list(self.covariate_names)
        if not names:
            names = [f"x{k}" for k in range(1, X.shape[1])]
        if len(names) != X.shape[1] - 1:
            raise ValueError("one name per non-intercept covariate is required")
        self.covariate_names = names

    @classmethod
    def from_covariates(cls, counts, covariates=None, weights=None, names=None) -> "ObservationSet":
        """Build from counts and covariates without the intercept column."""
        counts = np.asarray(counts)
        rows = counts.shape[0]
        if covariates is None:
            X = np.ones((rows, 1))
        else:
            C = np.asarray(covariates, dtype=float).reshape(rows, -1)
            X = np.column_stack([np.ones(rows), C])
        return cls(counts, X, weights, names or [])

    # -- shape ---------------------------------------------------------------

    @property
    def n(self) -> float:
        """Number of observations (total frequency weight)."""
        return float(self.weights.sum())

    @property
    def n_rows(self) -> int:
        return self.counts.shape[0]

    @property
    def m(self) -> int:
        return self.counts.shape[1]

    @property
    def p(self) -> int:
        return self.design.shape[1] - 1

    # -- summaries -------------------------------------------------------------

    @property
    def zero_rows(self) -> np.ndarray:
        return np.all(self.counts == 0, axis=1)

    @property
    def zero_fraction(self) -> float:
        return float(self.weights[self.zero_rows].sum() / self.n)

    def correlation(self) -> np.ndarray:
        """Weighted Pearson correlation matrix between the margins."""
        Z = self.counts.astype(float)
        w = self.weights / self.n
        mu = w @ Z
        D = Z - mu
        cov = (D * w[:, None]).T @ D
        sd = np.sqrt(np.diag(cov))
        with np.errstate(invalid="ignore", divide="ignore"):
            return cov / np.outer(sd, sd)

    def summary(self) -> dict:
        corr = self.correlation()
        return {
            "n": self.n,
            "m": self.m,
            "p": self.p,
            "rows": self.n_rows,
            "zero_fraction": self.zero_fraction,
            "correlation": [[float(v) for v in r] for r in corr],
        }

    # -- transforms ------------------------------------------------------------

    def subset(self, mask) -> "ObservationSet":
        mask = np.asarray(mask)
        return ObservationSet(self.counts[mask], self.design[mask], self.weights[mask], self.covariate_names)

    def nonzero(self) -> "ObservationSet":
        return self.subset(~self.zero_rows)

    def compress(self) -> "ObservationSet":
        """Merge identical (counts, design) rows, summing their weights."""
        keyed = np.column_stack([self.counts.astype(float), self.design])
        uniq, inverse = np.unique(keyed, axis=0, return_inverse=True)
        w = np.bincount(inverse.ravel(), weights=self.weights, minlength=uniq.shape[0])
        keep = w > 0
        m = self.m
        return ObservationSet(
            uniq[keep, :m].astype(np.int64), uniq[keep, m:], w[keep], self.covariate_names
        )

    def expand(self) -> "ObservationSet":
        """One row per observation; requires integer weights."""
        if np.any(self.weights % 1 != 0):
            raise ValueError("expand requires integer weights")
        reps = self.weights.astype(np.int64)
        return ObservationSet(
            np.repeat(self.counts, reps, axis=0),
            np.repeat(self.design, reps, axis=0),
            None,
            self.covariate_names,
        )

    def same_as(self, other: "ObservationSet") -> bool:
        a, b = self.compress(), other.compress()
        return (
            a.counts.shape == b.counts.shape
            and np.array_equal(a.counts, b.counts)
            and np.array_equal(a.design, b.design)
            and np.allclose(a.weights, b.weights)
        )
