"""Model families, model specifications and parameter containers."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from ..univariate import ETA_CAP, MarginKind


class Family(str, enum.Enum):
    MIP = "MIP"
    MINB = "MINB"
    MIH = "MIH"
    MP = "MP"
    MNB = "MNB"
    MZIP1 = "MZIP1"
    MZINB1 = "MZINB1"
    MZIH1 = "MZIH1"
    MZIP2 = "MZIP2"
    MZINB2 = "MZINB2"
    MZMP1 = "MZMP1"
    MZMNB1 = "MZMNB1"
    MZMH1 = "MZMH1"
    MZMP2 = "MZMP2"
    MZMNB2 = "MZMNB2"

    @property
    def layer(self) -> str:
        """``"base"``, ``"zi"`` (zero-inflated) or ``"zm"`` (zero-modified)."""
        if self.value.startswith("MZI"):
            return "zi"
        if self.value.startswith("MZM"):
            return "zm"
        return "base"

    @property
    def base(self) -> str:
        """Underlying count model: ``ip``, ``inb``, ``ih``, ``mp`` or ``mnb``."""
        return _BASE_OF[self]

    @property
    def is_hurdle(self) -> bool:
        return self.base == "ih"

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def parse(cls, value) -> "Family":
        if isinstance(value, cls):
            return value
        key = str(value).strip().upper().replace(" ", "")
        key = _ALIASES.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown model family {value!r}") from None


_BASE_OF = {
    Family.MIP: "ip", Family.MINB: "inb", Family.MIH: "ih", Family.MP: "mp", Family.MNB: "mnb",
    Family.MZIP1: "ip", Family.MZINB1: "inb", Family.MZIH1: "ih", Family.MZIP2: "mp",
    Family.MZINB2: "mnb", Family.MZMP1: "ip", Family.MZMNB1: "inb", Family.MZMH1: "ih",
    Family.MZMP2: "mp", Family.MZMNB2: "mnb",
}

_LABELS = {
    Family.MIP: "MIP", Family.MINB: "MINB", Family.MIH: "MIH", Family.MP: "MP", Family.MNB: "MNB",
    Family.MZIP1: "Type I MZIP", Family.MZINB1: "Type I MZINB", Family.MZIH1: "Type I MZIH",
    Family.MZIP2: "Type II MZIP", Family.MZINB2: "Type II MZINB",
    Family.MZMP1: "Type I MZMP", Family.MZMNB1: "Type I MZMNB", Family.MZMH1: "Type I MZMH",
    Family.MZMP2: "Type II MZMP", Family.MZMNB2: "Type II MZMNB",
}

# "Type II MZIP" -> "MZIP2" and similar
_ALIASES = {lab.upper().replace(" ", ""): fam.value for fam, lab in _LABELS.items()}

ALL_FAMILIES = tuple(Family)
ZI_FAMILIES = tuple(f for f in Family if f.layer == "zi")
ZM_FAMILIES = tuple(f for f in Family if f.layer == "zm")
BASE_FAMILIES = tuple(f for f in Family if f.layer == "base")


def counterpart(family: Family) -> Family:
    """ZI family <-> ZM family with the same base model."""
    family = Family.parse(family)
    if family.layer == "zi":
        return Family(family.value.replace("MZI", "MZM"))
    if family.layer == "zm":
        return Family(family.value.replace("MZM", "MZI"))
    raise ValueError("base families have no counterpart")


@dataclass(frozen=True)
class ModelSpec:
    """One model family plus its margin choices and covariate layout.

    ``covariate_mask`` maps a component name (``gamma``, ``beta1``..``betam``,
    ``alpha1``..``alpham``) to the design columns it uses; column 0 is the
    intercept and is always included.  Components not listed are
    intercept-only.
    """

    family: Family
    m: int = 2
    margin_kinds: Optional[tuple] = None
    covariate_mask: Mapping[str, tuple] = field(default_factory=dict)

    def __post_init__(self):
        fam = Family.parse(self.family)
        object.__setattr__(self, "family", fam)
        if self.m < 2:
            raise ValueError("at least two margins are required")
        if fam.is_hurdle:
            kinds = self.margin_kinds
            if kinds is None:
                kinds = (MarginKind.USNB,) * self.m
            elif isinstance(kinds, (str, MarginKind)):
                kinds = (MarginKind.parse(kinds),) * self.m
            kinds = tuple(MarginKind.parse(k) for k in kinds)
            if len(kinds) != self.m:
                raise ValueError("one margin kind per margin is required")
            object.__setattr__(self, "margin_kinds", kinds)
        elif self.margin_kinds is not None:
            raise ValueError(f"{fam.value} takes no margin kinds")
        cov = {}
        valid = set(self.components())
        for name, cols in dict(self.covariate_mask).items():
            if name not in valid:
                raise ValueError(
                    f"component {name!r} cannot take covariates in {fam.value}"
                    + (" (lambda0 is covariate-free)" if name == "lambda0" else "")
                )
            cols = tuple(sorted(set(int(c) for c in cols) | {0}))
            if min(cols) < 0:
                raise ValueError("column indices must be nonnegative")
            cov[name] = cols
        object.__setattr__(self, "covariate_mask", cov)

    # -- structure -----------------------------------------------------------

    @property
    def layer(self) -> str:
        return self.family.layer

    @property
    def base(self) -> str:
        return self.family.base

    def components(self) -> list:
        """Regression components (those with a coefficient vector)."""
        comps = ["gamma"] if self.layer != "base" else []
        comps += [f"beta{j + 1}" for j in range(self.m)]
        if self.family.is_hurdle:
            comps += [f"alpha{j + 1}" for j in range(self.m)]
        return comps

    def columns(self, component: str) -> tuple:
        return self.covariate_mask.get(component, (0,))

    def design(self, component: str, X: np.ndarray) -> np.ndarray:
        cols = self.columns(component)
        if max(cols) >= X.shape[1]:
            raise ValueError(f"{component} uses column {max(cols)} but the design has {X.shape[1]}")
        return X[:, cols]

    def has_phi(self, j: Optional[int] = None) -> bool:
        if self.base == "inb":
            return True
        if self.base == "mnb":
            return j is None or j == 0
        if self.base == "ih":
            if j is None:
                return any(k.has_dispersion for k in self.margin_kinds)
            return self.margin_kinds[j].has_dispersion
        return False

    @property
    def shared_phi(self) -> bool:
        return self.base == "mnb"

    @property
    def has_lambda0(self) -> bool:
        return self.base == "mp"

    @classmethod
    def build(cls, family, m=2, margin_kinds=None, covariates="none", p: int = 0):
        """Convenience constructor; ``covariates`` is ``"none"``, ``"all"`` or a mapping."""
        fam = Family.parse(family)
        spec = cls(fam, m, margin_kinds)
        if covariates in (None, "none"):
            return spec
        if covariates == "all":
            cols = tuple(range(p + 1))
            return cls(fam, m, spec.margin_kinds, {c: cols for c in spec.components()})
        return cls(fam, m, spec.margin_kinds, dict(covariates))

    # -- parameter layout ------------------------------------------------------

    def layout(self, covariate_names: Optional[Sequence[str]] = None) -> list:
        """Ordered ``(name, lower_bound)`` pairs for the packed parameter vector."""
        def colname(c):
            if c == 0:
                return "intercept"
            if covariate_names is not None and c - 1 < len(covariate_names):
                return covariate_names[c - 1]
            return f"x{c}"

        out = []
        for comp in self.components():
            out += [(f"{comp}:{colname(c)}", -np.inf) for c in self.columns(comp)]
        if self.shared_phi:
            out.append(("phi", 0.0))
        else:
            out += [(f"phi{j + 1}", 0.0) for j in range(self.m) if self.has_phi(j)]
        if self.has_lambda0:
            out.append(("lambda0", 0.0))
        return out

    def param_names(self, covariate_names=None) -> list:
        return [name for name, _ in self.layout(covariate_names)]

    @property
    def n_params(self) -> int:
        return len(self.layout())

    def pack(self, params: "ParameterSet") -> np.ndarray:
        parts = []
        if self.layer != "base":
            parts.append(params.gamma)
        parts += list(params.beta)
        if self.family.is_hurdle:
            parts += list(params.alpha)
        if self.shared_phi:
            parts.append(np.atleast_1d(params.phi)[:1])
        elif self.has_phi():
            parts.append(np.array([params.phi[j] for j in range(self.m) if self.has_phi(j)]))
        if self.has_lambda0:
            parts.append([params.lambda0])
        return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])

    def unpack(self, vec) -> "ParameterSet":
        vec = np.asarray(vec, dtype=float)
        pos = 0

        def take(k):
            nonlocal pos
            out = vec[pos:pos + k].copy()
            pos += k
            return out

        gamma = take(len(self.columns("gamma"))) if self.layer != "base" else None
        beta = [take(len(self.columns(f"beta{j + 1}"))) for j in range(self.m)]
        alpha = None
        if self.family.is_hurdle:
            alpha = [take(len(self.columns(f"alpha{j + 1}"))) for j in range(self.m)]
        phi = None
        if self.shared_phi:
            phi = take(1)
        elif self.has_phi():
            phi = np.full(self.m, np.nan)
            for j in range(self.m):
                if self.has_phi(j):
                    phi[j] = take(1)[0]
        lambda0 = float(take(1)[0]) if self.has_lambda0 else None
        if pos != vec.size:
            raise ValueError(f"expected {pos} parameters, got {vec.size}")
        return ParameterSet(gamma=gamma, beta=beta, alpha=alpha, phi=phi, lambda0=lambda0)

    def validate(self, params: "ParameterSet") -> None:
        """Raise ``ValueError`` when ``params`` does not fit this spec."""
        if (params.gamma is None) != (self.layer == "base"):
            raise ValueError(f"{self.family.value}: gamma presence does not match the family")
        if len(params.beta) != self.m:
            raise ValueError("one beta vector per margin is required")
        for comp in self.components():
            vec = params.component(comp)
            if vec is None or len(vec) != len(self.columns(comp)):
                raise ValueError(f"{comp} must have {len(self.columns(comp))} coefficients")
        if self.has_phi():
            phis = np.atleast_1d(params.phi)
            used = [phis[0]] if self.shared_phi else [phis[j] for j in range(self.m) if self.has_phi(j)]
            if not all(np.isfinite(u) and u > 0 for u in used):
                raise ValueError("dispersion parameters must be positive")
        if self.has_lambda0:
            if params.lambda0 is None or not params.lambda0 >= 0:
                raise ValueError("lambda0 must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "m": self.m,
            "margin_kinds": None if self.margin_kinds is None else [k.value for k in self.margin_kinds],
            "covariate_mask": {k: list(v) for k, v in self.covariate_mask.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            Family.parse(d["family"]),
            int(d.get("m", 2)),
            None if d.get("margin_kinds") is None else tuple(d["margin_kinds"]),
            {k: tuple(v) for k, v in (d.get("covariate_mask") or {}).items()},
        )


@dataclass
class ParameterSet:
    """Coefficient vectors and scalar parameters of one model.

    ``beta[j]`` is the log-link coefficient vector of ``lambda_j``, except in
    hurdle families where it is the logit-link vector of ``pi_j`` and
    ``alpha[j]`` carries the log-link location of ``W_j``.  ``phi`` holds one
    dispersion per margin (NaN where a margin has none) or a single shared
    value for the multivariate negative binomial.
    """

    beta: list
    gamma: Optional[np.ndarray] = None
    alpha: Optional[list] = None
    phi: Optional[np.ndarray] = None
    lambda0: Optional[float] = None

    def __post_init__(self):
        self.beta = [np.atleast_1d(np.asarray(b, dtype=float)) for b in self.beta]
        if self.gamma is not None:
            self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        if self.alpha is not None:
            self.alpha = [np.atleast_1d(np.asarray(a, dtype=float)) for a in self.alpha]
        if self.phi is not None:
            self.phi = np.atleast_1d(np.asarray(self.phi, dtype=float))
        if self.lambda0 is not None:
            self.lambda0 = float(self.lambda0)

    def component(self, name: str):
        if name == "gamma":
            return self.gamma
        if name.startswith("beta"):
            return self.beta[int(name[4:]) - 1]
        if name.startswith("alpha"):
            return None if self.alpha is None else self.alpha[int(name[5:]) - 1]
        raise KeyError(name)

    def copy(self) -> "ParameterSet":
        return ParameterSet(
            beta=[b.copy() for b in self.beta],
            gamma=None if self.gamma is None else self.gamma.copy(),
            alpha=None if self.alpha is None else [a.copy() for a in self.alpha],
            phi=None if self.phi is None else self.phi.copy(),
            lambda0=self.lambda0,
        )

    def to_dict(self) -> dict:
        def lst(a):
            return None if a is None else [None if np.isnan(x) else float(x) for x in a]

        return {
            "gamma": lst(self.gamma),
            "beta": [lst(b) for b in self.beta],
            "alpha": None if self.alpha is None else [lst(a) for a in self.alpha],
            "phi": lst(self.phi),
            "lambda0": self.lambda0,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterSet":
        def arr(a):
            return None if a is None else np.array([np.nan if x is None else x for x in a], dtype=float)

        return cls(
            beta=[arr(b) for b in d["beta"]],
            gamma=arr(d.get("gamma")),
            alpha=None if d.get("alpha") is None else [arr(a) for a in d["alpha"]],
            phi=arr(d.get("phi")),
            lambda0=d.get("lambda0"),
        )


def expit(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-np.logaddexp(0.0, -x))


def log_expit(x):
    return -np.logaddexp(0.0, -np.asarray(x, dtype=float))


@dataclass
class RowParams:
    """Per-row natural parameters derived from a ParameterSet and a design."""

    lam: np.ndarray                    # (n, m) lambda_j, or W_j location in hurdle families
    pi: Optional[np.ndarray] = None    # (n, m) hurdle occurrence probabilities pi_j
    eta_pi: Optional[np.ndarray] = None
    eta_gamma: Optional[np.ndarray] = None  # (n,) logit of pi0 / pi0'
    phi: Optional[np.ndarray] = None   # (m,) or (1,)
    lambda0: Optional[float] = None

    @property
    def gate(self) -> Optional[np.ndarray]:
        return None if self.eta_gamma is None else expit(self.eta_gamma)


def row_params(spec: ModelSpec, params: ParameterSet, X: np.ndarray) -> RowParams:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    eta_gamma = None
    if spec.layer != "base" and params.gamma is not None:
        eta_gamma = spec.design("gamma", X) @ params.gamma
    if spec.family.is_hurdle:
        eta_pi = np.column_stack([spec.design(f"beta{j + 1}", X) @ params.beta[j] for j in range(spec.m)])
        lam = np.column_stack([
            np.exp(np.clip(spec.design(f"alpha{j + 1}", X) @ params.alpha[j], -ETA_CAP, ETA_CAP))
            for j in range(spec.m)
        ])
        return RowParams(lam, expit(eta_pi), eta_pi, eta_gamma, params.phi, None)
    lam = np.column_stack([
        np.exp(np.clip(spec.design(f"beta{j + 1}", X) @ params.beta[j], -ETA_CAP, ETA_CAP))
        for j in range(spec.m)
    ]).reshape(n, spec.m)
    return RowParams(lam, None, None, eta_gamma, params.phi, params.lambda0)


def intercept_only(spec: ModelSpec) -> bool:
    return all(spec.columns(c) == (0,) for c in spec.components())


def iter_components(spec: ModelSpec) -> Iterable[str]:
    return iter(spec.components())
