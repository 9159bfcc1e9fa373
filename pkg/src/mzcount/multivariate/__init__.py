"""Joint count models: specifications, pmfs, moments and samplers."""

from .moments import MomentSummary, margin_raw_moments, moments
from .pmf import (
    base_log_zero,
    base_logpmf,
    classify_modification,
    family_logpmf,
    gate_probability,
    loglik,
    logpmf_mnb_rows,
    logpmf_mp_rows,
    logpmf_rows,
    nonzero_probabilities,
    pmf_joint,
    pmf_mnb,
    pmf_mp,
)
from .sampling import SamplingError, sample_joint
from .spec import (
    ALL_FAMILIES,
    BASE_FAMILIES,
    ZI_FAMILIES,
    ZM_FAMILIES,
    Family,
    ModelSpec,
    ParameterSet,
    RowParams,
    counterpart,
    expit,
    row_params,
)

__all__ = [
    "ALL_FAMILIES", "BASE_FAMILIES", "ZI_FAMILIES", "ZM_FAMILIES", "Family", "ModelSpec",
    "MomentSummary", "ParameterSet", "RowParams", "SamplingError", "base_log_zero",
    "base_logpmf", "classify_modification", "counterpart", "expit", "family_logpmf",
    "gate_probability", "loglik", "logpmf_mnb_rows", "logpmf_mp_rows", "logpmf_rows",
    "margin_raw_moments", "moments", "nonzero_probabilities", "pmf_joint", "pmf_mnb",
    "pmf_mp", "row_params", "sample_joint",
]
