"""Complier average causal effects with a nonignorably missing binary outcome.

A single binary variable acts as both the instrument for treatment uptake and
the shadow variable for the outcome's missingness mechanism.
"""

__version__ = "0.1.0"

from .errors import DataError, NumericalError, ShadowCaceError
from .model import LOGISTIC, PROBIT, Dataset, OutcomeSupport, Record, Theta, validate_dataset
from .identification import JointLaw, ObservedLaw, identify, identify_full_law, observed_law_from_joint
from .gmm import GmmFit, OptimizerSettings, minimize, sample_moments, two_step_fit
from .causal import CaceEstimate, cace, stratified_cace, wald_ratio
from .simulation import SimConfig, run_replications, simulate_dataset, table3, true_cace_closed_form
from .io import read_csv, table4_dataset, write_csv

__all__ = [
    "__version__",
    "ShadowCaceError", "DataError", "NumericalError",
    "LOGISTIC", "PROBIT", "Dataset", "OutcomeSupport", "Record", "Theta", "validate_dataset",
    "JointLaw", "ObservedLaw", "identify", "identify_full_law", "observed_law_from_joint",
    "GmmFit", "OptimizerSettings", "minimize", "sample_moments", "two_step_fit",
    "CaceEstimate", "cace", "stratified_cace", "wald_ratio",
    "SimConfig", "run_replications", "simulate_dataset", "table3", "true_cace_closed_form",
    "read_csv", "table4_dataset", "write_csv",
]
