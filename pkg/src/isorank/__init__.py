"""Permutation recovery for noisy, partially observed bi-isotonic matrices."""

from .errors import (BudgetExhausted, GenerationFailed, InsufficientObservations, InvalidArgument,
                     IsorankError, NumericNonconvergence)
from .estimation import borda_rank, estimate_matrix, pairwise_estimator, project_bi_isotonic
from .harness import (ExperimentConfig, ExperimentReport, lerr_loss, linf_loss, perm_loss,
                      run_experiment, verify_lemmas)
from .model import NoiseSpec, ProblemInstance, StaircaseConfig, sample_full_observations
from .partial import ObservationLog, estimate_wmp, sample_poisson_observations
from .tree import SampleBudget, estimate, tree_sort
from .trisection import TrisectionParams

__version__ = "0.1.0"

__all__ = [
    "BudgetExhausted", "ExperimentConfig", "ExperimentReport", "GenerationFailed",
    "InsufficientObservations", "InvalidArgument", "IsorankError", "NoiseSpec",
    "NumericNonconvergence", "ObservationLog", "ProblemInstance", "SampleBudget", "StaircaseConfig",
    "TrisectionParams", "borda_rank", "estimate", "estimate_matrix", "estimate_wmp", "lerr_loss",
    "linf_loss", "pairwise_estimator", "perm_loss", "project_bi_isotonic", "run_experiment",
    "sample_full_observations", "sample_poisson_observations", "tree_sort", "verify_lemmas",
]
