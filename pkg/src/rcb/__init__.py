"""Demonstration selection for in-context learning under class imbalance.

Selection scores are reweighted by a two-component per-class multiplier:
an effective-number class weight plus a conditional bias estimated by
Bayesian optimization on a balanced subset.  The package also ships the
classical rebalancing baselines, a synthetic posterior oracle for
model-free verification, and a config-driven experiment CLI.
"""

from .dataset import (
    Example,
    ImbalanceSpec,
    LabeledDataset,
    balanced_subset,
    imbalance_ratio,
    load_dataset,
    make_imbalanced,
    save_dataset,
)
from .weights import (
    BiasVector,
    ClassWeightVector,
    combined_weights,
    compute_weights,
    decomposition_check,
    effective_number_weights,
    frequency_weights,
    uniform_weights,
)
from .selection import (
    Candidate,
    RankedCandidates,
    Scorer,
    candidate_pool,
    oversample,
    reweighted_select,
    stratified_select,
    top_k,
    undersample,
)
from .bayesopt import (
    BOConfig,
    BOState,
    Objective,
    default_search_box,
    estimate_bias,
    expected_improvement,
    gp_posterior,
    optimize,
)
from .predictor import (
    OracleConfig,
    PromptTemplate,
    SyntheticOraclePredictor,
    kde_posterior_predict,
    mismatch,
    perplexity,
    predict_generate_llm,
    predict_perplexity_llm,
)
from .evaluation import (
    EvalReport,
    classification_metrics,
    exact_match,
    kl_conditional_diagnostic,
    mean_std,
    normalize_answer,
)
from .synthetic import gaussian_world

__version__ = "0.1.0"

__all__ = [
    "Example",
    "ImbalanceSpec",
    "LabeledDataset",
    "balanced_subset",
    "imbalance_ratio",
    "load_dataset",
    "make_imbalanced",
    "save_dataset",
    "BiasVector",
    "ClassWeightVector",
    "combined_weights",
    "compute_weights",
    "decomposition_check",
    "effective_number_weights",
    "frequency_weights",
    "uniform_weights",
    "Candidate",
    "RankedCandidates",
    "Scorer",
    "candidate_pool",
    "oversample",
    "reweighted_select",
    "stratified_select",
    "top_k",
    "undersample",
    "BOConfig",
    "BOState",
    "Objective",
    "default_search_box",
    "estimate_bias",
    "expected_improvement",
    "gp_posterior",
    "optimize",
    "OracleConfig",
    "PromptTemplate",
    "SyntheticOraclePredictor",
    "kde_posterior_predict",
    "mismatch",
    "perplexity",
    "predict_generate_llm",
    "predict_perplexity_llm",
    "EvalReport",
    "classification_metrics",
    "exact_match",
    "kl_conditional_diagnostic",
    "mean_std",
    "normalize_answer",
    "gaussian_world",
]
