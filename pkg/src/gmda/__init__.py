"""Gaussian mixture discriminant analysis that tolerates noisy training labels.

The model learns, jointly by EM, one Gaussian mixture per class, a K x K
label-flipping matrix describing how true labels turn into observed ones, and
the class priors. Prediction returns clean-label posteriors for new points.
"""

__version__ = "0.1.0"

from . import errors
from .data import (
    Dataset,
    NoiseSpec,
    Scaler,
    SynthSpec,
    flip_matrix,
    generate,
    inject_noise,
    kfold,
    load_csv,
    load_matrix_csv,
    save_csv,
    split,
    standardize,
)
from .gaussian import GaussianComponent, log_pdf, log_sum_exp, regularize
from .harness import (
    CellResult,
    ExperimentSpec,
    RunRecord,
    emit_table,
    error_rate,
    recovery_report,
    run_experiment,
)
from .initialization import KMeansResult, init_params, kmeans
from .model import (
    e_step,
    fit,
    fit_single_gaussian,
    load_params,
    log_class_density,
    log_likelihood,
    m_step,
    params_from_dict,
    params_to_dict,
    predict_label,
    predict_posterior,
    save_params,
)
from .params import FitConfig, FitReport, GmdaParams, Responsibilities

__all__ = [
    "CellResult",
    "Dataset",
    "ExperimentSpec",
    "FitConfig",
    "FitReport",
    "GaussianComponent",
    "GmdaParams",
    "KMeansResult",
    "NoiseSpec",
    "Responsibilities",
    "RunRecord",
    "Scaler",
    "SynthSpec",
    "e_step",
    "emit_table",
    "error_rate",
    "errors",
    "fit",
    "fit_single_gaussian",
    "flip_matrix",
    "generate",
    "init_params",
    "inject_noise",
    "kfold",
    "kmeans",
    "load_csv",
    "load_matrix_csv",
    "load_params",
    "log_class_density",
    "log_likelihood",
    "log_pdf",
    "log_sum_exp",
    "m_step",
    "params_from_dict",
    "params_to_dict",
    "predict_label",
    "predict_posterior",
    "recovery_report",
    "regularize",
    "run_experiment",
    "save_csv",
    "save_params",
    "split",
    "standardize",
]
