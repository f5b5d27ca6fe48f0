"""Predictive-state system identification for controlled dynamical systems.

Learns partially observable, nonlinear controlled systems from trajectory
data by two-stage regression over predictive states in a random-Fourier
feature space, with optional refinement of the learned recurrent filter by
backpropagation through time.
"""

from .datagen import (
    Dataset,
    Trajectory,
    read_dataset,
    sample_iohmm,
    simulate_benchmark,
    simulate_lds,
    write_dataset,
)
from .features import (
    LinearFeaturizer,
    OneHotFeaturizer,
    PcaProjector,
    RffFeaturizer,
    RffMap,
    median_bandwidth,
    pca_fit,
)
from .filtering import filter_update, predict_window, rollout_eval
from .oracles import (
    IoHmm,
    Lds,
    iohmm_exact_filter,
    iohmm_extended_obs,
    iohmm_predictive_state,
    kalman_filter_exact,
    lds_gamma,
    lds_u,
)
from .refine import RefineConfig, bptt_gradients, refine
from .two_stage import (
    FeaturizedData,
    FutureSpec,
    RffPsrModel,
    S1Output,
    build_features,
    estimate_q0,
    learn_rff_psr,
    load_model,
    s1_conditional,
    s1_joint,
    s2_regress,
    save_model,
    train_w_pred,
)

__all__ = [
    "Dataset",
    "Trajectory",
    "read_dataset",
    "sample_iohmm",
    "simulate_benchmark",
    "simulate_lds",
    "write_dataset",
    "LinearFeaturizer",
    "OneHotFeaturizer",
    "PcaProjector",
    "RffFeaturizer",
    "RffMap",
    "median_bandwidth",
    "pca_fit",
    "filter_update",
    "predict_window",
    "rollout_eval",
    "IoHmm",
    "Lds",
    "iohmm_exact_filter",
    "iohmm_extended_obs",
    "iohmm_predictive_state",
    "kalman_filter_exact",
    "lds_gamma",
    "lds_u",
    "RefineConfig",
    "bptt_gradients",
    "refine",
    "FeaturizedData",
    "FutureSpec",
    "RffPsrModel",
    "S1Output",
    "build_features",
    "estimate_q0",
    "learn_rff_psr",
    "load_model",
    "s1_conditional",
    "s1_joint",
    "s2_regress",
    "save_model",
    "train_w_pred",
]

__version__ = "0.1.0"
