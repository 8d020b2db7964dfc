"""Model criteria on the tape: GP, sparse GP, Bayesian linear regression, Kalman filter."""

from .blr import BlrHypers, blr_criterion, blr_graph, blr_predict
from .data import Dataset, load_csv, standardize
from .gp import (GpHypers, SgpState, gp_graph, gp_nll, gp_predict, rbf_kernel, rbf_matrix,
                 sgp_criterion, sgp_graph)
from .kalman import KalmanResult, LdsParams, chol_raw, kalman_filter_nll, kalman_graph, simulate_lds
from .optim import DEFAULT_LR, AdamState, FitResult, adam_step, evaluate, fit

__all__ = [
    "GpHypers", "SgpState", "rbf_kernel", "rbf_matrix", "gp_nll", "sgp_criterion", "gp_graph",
    "sgp_graph", "gp_predict",
    "BlrHypers", "blr_criterion", "blr_graph", "blr_predict",
    "LdsParams", "KalmanResult", "kalman_filter_nll", "kalman_graph", "simulate_lds", "chol_raw",
    "AdamState", "adam_step", "FitResult", "fit", "evaluate", "DEFAULT_LR",
    "Dataset", "load_csv", "standardize",
]
