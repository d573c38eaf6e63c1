"""Entropy-balancing weights and dose-response curves for continuous exposures."""

__version__ = "0.1.0"

from .balance import BalanceReport, balance_report, effective_sample_size, weighted_ks
from .bootstrap import BootstrapResult, bootstrap_arrays, bootstrap_curve
from .dataset import Dataset, DesignMatrix, Schema, encode, load_csv, moment_targets
from .drc import DoseResponseCurve, estimate_curve, global_poly_fit, local_linear_fit
from .gps import fit_normal_gps
from .pipeline import METHODS, PipelineConfig, compute_weights, run_pipeline
from .solver import EBSolution, build_constraints, entropy_balance, solve, solve_binary

__all__ = [
    "BalanceReport",
    "BootstrapResult",
    "Dataset",
    "DesignMatrix",
    "DoseResponseCurve",
    "EBSolution",
    "METHODS",
    "PipelineConfig",
    "Schema",
    "balance_report",
    "bootstrap_arrays",
    "bootstrap_curve",
    "build_constraints",
    "compute_weights",
    "effective_sample_size",
    "encode",
    "entropy_balance",
    "estimate_curve",
    "fit_normal_gps",
    "global_poly_fit",
    "load_csv",
    "local_linear_fit",
    "moment_targets",
    "run_pipeline",
    "solve",
    "solve_binary",
    "weighted_ks",
]
