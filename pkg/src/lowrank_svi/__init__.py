"""Variational inference with diagonal-plus-low-rank Gaussian families."""

from .algorithms import (AllocationConstants, OracleMonitor, OuterLoopConfig,
                         SviConfig, allocate_budget, fit_meanfield_diagonal,
                         run_with_budget, stage1_eigvectors, stage2_eigvalues,
                         svi_gauss, svi_general)
from .lowrank import (LowRankGaussian, PrecisionView, frobenius_precision_error,
                      kl_gaussian, rayleigh_quotients)
from .oracle import (DenseSpectrum, dense_eig, deterministic_power_iteration,
                     fixed_point_precision, kl_gaussian_dense,
                     kl_truncation_floor, projector_distance,
                     save_precision_json)
from .planner import (PlannerInputs, SpectrumModel, combined_rank,
                      min_budget_kl, optimal_rank_kl, optimal_rank_uq)
from .targets import (FunctionTarget, GaussianTarget, LinearRegressionTarget,
                      LogisticTarget, RegularityConstants, TargetPosterior,
                      expected_hessian_mc, hessian_vector_fd, psi_grad)
from .trace import RunTrace, TraceRecord, read_trace_csv

__all__ = [
    "AllocationConstants", "DenseSpectrum", "FunctionTarget", "GaussianTarget",
    "LinearRegressionTarget", "LogisticTarget", "LowRankGaussian",
    "OracleMonitor", "OuterLoopConfig", "PlannerInputs", "PrecisionView",
    "RegularityConstants", "RunTrace", "SpectrumModel", "SviConfig",
    "TargetPosterior", "TraceRecord", "allocate_budget", "combined_rank",
    "dense_eig", "deterministic_power_iteration", "expected_hessian_mc",
    "fit_meanfield_diagonal", "fixed_point_precision",
    "frobenius_precision_error", "hessian_vector_fd", "kl_gaussian",
    "kl_gaussian_dense", "kl_truncation_floor", "min_budget_kl",
    "optimal_rank_kl", "optimal_rank_uq", "projector_distance", "psi_grad",
    "rayleigh_quotients", "read_trace_csv", "run_with_budget",
    "save_precision_json",
    "stage1_eigvectors", "stage2_eigvalues", "svi_gauss", "svi_general",
]
