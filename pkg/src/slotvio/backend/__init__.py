"""Sliding-window nonlinear least squares over keyframes, landmarks and slot factors."""

from slotvio.backend.factors import (GRAVITY, KeyframeState, inertial_residual, ps_residual, ps_weight,
                                     reprojection_residual, robust_cost)
from slotvio.backend.marginalization import LinearPrior, information_to_factor, schur_marginalize
from slotvio.backend.window import (BackendConfig, Landmark, PsFactor, SlidingWindow, SolveReport,
                                    SolverError, marginalize_oldest, optimize_window)

__all__ = ["GRAVITY", "BackendConfig", "KeyframeState", "Landmark", "LinearPrior", "PsFactor",
           "SlidingWindow", "SolveReport", "SolverError", "inertial_residual", "information_to_factor",
           "marginalize_oldest", "optimize_window", "ps_residual", "ps_weight", "reprojection_residual",
           "robust_cost", "schur_marginalize"]
