"""Group-wise per-sample gradient clipping for differentially private training."""

from .accountant import PrivacyLedger, calibrate_sigma, compose_and_convert, rdp_gaussian
from .clipping import (ClipConfig, GroupingPlan, PlanError, PrivateGradient,
                       abadi_clip_factor, auto_clip_factor, build_grouping,
                       group_private_gradient)
from .engine import (ArchitectureSpec, ForwardCache, LayerSpec, Network, backward_layer,
                     clipped_weight_grad, forward, ghost_norm, load_arch)
from .memory import PeakReport, analytic_peaks, boundary_sweep, plan_search
from .schedule import MemoryLedger, StepResult, dp_step, naive_dp_step, train
from .tensor import DimensionError, RngState, frobenius_norm_sq, gaussian, matmul
from .theory import (TheoryParams, counterexample_verify, distance_measure,
                     distance_measure_inverse, lemma_lower_bound_check)

__version__ = "0.1.0"

__all__ = [
    "ArchitectureSpec",
    "ClipConfig",
    "DimensionError",
    "ForwardCache",
    "GroupingPlan",
    "LayerSpec",
    "MemoryLedger",
    "Network",
    "PeakReport",
    "PlanError",
    "PrivacyLedger",
    "PrivateGradient",
    "RngState",
    "StepResult",
    "TheoryParams",
    "abadi_clip_factor",
    "analytic_peaks",
    "auto_clip_factor",
    "backward_layer",
    "boundary_sweep",
    "build_grouping",
    "calibrate_sigma",
    "clipped_weight_grad",
    "compose_and_convert",
    "counterexample_verify",
    "distance_measure",
    "distance_measure_inverse",
    "dp_step",
    "forward",
    "frobenius_norm_sq",
    "gaussian",
    "ghost_norm",
    "group_private_gradient",
    "lemma_lower_bound_check",
    "load_arch",
    "matmul",
    "naive_dp_step",
    "plan_search",
    "rdp_gaussian",
    "train",
]
