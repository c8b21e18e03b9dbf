"""Fairness-accuracy frontiers: training sweeps, convex-hull frontiers,
scaling-law fits and delta-distance audits."""

from .audit import ContestedModel, AuditReport, delta_distance, delta_distance_on_curve, resource_requirement
from .closed_form import ScalingConstants, ShapeConstants, pf_loss, scaling_loss, shape_term
from .dgp import Dataset, DgpConfig, generate, load_external
from .fitting import FitProblem, FitResult, extrapolate, fit
from .frontier import FrontierCurve, budget_envelope, lower_convex_hull
from .metrics import bce_loss, dp_gap, evaluate
from .nn_core import MlpArchitecture, MlpModel, init_model, param_count
from .training import SweepConfig, run_sweep, train_one

__all__ = [
    "AuditReport", "ContestedModel", "Dataset", "DgpConfig", "FitProblem", "FitResult",
    "FrontierCurve", "MlpArchitecture", "MlpModel", "ScalingConstants", "ShapeConstants",
    "SweepConfig", "bce_loss", "budget_envelope", "delta_distance", "delta_distance_on_curve",
    "dp_gap", "evaluate", "extrapolate", "fit", "generate", "init_model", "load_external",
    "lower_convex_hull", "param_count", "pf_loss", "resource_requirement", "run_sweep",
    "scaling_loss", "shape_term", "train_one",
]
