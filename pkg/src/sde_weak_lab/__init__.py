"""Weak approximation of SDEs with superlinear coefficients.

Modified Euler and modified Milstein-Talay schemes with pluggable taming
maps, parallel Monte Carlo weak-error studies and the moment-bound order
predictor.
"""

__version__ = "0.1.0"

from .maps import TamingMap, apply_map, check_h1_h3, map_defect
from .model import OperatorValues, SdeProblem, builtin_problem, eval_operators
from .predictor import moment_caps, predict_order, required_moment
from .schemes import SchemeConfig, integrate, integrate_with_variation, scheme_preset, step
from .stochastic import BatchSpec, StreamSpec, WienerPackage, sample_package
from .weakconv import (
    TestFunction, WeakErrorTable, estimate_functional, fit_order, moment_trace,
    one_step_moment_gap, weak_error_study,
)

__all__ = [
    "TamingMap", "apply_map", "check_h1_h3", "map_defect",
    "OperatorValues", "SdeProblem", "builtin_problem", "eval_operators",
    "moment_caps", "predict_order", "required_moment",
    "SchemeConfig", "integrate", "integrate_with_variation", "scheme_preset", "step",
    "BatchSpec", "StreamSpec", "WienerPackage", "sample_package",
    "TestFunction", "WeakErrorTable", "estimate_functional", "fit_order", "moment_trace",
    "one_step_moment_gap", "weak_error_study",
]
