"""Singular generalized characteristics of Hamilton-Jacobi equations with Tonelli Lagrangians."""

from __future__ import annotations

__version__ = "0.1.0"

from .action import ActionOptions, FundamentalSolution, fundamental_solution, minimize_action
from .errors import HJSingError
from .fields import ScalarField, fixture_field
from .lax_oleinik import inf_convolution, intrinsic_step, step_time, sup_convolution
from .models import LagrangianModel, check_tonelli, get_model
from .propagation import certify_inclusion, energy_monitor, initial_velocity, trace_arc
from .singularity import classify_point, minimal_energy_element, reachable_gradients
from .weak_kam import fundamental_solution_torus, trace_arc_torus, weak_kam_solve

__all__ = [
    "ActionOptions",
    "FundamentalSolution",
    "HJSingError",
    "LagrangianModel",
    "ScalarField",
    "certify_inclusion",
    "check_tonelli",
    "classify_point",
    "energy_monitor",
    "fixture_field",
    "fundamental_solution",
    "fundamental_solution_torus",
    "get_model",
    "inf_convolution",
    "initial_velocity",
    "intrinsic_step",
    "minimal_energy_element",
    "minimize_action",
    "reachable_gradients",
    "step_time",
    "sup_convolution",
    "trace_arc",
    "trace_arc_torus",
    "weak_kam_solve",
]
