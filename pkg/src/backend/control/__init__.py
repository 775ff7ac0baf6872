"""Approximate controls, indicator inner products, caps and cost of control"""
from .boundary_control import (
    AlphaSweep, ControlProblem, ControlSolution, gamma_estimate, identity_check,
    indicator_inner, indicator_inner_intersection, lcurve_knee, minimality_check,
    solve_alpha_schedule, solve_control,
)
from .caps import CapRegion, PointValueEstimate, ScheduleEntry, cap_build, default_schedule, point_value_product
from .cost_of_control import CostTable, cost_of_control_estimate

__all__ = [
    "AlphaSweep", "ControlProblem", "ControlSolution", "gamma_estimate", "identity_check",
    "indicator_inner", "indicator_inner_intersection", "lcurve_knee", "minimality_check",
    "solve_alpha_schedule", "solve_control", "CapRegion", "PointValueEstimate", "ScheduleEntry",
    "cap_build", "default_schedule", "point_value_product", "CostTable",
    "cost_of_control_estimate",
]
