"""Disturbed ODE systems with outputs, disturbance signals and integration."""

from .domain import DomainSpec, ball_grid, cartesian, sample_ball
from .integrate import parallel_map, resample, simulate
from .signals import DisturbanceSignal, make_signal
from .system import (DynamicalSystem, GradientReport, ScalarField, StepStats, Trajectory,
                     gradient_check)

__all__ = [
    "DomainSpec", "DisturbanceSignal", "DynamicalSystem", "GradientReport", "ScalarField",
    "StepStats", "Trajectory", "ball_grid", "cartesian", "gradient_check", "make_signal",
    "parallel_map", "resample", "sample_ball", "simulate",
]
