"""Systems ``x' = f(x, d)``, ``y = h(x)``, their trajectories and scalar fields.

Every evaluator broadcasts over leading axes: ``field(x, d)`` accepts
``x`` of shape ``(..., n)`` and ``d`` of shape ``(..., m)``. The certificate
checker relies on this to evaluate whole grids at once.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .domain import DomainSpec


@dataclass(frozen=True)
class ScalarField:
    """A C^1 function ``R^n -> R`` together with its analytic gradient."""

    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    name: str = ""

    def __call__(self, x):
        return np.asarray(self.value(np.asarray(x, dtype=float)), dtype=float)

    def gradient(self, x):
        return np.asarray(self.grad(np.asarray(x, dtype=float)), dtype=float)

    def lie_derivative(self, system, x, d):
        """``grad V(x) . f(x, d)``."""
        return np.sum(self.gradient(x) * system.field(x, d), axis=-1)


@dataclass(frozen=True)
class DynamicalSystem:
    """Disturbed ODE with an output map.

    ``equilibrium_under_all_d`` marks systems where ``f(0, d) = 0`` for every
    admissible ``d``; otherwise only ``f(0, 0) = 0`` is expected.
    ``kink`` optionally returns a scalar whose zero set is a surface where
    the field is only C^0; the adaptive integrator caps its step near it.
    """

    dim_state: int
    dim_disturbance: int
    field: Callable[[np.ndarray, np.ndarray], np.ndarray]
    output: Callable[[np.ndarray], np.ndarray]
    disturbance_set: DomainSpec
    dim_output: int = 1
    equilibrium_under_all_d: bool = False
    name: str = ""
    kink: Callable[[np.ndarray], float] | None = None

    def __post_init__(self):
        if self.dim_state < 1:
            raise ValueError("state dimension must be positive")
        if self.disturbance_set.dim != self.dim_disturbance:
            raise ValueError("disturbance set dimension does not match dim_disturbance")

    def f(self, x, d):
        return np.asarray(self.field(np.asarray(x, dtype=float), np.asarray(d, dtype=float)), dtype=float)

    def h(self, x):
        y = np.asarray(self.output(np.asarray(x, dtype=float)), dtype=float)
        return y.reshape(np.shape(x)[:-1] + (self.dim_output,))

    def check_invariants(self, rng=None, n_samples=64, atol=1e-12):
        """Return a dict of invariant checks (h(0)=0 and the equilibrium flags)."""
        rng = np.random.default_rng(0) if rng is None else rng
        zero = np.zeros(self.dim_state)
        out = {"output_zero": bool(np.all(np.abs(self.h(zero)) <= atol))}
        out["field_zero_at_zero_input"] = bool(
            np.all(np.abs(self.f(zero, np.zeros(self.dim_disturbance))) <= atol))
        if self.equilibrium_under_all_d:
            ds = self.disturbance_set.sample(rng, n_samples)
            vals = self.f(np.zeros((n_samples, self.dim_state)), ds)
            out["field_zero_for_all_d"] = bool(np.all(np.abs(vals) <= atol))
        return out


@dataclass(frozen=True)
class StepStats:
    method: str
    accepted: int
    rejected: int
    max_error_estimate: float | None
    tol: float | None

    def to_dict(self):
        return {"method": self.method, "accepted": self.accepted, "rejected": self.rejected,
                "max_error_estimate": self.max_error_estimate, "tol": self.tol}


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-sampled solution ``phi(t, x0; d)`` and its output.

    ``slopes`` holds ``f`` at each node (right derivative), ``slopes_left``
    the left derivative; together they give the cubic Hermite dense output
    of :meth:`at`.
    """

    times: np.ndarray
    states: np.ndarray
    outputs: np.ndarray
    step_stats: StepStats
    slopes: np.ndarray = field(repr=False, default=None)
    slopes_left: np.ndarray = field(repr=False, default=None)
    disturbance_norms: np.ndarray | None = field(repr=False, default=None)

    @property
    def horizon(self):
        return float(self.times[-1])

    @property
    def output_norms(self):
        return np.linalg.norm(self.outputs, axis=1)

    def at(self, t):
        """Hermite interpolation of the state at times ``t``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        idx = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2)
        t0, t1 = self.times[idx], self.times[idx + 1]
        h = (t1 - t0)[:, None]
        s = ((t - t0) / (t1 - t0))[:, None]
        x0, x1 = self.states[idx], self.states[idx + 1]
        m0, m1 = self.slopes[idx], self.slopes_left[idx + 1]
        h00 = 2 * s**3 - 3 * s**2 + 1
        h10 = s**3 - 2 * s**2 + s
        h01 = -2 * s**3 + 3 * s**2
        h11 = s**3 - s**2
        return h00 * x0 + h10 * h * m0 + h01 * x1 + h11 * h * m1

    def tail_mask(self, fraction=0.2):
        start = self.times[-1] - fraction * (self.times[-1] - self.times[0])
        return self.times >= start

    def to_csv(self):
        n = self.states.shape[1]
        k = self.outputs.shape[1]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"y{i + 1}" for i in range(k)])
        for t, x, y in zip(self.times, self.states, self.outputs):
            writer.writerow([format(v, ".17g") for v in (t, *x, *y)])
        return buf.getvalue()

    def to_dict(self):
        return {
            "times": self.times.tolist(),
            "states": self.states.tolist(),
            "outputs": self.outputs.tolist(),
            "step_stats": self.step_stats.to_dict(),
        }


@dataclass(frozen=True)
class GradientReport:
    max_rel_error: float
    worst_point: np.ndarray
    analytic: np.ndarray
    numeric: np.ndarray
    n_points: int

    def ok(self, tol):
        return self.max_rel_error <= tol


def gradient_check(scalar_field: ScalarField, points, h=1e-6):
    """Compare the analytic gradient with central differences.

    The error at a point is ``|g_fd - g|_inf / max(1, |g|_inf)``; the report
    keeps the worst point.
    """
    if not 1e-9 <= h <= 1e-3:
        raise ValueError("difference step must lie in [1e-9, 1e-3]")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = pts.shape[1]
    analytic = scalar_field.gradient(pts).reshape(pts.shape)
    numeric = np.empty_like(pts)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        numeric[:, i] = (scalar_field(pts + e) - scalar_field(pts - e)) / (2 * h)
    scale = np.maximum(1.0, np.max(np.abs(analytic), axis=1))
    err = np.max(np.abs(numeric - analytic), axis=1) / scale
    worst = int(np.argmax(err))
    return GradientReport(float(err[worst]), pts[worst], analytic, numeric, len(pts))
