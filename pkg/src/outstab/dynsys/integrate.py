"""Explicit Runge-Kutta integration of disturbed systems.

Two schemes: the classic fixed-step RK4 (used for order checks) and the
Dormand-Prince 4(5) embedded pair with step control on the local error per
unit time. Integration restarts at every disturbance switch time.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..errors import StateBlowup, StepUnderflow
from .signals import DisturbanceSignal
from .system import DynamicalSystem, StepStats, Trajectory

log = logging.getLogger(__name__)

# Dormand-Prince tableau
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_B5 = np.array(_A[6] + (0.0,))
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4
_AM = np.zeros((7, 7))
for _i, _row in enumerate(_A):
    _AM[_i, :len(_row)] = _row

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0


def _segments(signal, horizon):
    cuts = [t for t in np.asarray(signal.breakpoints, dtype=float) if 0.0 < t < horizon]
    edges = [0.0] + cuts + [float(horizon)]
    return list(zip(edges[:-1], edges[1:]))


def _disturbance_in(signal, seg_end):
    """Evaluator for ``d`` restricted to one continuity segment."""
    def d_at(t):
        if t >= seg_end:
            return signal.value(seg_end, side="left")
        return signal.value(t)
    return d_at


def _guard(x, t, guard):
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > guard:
        raise StateBlowup(f"state exceeded guard {guard:g} at t={t:.6g}", time=t, state=x)


def simulate(system: DynamicalSystem, x0, d: DisturbanceSignal, horizon, tol=1e-8, *,
             method="adaptive", dt=None, max_step=None, t_eval=None,
             blowup_guard=1e9, h_min=1e-12, kink_band=1e-6, kink_step=None):
    """Integrate ``system`` from ``x0`` under disturbance ``d`` on ``[0, horizon]``.

    ``method`` is ``"adaptive"`` (Dormand-Prince 4(5)) or ``"rk4"`` (fixed
    step ``dt``). The adaptive scheme accepts a step when the scaled local
    error estimate ``max_i |e_i| / (1 + |x_i|)`` divided by the step length
    is at most ``tol``. ``max_step`` defaults to ``horizon / 1000`` so the
    stored grid stays dense; pass ``t_eval`` to resample the solution on a
    given grid through the Hermite dense output.

    Raises :class:`StateBlowup` if ``|x|_inf`` exceeds ``blowup_guard`` and
    :class:`StepUnderflow` if the adaptive step falls below ``h_min``.
    """
    horizon = float(horizon)
    if not (math.isfinite(horizon) and horizon > 0):
        raise ValueError("horizon must be finite and positive")
    x0 = np.asarray(x0, dtype=float).reshape(system.dim_state)
    if d.dim != system.dim_disturbance:
        raise ValueError("signal dimension does not match the system")

    if method == "rk4":
        if dt is None or dt <= 0:
            raise ValueError("rk4 needs a positive dt")
        times, states, sl, sr, stats = _run_rk4(system, x0, d, horizon, dt, blowup_guard)
    elif method == "adaptive":
        if not 1e-12 <= tol <= 1e-2:
            raise ValueError("tol must lie in [1e-12, 1e-2]")
        max_step = horizon / 1000 if max_step is None else float(max_step)
        kink_step = max_step / 10 if kink_step is None else kink_step
        times, states, sl, sr, stats = _run_dopri(system, x0, d, horizon, tol, max_step,
                                                  blowup_guard, h_min, kink_band, kink_step)
    else:
        raise ValueError(f"unknown method {method!r}")

    traj = Trajectory(times, states, system.h(states), stats, slopes=sr, slopes_left=sl,
                      disturbance_norms=d.norm(times))
    if t_eval is not None:
        traj = resample(system, traj, d, t_eval)
    return traj


def resample(system, traj, d, t_eval):
    """Trajectory on a new grid via the Hermite dense output of ``traj``."""
    t_eval = np.asarray(t_eval, dtype=float)
    if t_eval[0] != 0.0 or np.any(np.diff(t_eval) <= 0) or t_eval[-1] > traj.horizon * (1 + 1e-12):
        raise ValueError("t_eval must start at 0, increase strictly and stay within the horizon")
    states = traj.at(t_eval)
    states[0] = traj.states[0]
    right = system.f(states, np.array([d.value(t) for t in t_eval]).reshape(-1, d.dim))
    left = system.f(states, np.array([d.value(t, side="left") for t in t_eval]).reshape(-1, d.dim))
    return Trajectory(t_eval, states, system.h(states), traj.step_stats, slopes=right,
                      slopes_left=left, disturbance_norms=d.norm(t_eval))


def _run_rk4(system, x0, signal, horizon, dt, guard):
    f = system.f
    times, states, left, right = [0.0], [x0.copy()], [None], []
    x = x0.copy()
    accepted = 0
    for a, b in _segments(signal, horizon):
        d_at = _disturbance_in(signal, b)
        n = max(1, math.ceil((b - a) / dt - 1e-9))
        h = (b - a) / n
        for i in range(n):
            t = a + i * h
            k1 = f(x, d_at(t))
            k2 = f(x + 0.5 * h * k1, d_at(t + 0.5 * h))
            k3 = f(x + 0.5 * h * k2, d_at(t + 0.5 * h))
            k4 = f(x + h * k3, d_at(t + h))
            x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            t_new = b if i == n - 1 else a + (i + 1) * h
            _guard(x, t_new, guard)
            right.append(k1)
            left.append(f(x, d_at(t_new)))
            times.append(t_new)
            states.append(x.copy())
            accepted += 1
    right.append(f(x, signal.value(horizon)))
    left[0] = right[0]
    stats = StepStats("rk4", accepted, 0, None, None)
    return (np.array(times), np.array(states), np.array(left), np.array(right), stats)


def _run_dopri(system, x0, signal, horizon, tol, max_step, guard, h_min, kink_band, kink_step):
    f = system.f
    kink = system.kink
    times, states, left, right = [0.0], [x0.copy()], [None], []
    x = x0.copy()
    accepted = rejected = 0
    max_err = 0.0
    h_next = min(max_step, 0.01 * horizon, 1e-2)
    K = np.empty((7, x.size))
    for a, b in _segments(signal, horizon):
        d_at = _disturbance_in(signal, b)
        t = a
        k1 = f(x, d_at(t))
        while t < b:
            h_cap = max_step
            if kink is not None and abs(kink(x)) < kink_band:
                h_cap = min(h_cap, kink_step)
            h = min(h_next, h_cap)
            last = t + h >= b - 1e-12 * max(1.0, abs(b))
            if last:
                h = b - t
            K[0] = k1
            for s in range(1, 7):
                K[s] = f(x + h * (_AM[s, :s] @ K[:s]), d_at(t + _C[s] * h))
            x_new = x + h * (_B5 @ K)
            err_vec = h * (_E @ K)
            err = float(np.max(np.abs(err_vec) / (1.0 + np.maximum(np.abs(x), np.abs(x_new))))) / h
            factor = MAX_FACTOR if err == 0 else min(MAX_FACTOR, max(MIN_FACTOR, SAFETY * (tol / err) ** 0.25))
            if err <= tol:
                t = b if last else t + h
                x = x_new
                _guard(x, t, guard)
                right.append(k1)
                k1 = K[6].copy()
                left.append(k1)
                times.append(t)
                states.append(x.copy())
                accepted += 1
                max_err = max(max_err, err)
                h_next = max(h_next, h * factor) if last else h * factor
            else:
                rejected += 1
                h_next = h * factor
                if h_next < h_min:
                    raise StepUnderflow(f"step {h_next:.3g} below minimum at t={t:.6g} (err {err:.3g})")
    right.append(f(x, signal.value(horizon)))
    left[0] = right[0]
    stats = StepStats("dopri45", accepted, rejected, max_err, tol)
    return (np.array(times), np.array(states), np.array(left), np.array(right), stats)


def parallel_map(fn, items, jobs=1):
    """Order-preserving map; ``jobs > 1`` uses a thread pool."""
    items = list(items)
    if jobs is None or jobs <= 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))
