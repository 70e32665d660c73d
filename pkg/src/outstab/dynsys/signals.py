"""Disturbance signals ``d(t)``.

All signals are right-continuous. Measurable inputs are approximated by
piecewise-constant ones; the integrator restarts at every switch time so
that no step straddles a discontinuity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import OutOfDomain
from .domain import DomainSpec

SIGNAL_KINDS = (
    "zero",
    "constant",
    "piecewise-constant",
    "sinusoid",
    "decaying",
    "seeded-random-steps",
)


@dataclass(frozen=True, eq=False)
class DisturbanceSignal:
    """A time-parametrized disturbance with known essential sup norm.

    Build instances with :func:`make_signal`; it validates the parameters
    against a :class:`DomainSpec` and computes ``sup_norm``.
    """

    kind: str
    dim: int
    params: dict
    sup_norm: float
    switch_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    levels: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))

    @property
    def breakpoints(self):
        """Discontinuity times (empty for continuous kinds)."""
        return self.switch_times

    @property
    def vanishing(self):
        """True when ``d(t) -> 0`` as ``t -> inf``."""
        if self.kind == "zero":
            return True
        if self.kind == "decaying" and self.params["rate"] > 0:
            return True
        if self.kind in ("piecewise-constant", "seeded-random-steps"):
            return bool(np.all(self.levels[-1] == 0))
        if self.kind == "constant":
            return bool(np.all(np.asarray(self.params["value"]) == 0))
        return bool(np.all(np.asarray(self.params["amplitude"]) == 0))

    def value(self, t, side="right"):
        """Evaluate ``d(t)``; ``side='left'`` gives the left limit at switches."""
        k = self.kind
        if k == "zero":
            return np.zeros(self.dim)
        if k == "constant":
            return np.asarray(self.params["value"], dtype=float)
        if k in ("piecewise-constant", "seeded-random-steps"):
            idx = np.searchsorted(self.switch_times, t, side=side)
            return self.levels[idx]
        amp = np.asarray(self.params["amplitude"], dtype=float)
        if k == "sinusoid":
            return amp * np.sin(self.params["omega"] * t + self.params.get("phase", 0.0))
        return amp * np.exp(-self.params["rate"] * t)

    __call__ = value

    def sample(self, times):
        """Signal values on a grid of times, shape ``(len(times), dim)``."""
        return np.array([self.value(t) for t in np.asarray(times, dtype=float)]).reshape(-1, self.dim)

    def norm(self, times):
        return np.linalg.norm(self.sample(times), axis=1)

    def to_dict(self):
        out = {"kind": self.kind, "dim": self.dim, "sup_norm": self.sup_norm}
        for key, val in self.params.items():
            out[key] = val.tolist() if isinstance(val, np.ndarray) else val
        if self.kind == "seeded-random-steps":
            out["levels"] = self.levels.tolist()
        return out


def _vec(value, dim):
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size == 1 and dim > 1:
        arr = np.full(dim, float(arr[0]))
    if arr.shape != (dim,):
        raise ValueError(f"expected a vector of length {dim}, got shape {arr.shape}")
    return arr


def _require_in(domain, points, what):
    pts = np.asarray(points, dtype=float).reshape(-1, domain.dim)
    inside = domain.contains(pts)
    if not np.all(inside):
        bad = pts[~inside][0]
        raise OutOfDomain(f"{what} value {bad.tolist()} outside {domain.kind} domain")


def make_signal(spec, domain: DomainSpec, seed=0):
    """Construct a :class:`DisturbanceSignal` from a parameter mapping.

    ``spec`` holds ``kind`` plus kind-specific keys:

    * ``constant``: ``value``
    * ``piecewise-constant``: ``times`` (switch times), ``values`` (one more than times)
    * ``sinusoid``: ``amplitude``, ``omega``, optional ``phase``
    * ``decaying``: ``amplitude``, ``rate`` (``d = amplitude * exp(-rate t)``)
    * ``seeded-random-steps``: ``n_steps``, ``step`` (duration); levels are
      drawn from ``domain`` with ``seed`` and the last level is held forever.

    Raises :class:`OutOfDomain` if any value the signal can take leaves
    ``domain``.
    """
    kind = spec["kind"]
    m = domain.dim
    if kind not in SIGNAL_KINDS:
        raise ValueError(f"unknown signal kind {kind!r}")

    if kind == "zero":
        _require_in(domain, np.zeros(m), "zero")
        return DisturbanceSignal("zero", m, {}, 0.0)

    if kind == "constant":
        v = _vec(spec["value"], m)
        _require_in(domain, v, "constant")
        return DisturbanceSignal("constant", m, {"value": v}, float(np.linalg.norm(v)))

    if kind == "piecewise-constant":
        times = np.asarray(spec["times"], dtype=float).ravel()
        values = np.asarray(spec["values"], dtype=float).reshape(len(times) + 1, m)
        if np.any(np.diff(times) <= 0) or (times.size and times[0] <= 0):
            raise ValueError("switch times must be positive and strictly increasing")
        _require_in(domain, values, "piecewise-constant")
        sup = float(np.max(np.linalg.norm(values, axis=1)))
        return DisturbanceSignal(kind, m, {"times": times, "values": values}, sup,
                                 switch_times=times, levels=values)

    if kind == "seeded-random-steps":
        n_steps = int(spec["n_steps"])
        step = float(spec["step"])
        if n_steps < 1 or step <= 0:
            raise ValueError("seeded-random-steps needs n_steps >= 1 and step > 0")
        rng = np.random.default_rng(seed)
        levels = domain.sample(rng, n_steps)
        _require_in(domain, levels, "random step")
        times = step * np.arange(1, n_steps)
        sup = float(np.max(np.linalg.norm(levels, axis=1)))
        return DisturbanceSignal(kind, m, {"n_steps": n_steps, "step": step, "seed": seed}, sup,
                                 switch_times=times, levels=levels)

    amp = _vec(spec["amplitude"], m)
    if kind == "sinusoid":
        omega = float(spec["omega"])
        phase = float(spec.get("phase", 0.0))
        if omega == 0.0:
            extremes = amp[None, :] * np.sin(phase)
            sup = float(np.linalg.norm(amp) * abs(np.sin(phase)))
        else:
            extremes = np.stack([amp, -amp])
            sup = float(np.linalg.norm(amp))
        params = {"amplitude": amp, "omega": omega, "phase": phase}
    else:
        rate = float(spec["rate"])
        if rate < 0:
            raise ValueError("decay rate must be nonnegative")
        extremes = np.stack([amp, np.zeros(m)])
        sup = float(np.linalg.norm(amp))
        params = {"amplitude": amp, "rate": rate}
    if domain.kind == "finite-set" and np.any(amp != 0):
        raise OutOfDomain(f"{kind} signal sweeps a continuum; finite-set domain cannot hold it")
    # box and ball are convex, so the segment endpoints decide membership
    _require_in(domain, extremes, kind)
    return DisturbanceSignal(kind, m, params, sup)
