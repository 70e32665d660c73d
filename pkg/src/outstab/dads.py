"""Deadzone-adapted disturbance suppression for ``y' = theta*y*phi(y) + u + d``.

The closed loop has state ``(y, z)``: ``u`` is a nonlinear-damping feedback
with dynamic gain ``e^z`` and ``z`` integrates ``(y^2/2 - eps)^+`` so it
freezes inside the deadzone ``|y| <= sqrt(2 eps)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from . import rates
from .certkit import CertificateBundle
from .dynsys import DomainSpec, DynamicalSystem, ScalarField, make_signal, simulate
from .dynsys.signals import DisturbanceSignal
from .errors import HorizonTooShort

Z_CAP = 700.0

# name -> (phi, phi', even, phi on floats)
_PHI = {
    "one": (lambda y: np.ones_like(y), lambda y: np.zeros_like(y), True, lambda y: 1.0),
    "y": (lambda y: y, lambda y: np.ones_like(y), False, lambda y: y),
    "y^2": (lambda y: y**2, lambda y: 2 * y, True, lambda y: y * y),
}


@dataclass(frozen=True)
class DadsParams:
    """Controller gains and the known regressor ``phi``.

    ``phi`` is picked by name from ``"one"``, ``"y"`` and ``"y^2"``.
    """

    Gamma: float
    eps_dz: float
    c: float
    a: float
    phi_name: str = "one"
    phi: Callable = field(init=False, repr=False, compare=False)
    dphi: Callable = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("Gamma", "c", "a"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        # eps_dz = 0 is accepted so the threshold formulas can be probed at the limit
        if not self.eps_dz >= 0:
            raise ValueError("eps_dz must be nonnegative")
        if self.phi_name not in _PHI:
            raise ValueError(f"unknown phi {self.phi_name!r}; choose from {sorted(_PHI)}")
        phi, dphi, _, _ = _PHI[self.phi_name]
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "dphi", dphi)

    @property
    def phi_is_one(self):
        return self.phi_name == "one"

    @property
    def phi_even(self):
        return _PHI[self.phi_name][2]

    @property
    def deadzone_radius(self):
        return math.sqrt(2 * self.eps_dz)

    def to_dict(self):
        return {"Gamma": self.Gamma, "eps_dz": self.eps_dz, "c": self.c, "a": self.a,
                "phi": self.phi_name}


@dataclass(frozen=True, eq=False)
class DadsScenario:
    theta: float
    y0: float
    z0: float
    disturbance: DisturbanceSignal
    horizon: float

    def __post_init__(self):
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise ValueError("horizon must be finite and positive")

    def to_dict(self):
        return {"theta": self.theta, "y0": self.y0, "z0": self.z0,
                "disturbance": self.disturbance.to_dict(), "horizon": self.horizon}


def dads_control(y, z, p: DadsParams, return_flag=False):
    """Feedback ``u(y, z)``; ``z`` is capped at 700 before exponentiation.

    Past float range the damping term saturates to ``-inf * sign(y)``;
    ``u(0, z) = 0`` holds regardless. With ``return_flag`` also returns
    whether the cap was hit.
    """
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    zc = np.minimum(z, Z_CAP)
    ph = p.phi(y)
    with np.errstate(over="ignore", invalid="ignore"):
        gain = (1 + np.exp(zc)) / 2 * ((1 + ph**2 * y**2) / (2 * p.a) + p.c + ph**2 / p.c)
        u = -(p.c / 2) * y - np.where(y == 0, 0.0, gain * y)
    if return_flag:
        return u, bool(np.any(z > Z_CAP))
    return u


def dads_rhs(y, z, d, theta, p: DadsParams):
    """Closed-loop derivatives ``(y', z')``."""
    y = np.asarray(y, dtype=float)
    z = np.asarray(z, dtype=float)
    ydot = theta * y * p.phi(y) + dads_control(y, z, p) + d
    zdot = p.Gamma * np.exp(-np.maximum(z, -Z_CAP)) * np.maximum(0.5 * y**2 - p.eps_dz, 0.0)
    return ydot, zdot


def output_deadzone(y, eps_dz):
    """``(|y| - sqrt(2 eps))^+``."""
    return np.maximum(np.abs(y) - math.sqrt(2 * eps_dz), 0.0)


def _rhs_point(y, z, d, theta, p, phi):
    # float-only path for the integrator's single-point calls
    ph = phi(y)
    ez = math.exp(min(z, Z_CAP))
    u = -(p.c / 2) * y - (1 + ez) / 2 * ((1 + ph * ph * y * y) / (2 * p.a) + p.c + ph * ph / p.c) * y
    zdot = p.Gamma * math.exp(-max(z, -Z_CAP)) * max(0.5 * y * y - p.eps_dz, 0.0)
    return theta * y * ph + u + d, zdot


def closed_loop_system(p: DadsParams, theta, d_bound=10.0):
    """Closed loop as a :class:`DynamicalSystem` on ``(y, z)`` with output ``y~``."""
    phi_point = _PHI[p.phi_name][3]

    def field_(x, d):
        if x.ndim == 1:
            return np.array(_rhs_point(float(x[0]), float(x[1]), float(d[0]), theta, p, phi_point))
        ydot, zdot = dads_rhs(x[..., 0], x[..., 1], d[..., 0], theta, p)
        return np.stack([ydot, zdot], axis=-1)

    def output(x):
        return output_deadzone(x[..., 0], p.eps_dz)[..., None]

    def kink(x):
        return 0.5 * x[0] ** 2 - p.eps_dz

    return DynamicalSystem(2, 1, field_, output, DomainSpec.box([-d_bound], [d_bound]),
                           name=f"dads[theta={theta:g}]", kink=kink)


def dads_certificates(p: DadsParams, theta, lam=None, r=1.0):
    """Certificate bundle with ``W = 1/2((y^2/2 - eps)^+)^2`` and
    ``V = W + a/(3 Gamma) ((|theta| - 1 - e^z)^+)^3``.

    ``Q = V``, ``zeta = id``, ``a(s) = s^4/8`` and ``rho(s) = 2cs``. With
    ``lam`` in (0, 1) the IOS pair ``rho(s) = 2c*lam*s`` and
    ``chi(s) = a^2 s^4 / (2c^2 (1-lam)^2)`` is used instead.
    """
    eps, k = p.eps_dz, p.a / (3 * p.Gamma)
    th = abs(theta)

    def w_of(x):
        return np.maximum(0.5 * x[..., 0] ** 2 - eps, 0.0)

    def q_of(x):
        return np.maximum(th - 1 - np.exp(np.minimum(x[..., 1], Z_CAP)), 0.0)

    def W_val(x):
        return 0.5 * w_of(x) ** 2

    def W_grad(x):
        g = np.zeros(np.shape(x))
        g[..., 0] = w_of(x) * x[..., 0]
        return g

    def V_val(x):
        return W_val(x) + k * q_of(x) ** 3

    def V_grad(x):
        g = W_grad(x)
        g[..., 1] = -3 * k * q_of(x) ** 2 * np.exp(np.minimum(x[..., 1], Z_CAP))
        return g

    V = ScalarField(V_val, V_grad, "V_dads")
    W = ScalarField(W_val, W_grad, "W_dads")
    a = rates.power(4, 1 / 8).with_name("s^4/8")
    if lam is None:
        return CertificateBundle(V=V, W=W, Q=V, rho=rates.linear(2 * p.c), a=a,
                                 zeta=rates.identity(), r=r)
    if not 0 < lam < 1:
        raise ValueError("lam must lie in (0, 1)")
    chi = rates.power(4, p.a**2 / (2 * p.c**2 * (1 - lam) ** 2))
    return CertificateBundle(V=V, W=W, Q=V, rho=rates.linear(2 * p.c * lam), a=a, chi=chi,
                             zeta=rates.identity(), r=r)


# theta thresholds ------------------------------------------------------------

def _admissible(num, ph):
    """Bounds on theta from ``theta*phi <= num`` sampled pointwise."""
    pos, neg = ph > 0, ph < 0
    upper = float(np.min(num[pos] / ph[pos])) if np.any(pos) else math.inf
    lower = float(np.max(num[neg] / ph[neg])) if np.any(neg) else -math.inf
    return upper, lower


def _refine_min(fn, grid, vals):
    i = int(np.argmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    if hi <= lo:
        return float(vals[i])
    res = minimize_scalar(fn, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
    return float(min(vals[i], res.fun)) if res.success else float(vals[i])


def theta_threshold_ugaos(p: DadsParams, y_interval=None, r_probe=1.0, n=20001):
    """Largest theta keeping the disturbance-free closed loop output-stable.

    ``numeric`` is the infimum over ``|y|`` in the probe interval (default
    ``[sqrt(2 eps), sqrt(2(eps + r_probe))]``) of the admissible upper bound
    on theta; ``numeric_lower`` is the matching lower bound where ``phi < 0``.
    """
    c, a, eps = p.c, p.a, p.eps_dz
    if y_interval is None:
        y_interval = (math.sqrt(2 * eps), math.sqrt(2 * (eps + r_probe)))
    lo, hi = map(float, y_interval)
    mags = np.linspace(lo, hi, n)
    ys = np.concatenate([mags, -mags])

    def rhs(y):
        ph = p.phi(y)
        return c + (1 + ph**2 * y**2) / (4 * a) + ph**2 / (2 * c)

    upper, lower = _admissible(rhs(ys), p.phi(ys))
    for sign in (1.0, -1.0):
        y = sign * mags
        ph = p.phi(y)
        if not np.any(ph > 0):
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = np.where(ph > 0, rhs(y) / ph, np.inf)

        def ratio(m, sign=sign):
            yy = np.array([sign * m])
            f = p.phi(yy)[0]
            return float(rhs(yy)[0] / f) if f > 0 else math.inf

        upper = min(upper, _refine_min(ratio, mags, vals))
    closed = c + (1 + 2 * eps) / (4 * a) + 1 / (2 * c) if p.phi_is_one else None
    universal = math.sqrt(2 + 2 * eps * c / a + 1 / (2 * a * c) + eps / (2 * a**2))
    return {"closed_form": closed, "universal": universal, "numeric": upper,
            "numeric_lower": lower, "interval": [lo, hi], "samples": int(len(ys))}


def theta_threshold_ios(p: DadsParams, y_max=None, lambdas=None, n=4001):
    """Largest theta (strict) for the IOS property of the output ``y~``.

    For each ``lam`` the admissible bound is the infimum over
    ``|y| in [sqrt(2 eps), y_max]``; ``numeric`` maximizes it over the grid
    (default 99 values in (0, 1)). ``y_max`` defaults to
    ``max(10, 10 sqrt(2 eps))``.
    """
    c, a, eps = p.c, p.a, p.eps_dz
    lo = math.sqrt(2 * eps)
    y_max = max(10.0, 10 * lo) if y_max is None else float(y_max)
    lambdas = np.linspace(0.01, 0.99, 99) if lambdas is None else np.asarray(lambdas, dtype=float)
    if np.any((lambdas <= 0) | (lambdas >= 1)):
        raise ValueError("lambda grid must lie in (0, 1)")
    mags = np.linspace(max(lo, 1e-9), y_max, n)
    ys = np.concatenate([mags, -mags])
    ph = p.phi(ys)
    with np.errstate(divide="ignore"):
        dz_term = np.where(eps > 0, 2 * c * eps / ys**2, 0.0)
    best, best_lam, lower = -math.inf, None, -math.inf
    for lam in lambdas:
        num = ((1 + lam) * c + (c * ys**2 + 2 * a) / (2 * a * c) * ph**2 + (1 - lam) * dz_term) / 2
        up, low = _admissible(num, ph)
        if up > best:
            best, best_lam, lower = up, float(lam), low
    closed = c + 1 / (2 * c) if p.phi_is_one else None
    universal = math.sqrt(1 + eps * c / a)
    return {"closed_form": closed, "universal": universal, "numeric": best, "numeric_lower": lower,
            "lambda": best_lam, "interval": [lo, y_max], "samples": int(len(ys) * len(lambdas))}


# property suite --------------------------------------------------------------

@dataclass
class DadsPropertyReport:
    pios_bound_ok: bool
    z_monotone_ok: bool
    z_bounded_ok: bool
    asymptotic_gain_ok: bool
    regulation_case: str
    margins: dict
    estimates: dict
    horizon: float
    tail_window: list
    z_saturated: bool = False

    @property
    def all_ok(self):
        return self.pios_bound_ok and self.z_monotone_ok and self.z_bounded_ok and self.asymptotic_gain_ok

    def to_dict(self):
        return {
            "pios_bound_ok": self.pios_bound_ok,
            "z_monotone_ok": self.z_monotone_ok,
            "z_bounded_ok": self.z_bounded_ok,
            "asymptotic_gain_ok": self.asymptotic_gain_ok,
            "regulation_case": self.regulation_case,
            "margins": self.margins,
            "estimates": self.estimates,
            "horizon": self.horizon,
            "tail_window": self.tail_window,
            "z_saturated": self.z_saturated,
        }


def simulate_scenario(s: DadsScenario, p: DadsParams, tol=1e-9, max_step=None):
    system = closed_loop_system(p, s.theta, d_bound=max(10.0, s.disturbance.sup_norm))
    max_step = min(0.1, s.horizon / 2000) if max_step is None else max_step
    return simulate(system, [s.y0, s.z0], s.disturbance, s.horizon, tol, max_step=max_step)


def dads_property_suite(scenario: DadsScenario, p: DadsParams, tol=1e-6, *, z_tol=1e-9,
                        tail_tol=1e-3, tail_fraction=0.2, sim_tol=1e-9, max_step=None,
                        traj=None):
    """Check the closed-loop guarantees on one simulated scenario.

    * ``pios_bound_ok``: ``|y(t)| <= |y0| e^{-ct/2} + sqrt(2a/c)(|d|_inf + (|theta|-1)^+) + tol``
      at every sample.
    * ``z_monotone_ok``: successive ``z`` samples never drop by more than ``z_tol``.
    * ``z_bounded_ok``: ``z`` stays finite and below the exponent cap.
    * ``asymptotic_gain_ok``: tail max of ``y^2/2`` is at most ``eps + tail_tol``.
    * ``regulation_case``: for vanishing ``d`` only (decaying or zero kinds),
      ``y_to_zero`` if the tail max ``|y|`` is at most ``tol``,
      ``z_saturated_below_ln`` if ``|theta| > 1`` and the tail ``z`` stays below
      ``ln(|theta| - 1) - tol``, otherwise ``inconclusive``.

    The second branch of the asymptotic gain is reported from tail estimates
    of ``z_inf`` and ``d_inf`` without a verdict.
    """
    if traj is None:
        traj = simulate_scenario(scenario, p, sim_tol, max_step)
    t = traj.times
    y, z = traj.states[:, 0], traj.states[:, 1]
    tail = traj.tail_mask(tail_fraction)
    if np.count_nonzero(tail) < 100:
        raise HorizonTooShort(f"tail window holds {np.count_nonzero(tail)} samples, need 100")
    th = abs(scenario.theta)
    dsup = scenario.disturbance.sup_norm
    k = math.sqrt(2 * p.a / p.c)
    bound = abs(scenario.y0) * np.exp(-p.c * t / 2) + k * dsup + k * max(th - 1, 0.0)
    pios_margin = float(np.min(bound + tol - np.abs(y)))
    dz = np.diff(z)
    z_margin = float(np.min(dz)) + z_tol if dz.size else z_tol
    saturated = bool(np.any(z > Z_CAP))
    z_bounded = bool(np.all(np.isfinite(z))) and not saturated
    half_sq = 0.5 * y[tail] ** 2
    gain_margin = float(p.eps_dz + tail_tol - np.max(half_sq))

    z_inf = float(z[-1])
    z_drift = float(z[-1] - z[tail][0])
    d_inf = float(np.max(traj.disturbance_norms[tail]))
    ez = math.exp(min(z_inf, Z_CAP))
    second = p.a * (d_inf**2 + max(th - 1 - ez, 0.0) ** 2) / (p.c * (1 + ez))

    case = "not-applicable"
    if scenario.disturbance.vanishing:
        if np.max(np.abs(y[tail])) <= tol:
            case = "y_to_zero"
        elif th > 1 and np.max(z[tail]) < math.log(th - 1) - tol:
            case = "z_saturated_below_ln"
        else:
            case = "inconclusive"
    return DadsPropertyReport(
        pios_bound_ok=pios_margin >= 0,
        z_monotone_ok=z_margin >= 0,
        z_bounded_ok=z_bounded,
        asymptotic_gain_ok=gain_margin >= 0,
        regulation_case=case,
        margins={"pios": pios_margin, "z_monotone": z_margin, "asymptotic_gain": gain_margin},
        estimates={"z_inf": z_inf, "z_tail_drift": z_drift, "z_converged": abs(z_drift) <= 1e-6,
                   "d_inf": d_inf, "gain_second_branch": second,
                   "tail_max_half_y_sq": float(np.max(half_sq)), "z_max": float(np.max(z))},
        horizon=float(t[-1]),
        tail_window=[float(t[tail][0]), float(t[-1])],
        z_saturated=saturated,
    )


def scenario_signal(spec, seed=0, bound=10.0):
    """Disturbance for a DADS scenario from a parameter mapping."""
    return make_signal(spec, DomainSpec.box([-bound], [bound]), seed)


DISTURBANCE_PRESETS = {
    "zero": lambda amp: {"kind": "zero"},
    "constant": lambda amp: {"kind": "constant", "value": amp},
    "sin": lambda amp: {"kind": "sinusoid", "amplitude": amp, "omega": 1.0},
    "decaying": lambda amp: {"kind": "decaying", "amplitude": amp, "rate": 0.2},
}


def random_scenarios(n, seed=0, *, theta_range=(-2.0, 2.0), y0_max=5.0, z0=0.0,
                     kinds=("zero", "constant", "sin", "decaying"), amplitude=0.5, horizon=200.0):
    """``n`` scenarios cycling through ``kinds`` with seeded ``theta`` and ``y0``.

    Scenario ``i`` draws from child ``i`` of ``SeedSequence(seed)``.
    """
    out = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(n)):
        rng = np.random.default_rng(child)
        theta = float(rng.uniform(*theta_range))
        y0 = float(rng.uniform(-y0_max, y0_max))
        sig = scenario_signal(DISTURBANCE_PRESETS[kinds[i % len(kinds)]](amplitude))
        out.append(DadsScenario(theta, y0, z0, sig, horizon))
    return out
