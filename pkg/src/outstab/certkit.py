"""Sampled verification of Lyapunov-type output-stability hypotheses.

Inequalities required "for all x" are checked on a user-declared compact
box; a passing verdict is evidence on that box, a violation is a concrete
counterexample.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynsys.domain import DomainSpec, cartesian, lattice_offsets
from .dynsys.system import DynamicalSystem, ScalarField
from .errors import MissingBundleField, NonFiniteValue
from .rates import TAIL_FACTOR, TAIL_SAMPLES, VANISH_TOL, RateFunction

THEOREMS = ("LAGRANGE", "LYAP_LOCAL", "THM1_CASE_I", "THM1_CASE_II", "THM2_I", "THM2_II", "THM3_IOS")

CHUNK = 1 << 16
REFINE_POINTS = 32


@dataclass(frozen=True)
class CertificateBundle:
    """Candidate functions for one of the stability theorems.

    Only the fields the chosen theorem uses must be present; ``certify``
    raises :class:`MissingBundleField` otherwise.
    """

    V: ScalarField | None = None
    W: ScalarField | None = None
    rho: RateFunction | None = None
    a: RateFunction | None = None
    Q: ScalarField | None = None
    chi: RateFunction | None = None
    gamma: RateFunction | None = None
    zeta: RateFunction | None = None
    r: float = 1.0

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError("r must be positive")

    def require(self, *names):
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise MissingBundleField(f"bundle lacks {', '.join(missing)}")


@dataclass(frozen=True, eq=False)
class DomainSample:
    """A state grid on a box times a finite list of disturbance values."""

    lower: np.ndarray
    upper: np.ndarray
    density: tuple
    disturbances: np.ndarray
    refinement: int | None = 4
    explicit_states: np.ndarray | None = None

    def __post_init__(self):
        if self.explicit_states is None:
            if any(k < 2 for k in self.density):
                raise ValueError("grid density must be at least 2 per axis")
            if np.any(self.upper < self.lower):
                raise ValueError("empty state box")
        elif len(self.explicit_states) == 0:
            raise ValueError("empty state sample")
        if len(self.disturbances) == 0:
            raise ValueError("empty disturbance sample")

    @classmethod
    def box(cls, lower, upper, density, disturbances=None, domain: DomainSpec | None = None,
            d_density=None, refinement=4):
        lo = np.atleast_1d(np.asarray(lower, dtype=float))
        hi = np.atleast_1d(np.asarray(upper, dtype=float))
        dens = tuple(np.broadcast_to(np.asarray(density, dtype=int), lo.shape).tolist())
        if disturbances is None:
            if domain is None:
                raise ValueError("give either disturbance samples or a domain")
            disturbances = domain.grid(d_density or dens[0])
        dist = np.asarray(disturbances, dtype=float)
        if dist.ndim == 1:
            dist = dist[:, None]
        return cls(lo, hi, dens, dist, refinement)

    @classmethod
    def from_points(cls, states, disturbances):
        states = np.atleast_2d(np.asarray(states, dtype=float))
        dist = np.asarray(disturbances, dtype=float)
        if dist.ndim == 1:
            dist = dist[:, None]
        return cls(states.min(axis=0), states.max(axis=0), (1,) * states.shape[1], dist,
                   None, explicit_states=states)

    @property
    def dim(self):
        return self.lower.size

    @property
    def spacing(self):
        if self.explicit_states is not None:
            return None
        return (self.upper - self.lower) / (np.asarray(self.density) - 1)

    def states(self):
        if self.explicit_states is not None:
            return self.explicit_states
        axes = [np.linspace(lo, hi, k) for lo, hi, k in zip(self.lower, self.upper, self.density)]
        return cartesian(axes)

    def describe(self):
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist(),
                "density": list(self.density), "n_disturbances": len(self.disturbances),
                "explicit": self.explicit_states is not None}


@dataclass(frozen=True)
class Violation:
    condition: str
    x: list
    d: list | None
    lhs: float
    rhs: float
    margin: float
    refined: bool = False

    def to_dict(self):
        return {"condition": self.condition, "x": self.x, "d": self.d, "lhs": self.lhs,
                "rhs": self.rhs, "margin": self.margin, "refined": self.refined}


@dataclass
class ImplicationResult:
    """Outcome of one conditional inequality over a sample."""

    condition: str
    checked: int
    active: int
    n_violations: int
    min_margin: float
    violations: list = field(default_factory=list)

    @property
    def passed(self):
        return self.n_violations == 0

    def to_dict(self):
        return {"condition": self.condition, "checked": self.checked, "active": self.active,
                "n_violations": self.n_violations, "min_margin": self.min_margin}


@dataclass
class Verdict:
    theorem_id: str
    passed: bool
    violations: list
    checked_points: int
    tail_condition: dict
    conditions: list = field(default_factory=list)
    sample: dict = field(default_factory=dict)
    slack: float = 1e-9
    n_violations: int = 0

    def to_dict(self):
        return {
            "theorem_id": self.theorem_id,
            "passed": self.passed,
            "checked_points": self.checked_points,
            "n_violations": self.n_violations,
            "violations": [v.to_dict() for v in self.violations],
            "tail_condition": self.tail_condition,
            "conditions": [c.to_dict() for c in self.conditions],
            "sample": self.sample,
            "slack": self.slack,
        }


def _always(x, d):
    return np.ones(x.shape[:-1], dtype=bool)


def _finite(name, *arrays):
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NonFiniteValue(f"non-finite value while evaluating {name}")


def _evaluate(antecedent, lhs, rhs, xs, ds, slack, relative, name):
    ante = np.empty(len(xs), dtype=bool)
    left = np.empty(len(xs))
    right = np.empty(len(xs))
    for start in range(0, len(xs), CHUNK):
        sl = slice(start, start + CHUNK)
        x, d = xs[sl], ds[sl]
        ante[sl] = np.broadcast_to(antecedent(x, d), x.shape[:-1])
        left[sl] = np.broadcast_to(lhs(x, d), x.shape[:-1])
        right[sl] = np.broadcast_to(rhs(x, d), x.shape[:-1])
    _finite(name, left, right)
    tol = slack * np.maximum(1.0, np.maximum(np.abs(left), np.abs(right))) if relative else slack
    bad = ante & (left > right + tol)
    return ante, left, right, bad


def _pairs(states, disturbances, use_d):
    if not use_d:
        return states, np.zeros((len(states), disturbances.shape[1])), 1
    k = len(disturbances)
    xs = np.repeat(states, k, axis=0)
    ds = np.tile(disturbances, (len(states), 1))
    return xs, ds, k


def check_implication(antecedent, lhs, rhs, sample: DomainSample, slack=1e-9, *, relative=False,
                      condition="implication", use_d=True, limit=10_000):
    """Record sampled ``(x, d)`` with ``antecedent`` true and ``lhs > rhs + slack``.

    Evaluators take ``(x, d)`` batches. With ``use_d=False`` the condition
    does not depend on ``d`` and is checked on states only. Violations are
    ordered by grid index; at most ``limit`` are stored but all are
    counted. When the sample is a grid with ``refinement`` set, a local
    lattice ``refinement`` times denser is evaluated around the first
    violating states and its violations are appended (flagged ``refined``).
    """
    states = sample.states()
    xs, ds, k = _pairs(states, sample.disturbances, use_d)
    ante, left, right, bad = _evaluate(antecedent, lhs, rhs, xs, ds, slack, relative, condition)
    margin = right - left
    active = int(np.count_nonzero(ante))
    min_margin = float(np.min(margin[ante])) if active else float("inf")
    idx = np.flatnonzero(bad)
    violations = [_violation(condition, xs[i], ds[i] if use_d else None, left[i], right[i])
                  for i in idx[:limit]]
    n_viol = len(idx)
    checked = len(xs)

    spacing = sample.spacing
    if n_viol and sample.refinement and spacing is not None:
        seeds = np.unique(idx // k)[:REFINE_POINTS]
        offsets = lattice_offsets(sample.dim, spacing, sample.refinement)
        local = (states[seeds][:, None, :] + offsets[None, :, :]).reshape(-1, sample.dim)
        local = np.clip(local, sample.lower, sample.upper)
        rx, rd, _ = _pairs(local, sample.disturbances, use_d)
        r_ante, r_left, r_right, r_bad = _evaluate(antecedent, lhs, rhs, rx, rd, slack, relative,
                                                   condition)
        r_idx = np.flatnonzero(r_bad)
        room = max(0, limit - len(violations))
        violations += [_violation(condition, rx[i], rd[i] if use_d else None, r_left[i],
                                  r_right[i], refined=True) for i in r_idx[:room]]
        n_viol += len(r_idx)
        checked += len(rx)
        active += int(np.count_nonzero(r_ante))
        if np.any(r_ante):
            min_margin = min(min_margin, float(np.min((r_right - r_left)[r_ante])))
    return ImplicationResult(condition, checked, active, n_viol, min_margin, violations)


def _violation(condition, x, d, lhs, rhs, refined=False):
    return Violation(condition, np.asarray(x).tolist(), None if d is None else np.asarray(d).tolist(),
                     float(lhs), float(rhs), float(rhs - lhs), refined)


# certify -------------------------------------------------------------------

_NEEDS = {
    "LAGRANGE": ("Q", "a"),
    "LYAP_LOCAL": ("W", "a"),
    "THM1_CASE_I": ("V", "W", "rho", "a"),
    "THM1_CASE_II": ("V", "W", "rho", "a", "Q", "zeta"),
    "THM2_I": ("V", "W", "rho", "a", "Q", "gamma"),
    "THM2_II": ("V", "W", "rho", "a", "Q", "gamma"),
    "THM3_IOS": ("V", "W", "rho", "a", "chi"),
}


def _lie(system, F):
    return lambda x, d: F.lie_derivative(system, x, d)


def _rate_violations(name, rate, s_hi, need_kinf=False, positive_definite=False):
    """Grid check of a rate function's structural requirements."""
    s_hi = max(float(s_hi), 1.0)
    grid = np.linspace(0.0, s_hi, 2001)
    vals = rate(grid)
    out = []
    if positive_definite:
        bad = np.flatnonzero((grid > 0) & (vals <= 0))
        if abs(vals[0]) > 0:
            out.append(_violation(f"rate:{name}(0)=0", [0.0], None, vals[0], 0.0))
        if bad.size:
            out.append(_violation(f"rate:{name}_positive", [grid[bad[0]]], None, 0.0, vals[bad[0]]))
    else:
        if abs(vals[0]) > 0:
            out.append(_violation(f"rate:{name}(0)=0", [0.0], None, vals[0], 0.0))
        bad = np.flatnonzero(np.diff(vals) <= 0)
        if bad.size:
            i = bad[0]
            out.append(_violation(f"rate:{name}_increasing", [grid[i + 1]], None, vals[i], vals[i + 1]))
        if need_kinf and not rate.class_kinf:
            out.append(_violation(f"rate:{name}_unbounded", [s_hi], None, 0.0, 0.0))
    return out


def _liminf_tail(rho, s_max):
    if rho.tail_positive:
        return {"required": "liminf rho > 0", "satisfied": True, "method": "flag"}
    s_max = max(float(s_max), 1.0)
    window = np.linspace(s_max, TAIL_FACTOR * s_max, TAIL_SAMPLES)
    inf = float(np.min(rho(window)))
    return {"required": "liminf rho > 0", "satisfied": inf > VANISH_TOL, "method": "numeric",
            "window": [s_max, TAIL_FACTOR * s_max], "samples": TAIL_SAMPLES, "infimum": inf}


def certify(system: DynamicalSystem, bundle: CertificateBundle, theorem_id, sample: DomainSample,
            slack=1e-9, *, relative=False, tail="auto", limit=10_000):
    """Check the pointwise hypotheses of ``theorem_id`` on ``sample``.

    Conditions stated for ``W(x) < r`` are only enforced at sampled points
    with ``W(x) < r``. ``tail`` selects the asymptotic hypothesis for the
    THM2 variants (``"liminf"``, ``"zeta"`` or ``"auto"``, which prefers
    ``zeta`` when the bundle carries one).
    """
    if theorem_id not in THEOREMS:
        raise ValueError(f"unknown theorem id {theorem_id!r}")
    bundle.require(*_NEEDS[theorem_id])
    b = bundle
    r = b.r
    hnorm = lambda x: np.linalg.norm(system.h(x), axis=-1)  # noqa: E731
    small = (lambda x, d: b.W(x) < r) if b.W is not None else None
    zero = lambda x, d: 0.0  # noqa: E731
    checks = []  # (name, antecedent, lhs, rhs, use_d)

    def nonneg(name, F):
        checks.append((f"{name}_nonnegative", _always, lambda x, d: -F(x), zero, False))

    for name in ("V", "W", "Q"):
        F = getattr(b, name)
        if F is not None and name in _NEEDS[theorem_id]:
            nonneg(name, F)

    def a_le(F, ante, label):
        checks.append((label, ante, lambda x, d: b.a(hnorm(x)), lambda x, d: F(x), False))

    def dissipation(ante, label):
        checks.append((label, ante, _lie(system, b.V), lambda x, d: -b.rho(b.W(x)), True))

    def nonincreasing(F, ante, label):
        checks.append((label, ante, _lie(system, F), zero, True))

    tid = theorem_id
    if tid == "LAGRANGE":
        a_le(b.Q, _always, "a(|h|)<=Q")
        nonincreasing(b.Q, _always, "gradQ.f<=0")
    elif tid == "LYAP_LOCAL":
        a_le(b.W, small, "a(|h|)<=W [W<r]")
        nonincreasing(b.W, small, "gradW.f<=0 [W<r]")
    elif tid.startswith("THM1"):
        dissipation(_always, "gradV.f<=-rho(W)")
        a_le(b.W, small, "a(|h|)<=W [W<r]")
        nonincreasing(b.W, small, "gradW.f<=0 [W<r]")
        if tid == "THM1_CASE_II":
            checks.append(("W<=zeta(Q)", _always, lambda x, d: b.W(x), lambda x, d: b.zeta(b.Q(x)), False))
            nonincreasing(b.Q, _always, "gradQ.f<=0")
    elif tid.startswith("THM2"):
        dissipation(_always, "gradV.f<=-rho(W)")
        nonincreasing(b.Q, _always, "gradQ.f<=0")
        a_le(b.W, small, "a(|h|)<=W [W<r]")
        lieW = _lie(system, b.W)
        if tid == "THM2_I":
            checks.append(("gradW.f<=gamma(Q) [W<r]", small, lieW, lambda x, d: b.gamma(b.Q(x)), True))
        else:
            checks.append(("-gradW.f<=gamma(Q)", _always, lambda x, d: -lieW(x, d),
                           lambda x, d: b.gamma(b.Q(x)), True))
        if tail == "zeta" or (tail == "auto" and b.zeta is not None):
            bundle.require("zeta")
            checks.append(("W<=zeta(Q)", _always, lambda x, d: b.W(x), lambda x, d: b.zeta(b.Q(x)), False))
    else:  # THM3_IOS
        large = lambda x, d: b.W(x) >= b.chi(np.linalg.norm(d, axis=-1))  # noqa: E731
        a_le(b.W, _always, "a(|h|)<=W")
        dissipation(large, "W>=chi(|d|) => gradV.f<=-rho(W)")
        nonincreasing(b.W, large, "W>=chi(|d|) => gradW.f<=0")

    results = [check_implication(ante, lhs, rhs, sample, slack, relative=relative, condition=name,
                                 use_d=use_d, limit=limit)
               for name, ante, lhs, rhs, use_d in checks]
    violations = [v for res in results for v in res.violations]
    n_viol = sum(res.n_violations for res in results)

    states = sample.states()
    w_max = float(np.max(b.W(states))) if b.W is not None else 1.0
    h_max = float(np.max(hnorm(states)))

    # W(0) = 0 is a hypothesis of the local-stability and IOS statements
    extra = []
    if tid in ("LYAP_LOCAL", "THM3_IOS"):
        w0 = float(b.W(np.zeros(system.dim_state)))
        if w0 > slack:
            extra.append(_violation("W(0)=0", [0.0] * system.dim_state, None, w0, 0.0))
    extra += _rate_violations("a", b.a, h_max, need_kinf=tid in ("LAGRANGE", "THM3_IOS"))
    if b.rho is not None and tid not in ("LAGRANGE", "LYAP_LOCAL"):
        extra += _rate_violations("rho", b.rho, w_max, positive_definite=True)
    violations += extra
    n_viol += len(extra)

    tail_condition = _tail_condition(tid, b, tail, w_max, states)
    checked = max(res.checked for res in results) if results else 0
    passed = n_viol == 0 and tail_condition["satisfied"]
    return Verdict(tid, passed, violations, checked, tail_condition, results, sample.describe(),
                   slack, n_viol)


def _tail_condition(tid, b, tail, w_max, states):
    if tid == "THM1_CASE_I" or (tid.startswith("THM2") and (tail == "liminf" or (tail == "auto" and b.zeta is None))):
        return _liminf_tail(b.rho, w_max)
    if tid == "THM1_CASE_II" or tid.startswith("THM2"):
        q_max = max(float(np.max(b.Q(states))), 1.0)
        if b.zeta.class_kinf:
            return {"required": "zeta class K-infinity", "satisfied": True, "method": "flag"}
        report = b.zeta.validate(TAIL_FACTOR * q_max)
        return {"required": "zeta class K-infinity", "satisfied": bool(report["ok"]),
                "method": "numeric", "window": [0.0, TAIL_FACTOR * q_max]}
    return {"required": None, "satisfied": True, "method": "none"}


def rectified_u(bundle: CertificateBundle, s=None):
    """C^1 rectified function used to track sublevel sets of ``W``.

    Without ``s``: ``U(x) = 1/2 ((r - W(x))^+)^2``. With ``s``:
    ``U(x; s) = 1/2 ((W(x) - chi(s))^+)^2`` (needs ``chi``).
    """
    bundle.require("W")
    W = bundle.W
    if s is None:
        r = bundle.r

        def value(x):
            return 0.5 * np.maximum(r - W(x), 0.0) ** 2

        def grad(x):
            return -np.maximum(r - W(x), 0.0)[..., None] * W.gradient(x)

        return ScalarField(value, grad, f"U[r={r:g}]")

    bundle.require("chi")
    level = float(bundle.chi(float(s)))

    def value_s(x):
        return 0.5 * np.maximum(W(x) - level, 0.0) ** 2

    def grad_s(x):
        return np.maximum(W(x) - level, 0.0)[..., None] * W.gradient(x)

    return ScalarField(value_s, grad_s, f"U[s={float(s):g}]")
