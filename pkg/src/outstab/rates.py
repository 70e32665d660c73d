"""Scalar rate functions: class-K handling, envelopes, time bounds and gains.

Infima and maxima over continuum sets are taken on dense grids; every
result records the grid it was computed on.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import integrate

from .dynsys.domain import ball_grid, lattice_offsets
from .errors import DegenerateInterval, InverseUnavailable, TailVanishes, ZeroFloor

TAIL_SAMPLES = 10_000
TAIL_FACTOR = 10.0
VANISH_TOL = 1e-12
BISECTION_TOL = 1e-12


@dataclass(frozen=True)
class RateFunction:
    """A function ``[0, inf) -> [0, inf)`` with declared structural flags.

    Flags are promises made by whoever builds the function; :meth:`validate`
    checks the class-K promise on a grid. ``tail_positive`` asserts
    ``liminf_{s->inf} f(s) > 0`` exactly and overrides numerical tail tests.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    name: str = ""
    positive_definite: bool = False
    nondecreasing: bool = False
    tail_positive: bool = False
    class_k: bool = False
    class_kinf: bool = False
    inverse: Callable[[np.ndarray], np.ndarray] | None = None
    info: dict = field(default_factory=dict, compare=False)

    def __call__(self, s):
        return np.asarray(self.fn(np.asarray(s, dtype=float)), dtype=float)

    def inv(self, s):
        """``f^{-1}(s)``: the registered inverse, else bisection to 1e-12."""
        if self.inverse is not None:
            return np.asarray(self.inverse(np.asarray(s, dtype=float)), dtype=float)
        if not self.class_k:
            raise InverseUnavailable(f"{self.name or 'rate'} is not declared class K")
        return _bisect_inverse(self, s)

    def validate(self, s_max, n=2001, atol=1e-12):
        """Check ``f(0) = 0`` and strict increase on ``[0, s_max]`` when class K."""
        grid = np.linspace(0.0, s_max, n)
        vals = self(grid)
        report = {"nonnegative": bool(np.all(vals >= -atol))}
        if self.class_k or self.class_kinf:
            report["zero_at_zero"] = bool(abs(vals[0]) <= atol)
            report["strictly_increasing"] = bool(np.all(np.diff(vals) > 0))
        if self.nondecreasing:
            report["nondecreasing"] = bool(np.all(np.diff(vals) >= -atol))
        if self.inverse is not None:
            back = self(self.inv(vals))
            report["inverse_consistent"] = bool(np.allclose(back, vals, atol=1e-9, rtol=1e-9))
        report["ok"] = all(report.values())
        return report

    def with_name(self, name):
        return replace(self, name=name)


def _bisect_inverse(rate, s):
    s = np.asarray(s, dtype=float)
    flat = np.atleast_1d(s).ravel()
    out = np.empty_like(flat)
    for i, target in enumerate(flat):
        if target < 0:
            raise InverseUnavailable("negative argument for a class-K inverse")
        lo, hi = 0.0, 1.0
        while rate(hi) < target:
            hi *= 2.0
            if hi > 1e300:
                raise InverseUnavailable(f"value {target:g} outside the range of {rate.name or 'rate'}")
        while hi - lo > BISECTION_TOL * max(1.0, hi):
            mid = 0.5 * (lo + hi)
            if rate(mid) < target:
                lo = mid
            else:
                hi = mid
        out[i] = 0.5 * (lo + hi)
    return out.reshape(s.shape)


# constructors -------------------------------------------------------------

def identity():
    return RateFunction(lambda s: s, "s", True, True, True, True, True, inverse=lambda s: s)


def linear(k):
    """``s -> k s`` with ``k > 0``."""
    k = float(k)
    if k <= 0:
        raise ValueError("slope must be positive")
    return RateFunction(lambda s: k * s, f"{k:g}*s", True, True, True, True, True,
                        inverse=lambda s: s / k)


def power(p, coef=1.0):
    """``s -> coef * s**p`` with ``p, coef > 0`` (class K-infinity)."""
    p, coef = float(p), float(coef)
    if p <= 0 or coef <= 0:
        raise ValueError("power and coefficient must be positive")
    return RateFunction(lambda s: coef * np.power(s, p), f"{coef:g}*s^{p:g}", True, True, True,
                        True, True, inverse=lambda s: np.power(s / coef, 1.0 / p))


def constant(c):
    """``s -> c``; not positive definite, kept for envelope tests and gains."""
    c = float(c)
    return RateFunction(lambda s: np.full(np.shape(s), c), f"{c:g}", False, True, c > 0)


def zero():
    return RateFunction(lambda s: np.zeros(np.shape(s)), "0", False, True, False)


def saturation(level=1.0):
    """``s -> min(s, level)``: class K but bounded, tail positive."""
    level = float(level)
    return RateFunction(lambda s: np.minimum(s, level), f"min(s,{level:g})", True, True, True, True)


def compose(outer, inner):
    """``s -> outer(inner(s))`` with the flags both factors guarantee."""
    flags = dict(
        positive_definite=outer.positive_definite and inner.positive_definite,
        nondecreasing=outer.nondecreasing and inner.nondecreasing,
        class_k=outer.class_k and inner.class_k,
        class_kinf=outer.class_kinf and inner.class_kinf,
    )
    inverse = None
    if outer.inverse is not None and inner.inverse is not None:
        inverse = lambda s: inner.inv(outer.inv(s))  # noqa: E731
    return RateFunction(lambda s: outer(inner(s)), f"({outer.name})o({inner.name})",
                        tail_positive=False, inverse=inverse, **flags)


# envelopes ----------------------------------------------------------------

def _tail_grid(s_lo, s_hi, n):
    if s_hi <= s_lo:
        return np.array([s_lo])
    return np.linspace(s_lo, s_hi, n)


def monotone_envelope(rho: RateFunction, s_max, n=TAIL_SAMPLES):
    """Nondecreasing lower envelope ``s -> inf_{z >= s} rho(z)``.

    The infimum is taken over ``{s}`` together with a dense grid of
    ``[0, 10 s_max]``; negative arguments map to 0. ``info['vanishes']`` is
    set when the infimum over the tail window ``[s_max, 10 s_max]`` is below
    1e-12, i.e. when the envelope is numerically identically zero.
    """
    if s_max <= 0:
        raise ValueError("s_max must be positive")
    s_hi = TAIL_FACTOR * s_max
    grid = np.linspace(0.0, s_hi, 2 * n + 1)
    at_grid = rho(grid)
    suffix = np.minimum.accumulate(at_grid[::-1])[::-1]
    # nodes bracketing switches between rho itself and a flat suffix level
    flat = suffix < at_grid
    flips = np.flatnonzero(flat[1:] != flat[:-1])
    breaks = np.unique(np.concatenate([grid[flips], grid[flips + 1]])).tolist()
    tail_inf = float(np.min(rho(_tail_grid(s_max, s_hi, n))))
    vanishes = tail_inf < VANISH_TOL and not rho.tail_positive

    def envelope(s):
        s = np.asarray(s, dtype=float)
        at = rho(np.maximum(s, 0.0))
        idx = np.searchsorted(grid, s, side="left")
        suff = suffix[np.minimum(idx, grid.size - 1)]
        val = np.where(idx >= grid.size, at, np.minimum(at, suff))
        return np.where(s < 0, 0.0, val)

    return RateFunction(envelope, f"env({rho.name})", rho.positive_definite and not vanishes,
                        True, rho.tail_positive,
                        info={"window": [float(s_max), float(s_hi)], "grid_size": int(grid.size),
                              "tail_infimum": tail_inf, "vanishes": bool(vanishes),
                              "breaks": breaks})


def smoothed_envelope(rho_tilde: RateFunction, abs_tol=1e-10):
    """Continuous average ``s -> integral_{-1}^{0} rho_tilde(s + z) dz``.

    ``rho_tilde`` must vanish on negative arguments. Each value comes from
    adaptive Gauss-Kronrod quadrature and is clamped by ``rho_tilde(s)``,
    which bounds it from above for a nondecreasing integrand. Kink
    locations listed in ``rho_tilde.info['breaks']`` are passed to the
    integrator as breakpoints.
    """
    breaks = np.asarray([0.0] + list(rho_tilde.info.get("breaks", ())), dtype=float)

    def one(s):
        lo, hi = s - 1.0, s
        inside = breaks[(breaks > lo) & (breaks < hi)]
        pts = inside.tolist() if inside.size else None
        val, _ = integrate.quad(lambda u: float(rho_tilde(u)), lo, hi, points=pts,
                                epsabs=abs_tol, epsrel=0.0, limit=200)
        return min(val, float(rho_tilde(s)))

    def smoothed(s):
        s = np.asarray(s, dtype=float)
        flat = np.atleast_1d(s).ravel()
        out = np.array([one(v) for v in flat])
        return out.reshape(s.shape)

    return RateFunction(smoothed, f"avg({rho_tilde.name})", rho_tilde.positive_definite, True,
                        rho_tilde.tail_positive, info={"abs_tol": abs_tol})


# convergence bounds ---------------------------------------------------------

@dataclass(frozen=True)
class ConvergenceBound:
    """Time after which the output stays in the epsilon-ball.

    ``T = (1 + v_max) / rho_floor``.
    """

    epsilon: float
    R: float
    rho_floor: float
    v_max: float
    T: float
    kind: str = ""
    grid: dict = field(default_factory=dict)

    @classmethod
    def build(cls, epsilon, R, rho_floor, v_max, kind, grid):
        if not rho_floor > 0:
            raise ZeroFloor(f"rate floor {rho_floor:g} is not positive")
        return cls(float(epsilon), float(R), float(rho_floor), float(v_max),
                   (1.0 + float(v_max)) / float(rho_floor), kind, grid)

    def to_dict(self):
        return {"kind": self.kind, "epsilon": self.epsilon, "R": self.R, "rho_floor": self.rho_floor,
                "v_max": self.v_max, "T": self.T, "grid": self.grid}


def ball_maximum(fn, R, dim, density=41, fixed=None, refine=True, factor=4):
    """Grid maximum of ``fn`` over ``|x| <= R`` with one local refinement pass.

    Returns ``(value, argmax, n_points)``. ``fixed`` pins coordinates (a
    slice of the ball).
    """
    pts = ball_grid(R, dim, density, fixed)
    vals = np.asarray(fn(pts), dtype=float)
    best = int(np.argmax(vals))
    value, arg, count = float(vals[best]), pts[best], len(pts)
    if refine and density > 1 and R > 0:
        spacing = 2.0 * R / (density - 1)
        free = np.array([0.0 if i in (fixed or {}) else spacing for i in range(dim)])
        local = arg + lattice_offsets(dim, free, factor)
        local = local[np.linalg.norm(local, axis=1) <= R * (1 + 1e-12)]
        lv = np.asarray(fn(local), dtype=float)
        count += len(local)
        j = int(np.argmax(lv))
        if lv[j] > value:
            value, arg = float(lv[j]), local[j]
    return value, arg, count


@dataclass(frozen=True)
class BallSample:
    """Grid used to maximize a field over the ball ``|x| <= R``."""

    dim: int
    density: int = 41
    fixed: dict | None = None
    refine: bool = True

    def maximize(self, fn, R):
        return ball_maximum(fn, R, self.dim, self.density, self.fixed, self.refine)


def rho_floor_case_i(rho, a, r, epsilon, s_max=100.0, n=TAIL_SAMPLES):
    """``inf { rho(s) : s >= min(r, a(epsilon)) }``.

    The infimum is taken on ``[s0, s_max]`` and on the tail window
    ``[s_max, 10 s_max]``. Raises :class:`TailVanishes` when that number
    (or the tail window alone, unless ``rho.tail_positive``) is below 1e-12.
    """
    s0 = min(float(r), float(a(epsilon)))
    if rho.nondecreasing:
        floor = float(rho(s0))
    else:
        head = float(np.min(rho(_tail_grid(s0, max(s0, s_max), n))))
        floor = head
        if not rho.tail_positive:
            s_lo = max(s0, s_max)
            floor = min(head, float(np.min(rho(_tail_grid(s_lo, TAIL_FACTOR * s_lo, n)))))
    if floor < VANISH_TOL:
        raise TailVanishes(f"tail infimum of {rho.name or 'rho'} from s={s0:g} is {floor:.3g}")
    return floor


def convergence_time_case_i(V, rho, a, r, epsilon, R, sample: BallSample, s_max=100.0):
    """Uniform attainment time under the non-vanishing-tail hypothesis."""
    floor = rho_floor_case_i(rho, a, r, epsilon, s_max=s_max)
    v_max, arg, count = sample.maximize(V, R)
    return ConvergenceBound.build(epsilon, R, floor, v_max, "case_i",
                                  {"density": sample.density, "points": count, "argmax": arg.tolist()})


def rho_floor_case_ii(rho, a, r, epsilon, zeta_bar, n=TAIL_SAMPLES):
    """``min { rho(s) : s in [min(r, a(epsilon)), r + zeta_bar] }``."""
    lo = min(float(r), float(a(epsilon)))
    hi = float(r) + float(zeta_bar)
    if lo > hi:
        raise DegenerateInterval(f"empty interval [{lo:g}, {hi:g}]")
    return float(np.min(rho(_tail_grid(lo, hi, n))))


def convergence_time_case_ii(V, Q, zeta, rho, a, r, epsilon, R, sample: BallSample):
    """Uniform attainment time when ``W <= zeta(Q)`` and ``Q`` is nonincreasing."""
    q_max, _, q_count = sample.maximize(Q, R)
    zeta_bar = float(zeta(q_max))
    floor = rho_floor_case_ii(rho, a, r, epsilon, zeta_bar)
    v_max, arg, count = sample.maximize(V, R)
    return ConvergenceBound.build(epsilon, R, floor, v_max, "case_ii",
                                  {"density": sample.density, "points": count + q_count,
                                   "argmax": arg.tolist(), "zeta_bar": zeta_bar,
                                   "interval": [min(r, float(a(epsilon))), r + zeta_bar]})


def ios_time(V, W, rho, epsilon, R, sample: BallSample, n=TAIL_SAMPLES):
    """Time after which ``W <= max(epsilon, chi(|d|_inf))`` from the R-ball."""
    w_bar, _, w_count = sample.maximize(W, R)
    if rho.nondecreasing:
        floor = float(rho(epsilon))
    else:
        floor = float(np.min(rho(_tail_grid(float(epsilon), float(epsilon) + w_bar, n))))
    v_max, arg, count = sample.maximize(V, R)
    return ConvergenceBound.build(epsilon, R, floor, v_max, "ios",
                                  {"density": sample.density, "points": count + w_count,
                                   "argmax": arg.tolist(), "w_bar": w_bar,
                                   "interval": [float(epsilon), float(epsilon) + w_bar]})


def ios_gain(a: RateFunction, chi: RateFunction):
    """Output gain ``s -> a^{-1}(chi(s))``."""
    if a.inverse is None and not (a.class_kinf or a.class_k):
        raise InverseUnavailable(f"{a.name or 'a'} has no inverse")
    chi0 = float(chi(0.0))
    return RateFunction(lambda s: a.inv(chi(s)), f"inv({a.name})o({chi.name})",
                        positive_definite=chi.positive_definite, nondecreasing=chi.nondecreasing,
                        class_k=chi.class_k, info={"ios": chi0 == 0.0, "gain_at_zero": chi0})

