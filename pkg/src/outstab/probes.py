"""Trajectory-ensemble diagnostics for output stability notions.

All statistics are computed from stored samples: finite horizons truncate
limits, and a sampled ensemble only probes the universal quantifiers of
the stability definitions.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid

from .dynsys import make_signal, parallel_map, sample_ball, simulate
from .dynsys.domain import DomainSpec
from .errors import HorizonTooShort, InsufficientEnsemble

NOT_ATTAINED = math.inf
NOTIONS = ("RGOA", "URGOA", "LYAP_OUT", "LAGRANGE_OUT", "PIOS", "IOS")
MIN_STEP = 1e-9


@dataclass(frozen=True, eq=False)
class SampledSignal:
    """Samples ``values[i] = phi(times[i])`` on a strictly increasing grid."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size < 2:
            raise ValueError("times and values must be 1-D arrays of equal length >= 2")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise ValueError("signal samples must be finite")
        if np.min(np.diff(t)) < MIN_STEP:
            raise ValueError(f"grid step below {MIN_STEP:g}")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, fn, times):
        times = np.asarray(times, dtype=float)
        return cls(times, np.asarray(fn(times), dtype=float))

    def shifted(self, c):
        return SampledSignal(self.times, self.values + c)

    def tail_mask(self, fraction):
        start = self.times[-1] - fraction * (self.times[-1] - self.times[0])
        return self.times >= start


def spike_train(n_bumps=20, base_step=0.01, per_bump=41, horizon=None):
    """Triangular bumps of height 1 centred at ``t = n`` with half-width ``2^-(n+1)``.

    Integrable with unbounded rising slopes, so it is not quasi-uniformly
    continuous and does not tend to zero.
    """
    horizon = n_bumps + 1.0 if horizon is None else horizon
    centres = np.arange(1, n_bumps + 1, dtype=float)
    widths = 2.0 ** -(centres + 1)
    base = np.arange(0.0, horizon + base_step / 2, base_step)
    inside = np.zeros(base.size, dtype=bool)
    for c, w in zip(centres, widths):
        inside |= (base >= c - w - MIN_STEP) & (base <= c + w + MIN_STEP)
    bumps = [np.linspace(c - w, c + w, per_bump) for c, w in zip(centres, widths)]
    times = np.unique(np.concatenate([base[~inside]] + bumps))

    def phi(t):
        out = np.zeros_like(t)
        for c, w in zip(centres, widths):
            out = np.maximum(out, np.maximum(0.0, 1.0 - np.abs(t - c) / w))
        return out

    return SampledSignal.from_function(phi, times)


# attainment ------------------------------------------------------------------

def _norms_of(obj, output=None):
    if isinstance(obj, SampledSignal):
        return obj.times, np.abs(obj.values)
    if output is not None:
        return obj.times, np.asarray(output(obj.states), dtype=float)
    return obj.times, obj.output_norms


def attainment_time(traj, epsilon, output=None):
    """Smallest grid time after which the output norm stays ``<= epsilon``.

    ``traj`` is a :class:`Trajectory` or :class:`SampledSignal`; ``output``
    optionally maps the state array to norms. ``epsilon`` may be an array
    aligned with the samples. Returns :data:`NOT_ATTAINED` (``inf``) when
    the last sample still exceeds ``epsilon``.
    """
    times, norms = _norms_of(traj, output)
    above = norms > epsilon
    if above[-1]:
        return NOT_ATTAINED
    idx = np.flatnonzero(above)
    if idx.size == 0:
        return 0.0
    return float(times[idx[-1] + 1])


@dataclass
class ProbeReport:
    notion: str
    ensemble: dict
    statistics: dict
    verdict: dict
    members: list = field(default_factory=list)
    trajectories: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {"notion": self.notion, "ensemble": self.ensemble, "statistics": self.statistics,
                "verdict": self.verdict, "members": self.members}


def uniformity_probe(system, R, epsilon, n_init, signals, horizon, *, output=None, bound=None,
                     seed=0, initial_states=None, tol=1e-8, max_step=None, jobs=1,
                     notion="URGOA", tail_fraction=0.2, threshold=None):
    """Simulate ``n_init`` initial states in the ``R``-ball under each signal.

    ``output`` maps states to output norms (default ``|h(x)|``) and
    ``threshold(d_sup)`` may replace the constant ``epsilon`` level. The
    report's ``sup_attainment`` is ``inf`` when any member never settles;
    with ``bound`` (a number or :class:`ConvergenceBound`) the verdict also
    states whether the empirical sup stays below it.
    """
    if notion not in NOTIONS:
        raise ValueError(f"unknown notion {notion!r}")
    if initial_states is None:
        if R == 0:
            initial_states = np.zeros((1, system.dim_state))
        else:
            if n_init < 10:
                raise ValueError("n_init must be at least 10")
            initial_states = sample_ball(np.random.default_rng(seed), n_init, system.dim_state, R)
    initial_states = np.atleast_2d(np.asarray(initial_states, dtype=float))
    signals = list(signals)
    jobs_list = [(x0, sig) for sig in signals for x0 in initial_states]

    def run(item):
        x0, sig = item
        return simulate(system, x0, sig, horizon, tol, max_step=max_step)

    trajs = parallel_map(run, jobs_list, jobs)
    members = []
    for (x0, sig), tr in zip(jobs_list, trajs):
        times, norms = _norms_of(tr, output)
        level = epsilon if threshold is None else threshold(sig.sup_norm)
        t_star = attainment_time(tr, level, output)
        tail = tr.tail_mask(tail_fraction)
        members.append({"x0": x0.tolist(), "x0_norm": float(np.linalg.norm(x0)),
                        "signal": sig.to_dict(), "level": float(level), "attainment": t_star,
                        "max_output": float(np.max(norms)), "tail_max": float(np.max(norms[tail]))})
    att = np.array([m["attainment"] for m in members])
    sup = float(np.max(att))
    stats = {
        "sup_attainment": sup,
        "not_attained": int(np.count_nonzero(np.isinf(att))),
        "max_overshoot": max(m["max_output"] for m in members),
        "steady_state_max": max(m["tail_max"] for m in members),
        "horizon": float(horizon),
        "tail_window": [float(horizon) * (1 - tail_fraction), float(horizon)],
    }
    verdict = {"attained_all": stats["not_attained"] == 0}
    if bound is not None:
        T = float(getattr(bound, "T", bound))
        verdict["bound"] = T
        verdict["within_bound"] = bool(sup <= T)
    ensemble = {"R": float(R), "epsilon": float(epsilon), "n_init": len(initial_states),
                "n_signals": len(signals), "seed": seed}
    return ProbeReport(notion, ensemble, stats, verdict, members, trajs)


# quasi-uniform continuity ----------------------------------------------------

class _RangeMax:
    """Sparse table for O(1) range-maximum queries."""

    def __init__(self, values):
        self.levels = [np.asarray(values, dtype=float)]
        k = 1
        while 2 * k <= len(values):
            prev = self.levels[-1]
            self.levels.append(np.maximum(prev[:-k], prev[k:]))
            k *= 2

    def query(self, lo, hi):
        """Max over ``values[lo..hi]`` inclusive, vectorized."""
        span = hi - lo + 1
        lev = np.floor(np.log2(span)).astype(int)
        out = np.empty(lo.shape)
        for j in np.unique(lev):
            m = lev == j
            tab = self.levels[j]
            out[m] = np.maximum(tab[lo[m]], tab[hi[m] - (1 << j) + 1])
        return out


def _max_increments(signal, rmq, delta):
    t, v = signal.times, signal.values
    lo = np.arange(t.size)
    hi = np.searchsorted(t, t + delta, side="right") - 1
    return rmq.query(lo, hi) - v, hi


def quc_check(signal: SampledSignal, eps_list=(0.5, 0.1), delta_grid=None):
    """Search a finite (eps, delta, t0) lattice for quasi-uniform continuity.

    For each ``eps`` the largest tested ``delta`` whose windows keep every
    increment ``phi(t) - phi(t0)`` below ``eps`` is recorded. ``quc`` is
    false, with a witness pair taken at the smallest ``delta``, when some
    ``eps`` admits no such ``delta``; ``True`` is only evidence.

    The default lattice has 25 log-spaced ``delta`` from twice the median
    grid step to the span; windows much shorter than the sampling step
    only see single samples.
    """
    span = signal.times[-1] - signal.times[0]
    if delta_grid is None:
        lo = min(2 * float(np.median(np.diff(signal.times))), span)
        delta_grid = np.geomspace(lo, span, 25)
    deltas = np.sort(np.asarray(delta_grid, dtype=float))
    if np.any(deltas <= 0) or deltas[-1] > span:
        raise ValueError("delta grid must be positive and within the signal span")
    eps_arr = np.asarray(eps_list, dtype=float)
    if np.any(eps_arr <= 0):
        raise ValueError("eps values must be positive")
    rmq = _RangeMax(signal.values)
    worst = [float(np.max(_max_increments(signal, rmq, d)[0])) for d in deltas]
    per_eps, witness = [], None
    for eps in eps_arr:
        ok = [d for d, w in zip(deltas, worst) if w < eps]
        per_eps.append({"eps": float(eps), "delta": float(max(ok)) if ok else None})
        if not ok and witness is None:
            d = deltas[0]
            inc, hi = _max_increments(signal, rmq, d)
            i = int(np.argmax(inc))
            j = i + int(np.argmax(signal.values[i:hi[i] + 1]))
            witness = {"eps": float(eps), "delta": float(d), "t0": float(signal.times[i]),
                       "t": float(signal.times[j]), "increment": float(inc[i])}
    return {"quc": witness is None, "per_eps": per_eps, "witness": witness,
            "deltas": deltas.tolist()}


def quc_sufficient(signal: SampledSignal, M, N=None, tol=1e-9):
    """Check the sufficient conditions for quasi-uniform continuity.

    Without ``N``: ``phi - M t`` nonincreasing, or all difference quotients
    ``<= M``. With ``N``: the quotient bound is only required on intervals
    where ``phi < N`` at both ends; when it holds ``min(phi, N)`` is
    quasi-uniformly continuous.
    """
    t, v = signal.times, signal.values
    q = np.diff(v) / np.diff(t)
    if N is None:
        psi_ok = bool(np.all(np.diff(v - M * t) <= tol))
        mask = np.ones(q.size, dtype=bool)
    else:
        psi_ok = None
        mask = (v[:-1] < N) & (v[1:] < N)
    if np.any(mask):
        qm = np.where(mask, q, -np.inf)
        i = int(np.argmax(qm))
        max_q = float(qm[i])
        where = [float(t[i]), float(t[i + 1])]
    else:
        max_q, where = -math.inf, None
    slope_ok = max_q <= M + tol
    report = {"M": float(M), "N": None if N is None else float(N), "max_quotient": max_q,
              "worst_interval": where, "slope_bound_ok": bool(slope_ok)}
    if N is None:
        report["psi_nonincreasing"] = psi_ok
        report["holds"] = bool(psi_ok or slope_ok)
    else:
        report["premise_holds"] = bool(slope_ok)
        report["holds"] = bool(slope_ok)
    return report


def barbalat_probe(signal: SampledSignal, rho, tail_fraction=0.2, *, threshold=1e-2,
                   converge_tol=1e-3, eps_list=(0.5, 0.1), delta_grid=None):
    """Integral of ``rho(phi)`` against the tail behaviour of ``phi``.

    ``converged`` means the integral over the tail window is below
    ``converge_tol``. The lemma's hypotheses are taken as verified when
    ``phi`` or ``-phi`` passes :func:`quc_check` and ``rho`` is flagged
    nondecreasing or ``phi`` is bounded on the samples. ``consistent`` is
    false only if all of that holds and the tail sup still exceeds
    ``threshold``.
    """
    tail = signal.tail_mask(tail_fraction)
    if np.count_nonzero(tail) < 100:
        raise HorizonTooShort(f"tail window holds {np.count_nonzero(tail)} samples, need 100")
    if np.any(signal.values < 0):
        raise ValueError("signal must be nonnegative")
    vals = rho(signal.values)
    integral = float(trapezoid(vals, signal.times))
    tail_integral = float(trapezoid(vals[tail], signal.times[tail]))
    tail_sup = float(np.max(signal.values[tail]))
    converged = tail_integral < converge_tol
    q_plus = quc_check(signal, eps_list, delta_grid)
    q_minus = quc_check(SampledSignal(signal.times, -signal.values), eps_list, delta_grid)
    quc_ok = q_plus["quc"] or q_minus["quc"]
    growth_ok = bool(rho.nondecreasing) or bool(np.all(np.isfinite(signal.values)))
    hypotheses = quc_ok and growth_ok
    consistent = not (converged and hypotheses and tail_sup > threshold)
    return {"integral": integral, "tail_integral": tail_integral, "tail_sup": tail_sup,
            "converged": converged, "quc": q_plus["quc"], "quc_negated": q_minus["quc"],
            "witness": q_plus["witness"], "hypotheses": hypotheses, "consistent": consistent,
            "tail_window": [float(signal.times[tail][0]), float(signal.times[-1])]}


# KL envelope -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class KLEnvelope:
    """Empirical ``beta(s, t)`` on knots; rows are initial norms, columns times."""

    s_knots: np.ndarray
    t_knots: np.ndarray
    values: np.ndarray

    def is_monotone(self):
        rows = bool(np.all(np.diff(self.values, axis=0) >= 0))
        cols = bool(np.all(np.diff(self.values, axis=1) <= 0))
        return rows and cols

    def __call__(self, s, t):
        """Conservative lookup: next knot up in ``s``, next knot down in ``t``."""
        i = np.clip(np.searchsorted(self.s_knots, s, side="left"), 0, len(self.s_knots) - 1)
        j = np.clip(np.searchsorted(self.t_knots, t, side="right") - 1, 0, len(self.t_knots) - 1)
        return self.values[i, j]

    def to_dict(self):
        return {"s_knots": self.s_knots.tolist(), "t_knots": self.t_knots.tolist(),
                "values": self.values.tolist()}

    def to_csv(self):
        buf = io.StringIO()
        buf.write(",".join(["s"] + [format(t, ".17g") for t in self.t_knots]) + "\n")
        for s, row in zip(self.s_knots, self.values):
            buf.write(",".join([format(s, ".17g")] + [format(v, ".17g") for v in row]) + "\n")
        return buf.getvalue()


def _suffix_max_at(times, norms, t_knots):
    suffix = np.maximum.accumulate(norms[::-1])[::-1]
    idx = np.clip(np.searchsorted(times, t_knots, side="right") - 1, 0, len(times) - 1)
    return suffix[idx]


def kl_fit(ensemble, t_knots=None, *, output=None, min_norms=5, min_per_norm=5):
    """Fit ``beta(s, t)`` from ``(initial_norm, trajectory)`` pairs.

    Each member contributes ``max |y|`` over ``[t, horizon]`` (so rows are
    nonincreasing in ``t``); rows are then running maxima over initial
    norms ``<= s``. ``t_knots`` defaults to 201 points on the shortest
    horizon.
    """
    ensemble = list(ensemble)
    norms0 = np.array([float(s) for s, _ in ensemble])
    s_knots, counts = np.unique(norms0, return_counts=True)
    if len(s_knots) < min_norms or np.min(counts) < min_per_norm:
        raise InsufficientEnsemble(
            f"need {min_norms} initial norms with {min_per_norm} members each, got "
            f"{len(s_knots)} norms, smallest group {int(np.min(counts)) if counts.size else 0}")
    series = [_norms_of(tr, output) for _, tr in ensemble]
    if t_knots is None:
        t_knots = np.linspace(0.0, min(t[-1] for t, _ in series), 201)
    t_knots = np.asarray(t_knots, dtype=float)
    rows = np.full((len(s_knots), len(t_knots)), -np.inf)
    for s, (times, n) in zip(norms0, series):
        i = int(np.searchsorted(s_knots, s))
        rows[i] = np.maximum(rows[i], _suffix_max_at(times, n, t_knots))
    values = np.maximum.accumulate(rows, axis=0)
    return KLEnvelope(s_knots, t_knots, values)


# falsification ---------------------------------------------------------------

OBJECTIVES = ("max-attainment-time", "envelope-violation")


def _random_signal(rng, domain: DomainSpec, horizon, max_switches):
    k = int(rng.integers(0, max_switches + 1))
    times = np.sort(rng.uniform(0.0, horizon, size=k))
    times = times[np.concatenate([[True], np.diff(times) > 0])] if k else times
    times = times[times > 0]
    levels = domain.sample(rng, len(times) + 1)
    return make_signal({"kind": "piecewise-constant", "times": times, "values": levels}, domain)


def falsify(system, output, objective, budget, seed, *, R, horizon, epsilon=None,
            threshold=None, envelope=None, max_switches=5, jobs=1, tol=1e-6, max_step=None):
    """Random search for the worst initial state and piecewise-constant disturbance.

    Candidate ``k`` draws from its own child of ``SeedSequence(seed)``, so
    serial and parallel runs agree. Objectives:

    * ``max-attainment-time``: attainment time of ``output`` below
      ``threshold(d_sup)`` (default the constant ``epsilon``).
    * ``envelope-violation``: ``max_t output(t) - envelope(|x0|, t, d_sup)``.

    ``output`` maps the state array to a nonnegative series (``None``:
    ``|h(x)|``).
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}")
    if budget < 10:
        raise ValueError("budget must be at least 10")
    if objective == "max-attainment-time" and threshold is None:
        if epsilon is None:
            raise ValueError("max-attainment-time needs epsilon or threshold")
        threshold = lambda dsup: epsilon  # noqa: E731
    if objective == "envelope-violation" and envelope is None:
        raise ValueError("envelope-violation needs an envelope")
    children = np.random.SeedSequence(seed).spawn(budget)

    def evaluate(child):
        rng = np.random.default_rng(child)
        x0 = sample_ball(rng, 1, system.dim_state, R)[0]
        sig = _random_signal(rng, system.disturbance_set, horizon, max_switches)
        tr = simulate(system, x0, sig, horizon, tol, max_step=max_step)
        times, series = _norms_of(tr, output)
        if objective == "max-attainment-time":
            value = attainment_time(SampledSignal(times, series), threshold(sig.sup_norm))
        else:
            bound = envelope(np.linalg.norm(x0), times, sig.sup_norm)
            value = float(np.max(series - bound))
        return value, x0, sig

    results = parallel_map(evaluate, children, jobs)
    values = np.array([r[0] for r in results])
    best = int(np.argmax(values))
    value, x0, sig = results[best]
    return {"objective": objective, "value": float(value), "x0": x0.tolist(),
            "signal": sig.to_dict(), "index": best, "budget": budget, "seed": seed,
            "evaluations": values.tolist()}
