import math

import numpy as np
import pytest

from outstab import rates
from outstab.dads import DadsParams, DadsScenario, closed_loop_system, scenario_signal, simulate_scenario
from outstab.dynsys import DomainSpec, DynamicalSystem, make_signal, simulate
from outstab.errors import HorizonTooShort, InsufficientEnsemble
from outstab.probes import (NOT_ATTAINED, KLEnvelope, SampledSignal, attainment_time, barbalat_probe,
                            falsify, kl_fit, quc_check, quc_sufficient, spike_train, uniformity_probe)
from outstab.systems import example1, example1_bundle

T20 = np.linspace(0.0, 20.0, 20001)


def still():
    return DynamicalSystem(1, 1, lambda x, d: np.zeros_like(x), lambda x: x, DomainSpec.zero(1))


def contraction():
    return DynamicalSystem(1, 1, lambda x, d: -x, lambda x: x, DomainSpec.box([-0.1], [0.1]))


# attainment -----------------------------------------------------------------

def test_attainment_of_exponential():
    sig = SampledSignal.from_function(lambda t: np.exp(-t), T20)
    assert attainment_time(sig, math.exp(-2)) == pytest.approx(2.0, abs=1e-3)


def test_attainment_of_zero():
    assert attainment_time(SampledSignal(T20, np.zeros_like(T20)), 0.1) == 0.0


def test_attainment_not_reached():
    assert attainment_time(SampledSignal(T20, np.ones_like(T20)), 0.5) is NOT_ATTAINED


def test_attainment_counts_last_exceedance():
    vals = np.where((T20 > 5) & (T20 < 6), 1.0, 0.0)
    assert attainment_time(SampledSignal(T20, vals), 0.5) == pytest.approx(6.0)


def test_dads_attainment_regression():
    p = DadsParams(1.0, 0.1, 1.0, 0.5)
    s = DadsScenario(0.0, 5.0, 0.0, scenario_signal({"kind": "zero"}), 20.0)
    t_star = attainment_time(simulate_scenario(s, p), 0.05)
    fine = attainment_time(simulate_scenario(s, p, tol=1e-10), 0.05)
    assert t_star == pytest.approx(0.3230, abs=2e-3)
    assert t_star == pytest.approx(fine, abs=2e-3)


# uniformity probe -----------------------------------------------------------

def test_example1_uniformity_within_ios_bound():
    system, b = example1(), example1_bundle()
    bound = rates.ios_time(b.V, b.W, b.rho, 0.1, 5.0, rates.BallSample(2, 41))
    zero = make_signal({"kind": "zero"}, system.disturbance_set)
    rep = uniformity_probe(system, 5.0, 0.1, 12, [zero], 40.0, output=lambda x: x[:, 1] ** 2,
                           bound=bound, notion="IOS")
    assert rep.verdict["attained_all"] and rep.verdict["within_bound"]
    assert 0 < rep.statistics["sup_attainment"] <= bound.T
    assert rep.statistics["sup_attainment"] == max(m["attainment"] for m in rep.members)


def test_static_system_never_attains():
    zero = make_signal({"kind": "zero"}, DomainSpec.zero(1))
    rep = uniformity_probe(still(), 1.0, 0.01, 10, [zero], 5.0, initial_states=[[0.5], [-0.8]])
    assert rep.statistics["sup_attainment"] == math.inf
    assert rep.statistics["not_attained"] == 2 and not rep.verdict["attained_all"]


def test_zero_radius_gives_zero():
    system = example1()
    zero = make_signal({"kind": "zero"}, system.disturbance_set)
    rep = uniformity_probe(system, 0.0, 0.1, 10, [zero], 5.0)
    assert rep.statistics["sup_attainment"] == 0.0 and rep.ensemble["n_init"] == 1


def test_probe_argument_checks():
    zero = make_signal({"kind": "zero"}, DomainSpec.zero(1))
    with pytest.raises(ValueError):
        uniformity_probe(still(), 1.0, 0.1, 5, [zero], 1.0)
    with pytest.raises(ValueError):
        uniformity_probe(still(), 1.0, 0.1, 10, [zero], 1.0, notion="FAST")


# quasi-uniform continuity ---------------------------------------------------

def test_quc_of_decay():
    assert quc_check(SampledSignal.from_function(lambda t: np.exp(-t), T20))["quc"]


def test_quc_of_ramp():
    rep = quc_check(SampledSignal(T20, T20.copy()), eps_list=(0.5,))
    assert rep["quc"]
    assert 0.25 <= rep["per_eps"][0]["delta"] < 0.5


def test_spike_train_is_not_quc():
    spikes = spike_train()
    rep = quc_check(spikes, eps_list=(0.5,))
    assert not rep["quc"]
    w = rep["witness"]
    assert w["increment"] >= 0.5 and w["t"] - w["t0"] <= w["delta"]
    n = round(w["t"])
    assert abs(w["t"] - n) <= 2.0 ** -(n + 1)


def test_quc_delta_grid_validation():
    sig = SampledSignal(T20, T20.copy())
    with pytest.raises(ValueError):
        quc_check(sig, delta_grid=[0.0, 1.0])
    with pytest.raises(ValueError):
        quc_check(sig, delta_grid=[100.0])
    with pytest.raises(ValueError):
        quc_check(sig, eps_list=(-1.0,))


def test_sufficient_sine():
    rep = quc_sufficient(SampledSignal.from_function(np.sin, T20), 1.0)
    assert rep["slope_bound_ok"] and rep["holds"]


def test_sufficient_square_fails():
    rep = quc_sufficient(SampledSignal.from_function(lambda t: t**2, T20), 1.0)
    assert not rep["slope_bound_ok"] and not rep["holds"]


def test_sufficient_truncated_spikes():
    rep = quc_sufficient(spike_train(), 0.0, N=0.5)
    assert not rep["premise_holds"]
    lo, hi = rep["worst_interval"]
    n = round(lo)
    assert rep["max_quotient"] == pytest.approx(2.0 ** (n + 1), rel=1e-6)


# Barbalat -------------------------------------------------------------------

def test_barbalat_decay():
    rep = barbalat_probe(SampledSignal.from_function(lambda t: np.exp(-t), T20), rates.identity())
    assert rep["integral"] == pytest.approx(1.0, abs=1e-3)
    assert rep["tail_sup"] < 1e-2 and rep["consistent"]


def test_barbalat_spike_train():
    rep = barbalat_probe(spike_train(), rates.identity())
    assert rep["integral"] <= 1.0 + 1e-9
    assert rep["tail_sup"] == 1.0
    assert not rep["quc"] and rep["consistent"]


def test_barbalat_zero():
    rep = barbalat_probe(SampledSignal(T20, np.zeros_like(T20)), rates.identity())
    assert rep["integral"] == 0.0 and rep["tail_sup"] == 0.0


def test_barbalat_needs_a_long_tail():
    with pytest.raises(HorizonTooShort):
        barbalat_probe(SampledSignal.from_function(np.exp, np.linspace(0, 1, 50)), rates.identity())


def test_signal_validation():
    with pytest.raises(ValueError):
        SampledSignal(np.array([0.0, 1e-12]), np.zeros(2))
    with pytest.raises(ValueError):
        SampledSignal(np.array([0.0, 1.0]), np.array([0.0, np.nan]))


# KL envelope ----------------------------------------------------------------

def decay_series(scale, times):
    return SampledSignal.from_function(lambda t: scale * np.exp(-t), times)


def test_kl_single_trajectory():
    t = np.linspace(0, 5, 501)
    env = kl_fit([(1.0, decay_series(1.0, t))], t_knots=t, min_norms=1, min_per_norm=1)
    assert np.allclose(env.values[0], np.exp(-t), rtol=0, atol=1e-15)


def test_kl_two_norms():
    t = np.linspace(0, 5, 501)
    env = kl_fit([(2.0, decay_series(2.0, t)), (1.0, decay_series(1.0, t))], t_knots=t,
                 min_norms=1, min_per_norm=1)
    assert env.s_knots.tolist() == [1.0, 2.0]
    assert np.allclose(env.values[1], 2 * np.exp(-t)) and np.allclose(env.values[0], np.exp(-t))
    assert env(1.5, 1.0) == pytest.approx(2 * math.exp(-1))


def test_kl_dads_ensemble_matches_brute_force():
    p = DadsParams(1.0, 0.1, 1.0, 0.5)
    system = closed_loop_system(p, 0.0)
    zero = make_signal({"kind": "zero"}, system.disturbance_set)
    ensemble = []
    for s in (0.5, 1.0, 2.0, 3.0, 4.0):
        for angle in np.linspace(0, 2 * np.pi, 5, endpoint=False):
            x0 = s * np.array([np.cos(angle), np.sin(angle)])
            ensemble.append((s, simulate(system, x0, zero, 10.0)))
    knots = np.linspace(0, 10, 21)
    env = kl_fit(ensemble, t_knots=knots)
    assert env.is_monotone()
    for i, s in enumerate(env.s_knots):
        for j, t in enumerate(knots):
            # window starts at the last sample at or before t
            want = max(np.max(tr.output_norms[np.searchsorted(tr.times, t, side="right") - 1:])
                       for s0, tr in ensemble if s0 <= s)
            assert env.values[i, j] == pytest.approx(want, abs=1e-12)


def test_kl_insufficient():
    t = np.linspace(0, 5, 51)
    with pytest.raises(InsufficientEnsemble):
        kl_fit([(1.0, decay_series(1.0, t))], t_knots=t)


def test_kl_export():
    env = KLEnvelope(np.array([1.0, 2.0]), np.array([0.0, 1.0]), np.array([[1.0, 0.5], [2.0, 1.0]]))
    assert env.to_csv() == "s,0,1\n1,1,0.5\n2,2,1\n"
    assert env.to_dict()["values"] == [[1.0, 0.5], [2.0, 1.0]]


# falsify --------------------------------------------------------------------

def test_falsify_example1_below_ios_bound():
    system, b = example1(), example1_bundle()
    bound = rates.ios_time(b.V, b.W, b.rho, 0.1, 5.0, rates.BallSample(2, 41))
    gain = lambda dsup: max(0.1, float(b.chi(dsup)))  # noqa: E731
    out = falsify(system, lambda x: x[:, 1] ** 2, "max-attainment-time", 200, 7, R=5.0,
                  horizon=30.0, threshold=gain, max_step=0.3)
    assert out["value"] <= bound.T
    assert max(out["evaluations"]) == out["value"]


def test_falsify_contraction_is_small():
    out = falsify(contraction(), None, "max-attainment-time", 10, 0, R=1.0, horizon=10.0,
                  epsilon=0.5)
    assert math.isfinite(out["value"]) and out["value"] < 1.0


def test_falsify_is_deterministic():
    kw = dict(R=1.0, horizon=5.0, epsilon=0.05)
    a = falsify(contraction(), None, "max-attainment-time", 12, 3, **kw)
    b = falsify(contraction(), None, "max-attainment-time", 12, 3, jobs=3, **kw)
    assert a == b


def test_falsify_envelope_objective():
    env = lambda s, t, dsup: s * np.exp(-t) + dsup  # noqa: E731
    out = falsify(contraction(), None, "envelope-violation", 10, 0, R=1.0, horizon=5.0, envelope=env)
    assert out["value"] <= 1e-6


def test_falsify_argument_checks():
    with pytest.raises(ValueError):
        falsify(contraction(), None, "max-attainment-time", 5, 0, R=1.0, horizon=1.0, epsilon=0.1)
    with pytest.raises(ValueError):
        falsify(contraction(), None, "nope", 10, 0, R=1.0, horizon=1.0)
    with pytest.raises(ValueError):
        falsify(contraction(), None, "envelope-violation", 10, 0, R=1.0, horizon=1.0)
