import math

import numpy as np
import pytest

from outstab import rates
from outstab.certkit import CertificateBundle, DomainSample, certify, check_implication, rectified_u
from outstab.dads import DadsParams, closed_loop_system, dads_certificates
from outstab.dynsys import DomainSpec, DynamicalSystem, ScalarField
from outstab.errors import MissingBundleField, NonFiniteValue
from outstab.systems import example1, example1_bundle

BOX5 = DomainSample.box([-5, -5], [5, 5], 50, disturbances=np.linspace(-1, 1, 50))


def lie(system, F):
    return lambda x, d: F.lie_derivative(system, x, d)


def sq_norm():
    return ScalarField(lambda x: np.sum(x**2, axis=-1), lambda x: 2 * x, "|x|^2")


def still_system(dim=2):
    return DynamicalSystem(dim, 1, lambda x, d: np.zeros_like(x), lambda x: x,
                           DomainSpec.box([-1], [1]), dim_output=dim)


# check_implication ------------------------------------------------------------

def test_example1_dissipation_has_no_violations():
    system, b = example1(), example1_bundle()
    res = check_implication(lambda x, d: b.W(x) >= 8 * d[..., 0] ** 2, lie(system, b.V),
                            lambda x, d: -b.W(x) / 8, BOX5)
    assert res.n_violations == 0 and res.checked == 50**3
    assert res.active > 0 and res.min_margin >= -1e-9


def test_inflated_rate_is_caught_at_the_known_point():
    system, b = example1(), example1_bundle()
    d = 1 / math.sqrt(8)
    sample = DomainSample.from_points([[0.0, 1.0]], [d])
    res = check_implication(lambda x, d: b.W(x) >= 8 * d[..., 0] ** 2, lie(system, b.V),
                            lambda x, d: -b.W(x), sample)
    assert res.n_violations == 1
    v = res.violations[0]
    assert v.lhs == pytest.approx(-1 + d, abs=1e-12)
    assert v.rhs == -1.0 and v.x == [0.0, 1.0]


def test_inflated_rate_is_caught_on_the_grid():
    system, b = example1(), example1_bundle()
    res = check_implication(lambda x, d: b.W(x) >= 8 * d[..., 0] ** 2, lie(system, b.V),
                            lambda x, d: -b.W(x), BOX5)
    assert res.n_violations > 0
    assert all(v.lhs > v.rhs for v in res.violations)


def test_zero_field_violates_strict_decrease():
    system, W = still_system(), sq_norm()
    sample = DomainSample.box([-1, -1], [1, 1], 5, disturbances=[0.0], refinement=None)
    res = check_implication(lambda x, d: np.ones(len(x), bool), lie(system, W),
                            lambda x, d: -W(x), sample)
    assert res.n_violations == 24  # every grid point but the origin
    assert [0.0, 0.0] not in [v.x for v in res.violations]


def test_violations_are_in_grid_order_and_capped():
    system, W = still_system(), sq_norm()
    sample = DomainSample.box([-1, -1], [1, 1], 5, disturbances=[0.0], refinement=None)
    res = check_implication(lambda x, d: np.ones(len(x), bool), lie(system, W),
                            lambda x, d: -W(x), sample, limit=3)
    assert res.n_violations == 24 and len(res.violations) == 3
    assert res.violations[0].x == [-1.0, -1.0] and res.violations[1].x == [-1.0, -0.5]


def test_refinement_adds_flagged_points():
    system, W = still_system(), sq_norm()
    sample = DomainSample.box([-1, -1], [1, 1], 5, disturbances=[0.0], refinement=4)
    res = check_implication(lambda x, d: np.ones(len(x), bool), lie(system, W),
                            lambda x, d: -W(x), sample)
    assert res.n_violations > 24
    assert any(v.refined for v in res.violations)


def test_relative_slack():
    sample = DomainSample.from_points([[0.0]], [0.0])
    big = lambda x, d: np.full(len(x), 1e6 + 1e-4)  # noqa: E731
    ref = lambda x, d: np.full(len(x), 1e6)  # noqa: E731
    always = lambda x, d: np.ones(len(x), bool)  # noqa: E731
    assert check_implication(always, big, ref, sample).n_violations == 1
    assert check_implication(always, big, ref, sample, relative=True).n_violations == 0


def test_non_finite_values_raise():
    sample = DomainSample.from_points([[0.0]], [0.0])
    with pytest.raises(NonFiniteValue):
        check_implication(lambda x, d: np.ones(len(x), bool), lambda x, d: np.full(len(x), np.nan),
                          lambda x, d: np.zeros(len(x)), sample)


def test_sample_validation():
    with pytest.raises(ValueError):
        DomainSample.box([0], [1], 1, disturbances=[0.0])
    with pytest.raises(ValueError):
        DomainSample.box([0], [1], 3, disturbances=[])
    with pytest.raises(ValueError):
        DomainSample.box([0], [1], 3)
    s = DomainSample.box([-1, -1], [1, 1], 3, domain=DomainSpec.box([-1], [1]), d_density=4)
    assert s.disturbances.shape == (4, 1) and s.states().shape == (9, 2)


# certify --------------------------------------------------------------------

def test_example1_thm3_passes():
    v = certify(example1(), example1_bundle(), "THM3_IOS", BOX5)
    assert v.passed and v.violations == [] and v.checked_points == 125000
    assert v.tail_condition["satisfied"]


def test_example1_thm3_fails_with_inflated_rate():
    b = example1_bundle()
    inflated = CertificateBundle(b.V, b.W, rates.identity(), b.a, chi=b.chi)
    v = certify(example1(), inflated, "THM3_IOS", BOX5)
    assert not v.passed and v.n_violations > 0
    assert {x.condition for x in v.violations} == {"W>=chi(|d|) => gradV.f<=-rho(W)"}


def test_thm3_without_chi():
    b = example1_bundle()
    with pytest.raises(MissingBundleField):
        certify(example1(), CertificateBundle(b.V, b.W, b.rho, b.a), "THM3_IOS", BOX5)


def test_unknown_theorem():
    with pytest.raises(ValueError):
        certify(example1(), example1_bundle(), "THM9", BOX5)


def test_dads_thm1_case_ii_passes():
    p = DadsParams(1.0, 0.1, 1.0, 0.5)
    system = closed_loop_system(p, 0.0)
    sample = DomainSample.box([-3, -2], [3, 2], 60, disturbances=[0.0])
    v = certify(system, dads_certificates(p, 0.0), "THM1_CASE_II", sample)
    assert v.passed, [c.to_dict() for c in v.conditions if c.n_violations]
    assert v.tail_condition["method"] == "flag"


def test_dads_thm1_case_ii_fails_for_large_theta():
    p = DadsParams(1.0, 0.1, 1.0, 0.5)
    system = closed_loop_system(p, 6.0)
    sample = DomainSample.box([-3, -2], [3, 2], 60, disturbances=[0.0])
    v = certify(system, dads_certificates(p, 6.0), "THM1_CASE_II", sample)
    assert not v.passed


def test_thm1_case_i_tail_check():
    b = example1_bundle()
    bump = rates.RateFunction(lambda s: s * np.exp(-s), "bump", positive_definite=True)
    ok = certify(example1(), CertificateBundle(b.V, b.W, b.rho, b.a), "THM1_CASE_I",
                 DomainSample.box([-2, -2], [2, 2], 11, disturbances=[0.0]))
    assert ok.tail_condition["method"] == "flag"
    bad = certify(example1(), CertificateBundle(b.V, b.W, bump, b.a), "THM1_CASE_I",
                  DomainSample.box([-2, -2], [2, 2], 11, disturbances=[0.0]))
    assert bad.tail_condition["method"] == "numeric" and not bad.tail_condition["satisfied"]
    assert not bad.passed


def test_small_w_conditions_only_inside_sublevel_set():
    # W grows along this flow, but only where W >= r
    field = lambda x, d: np.where(np.abs(x) >= 1.0, x, -x)  # noqa: E731
    system = DynamicalSystem(1, 1, field, lambda x: x, DomainSpec.zero(1))
    W = ScalarField(lambda x: x[..., 0] ** 2, lambda x: 2 * x, "x^2")
    b = CertificateBundle(W=W, a=rates.power(2), r=1.0)
    sample = DomainSample.box([-3], [3], 61, disturbances=[0.0])
    assert certify(system, b, "LYAP_LOCAL", sample).passed
    b2 = CertificateBundle(W=W, a=rates.power(2), r=4.0)
    assert not certify(system, b2, "LYAP_LOCAL", sample).passed


def test_lagrange_needs_unbounded_a():
    system, b = example1(), example1_bundle()
    Q = b.W
    sample = DomainSample.box([-2, -2], [2, 2], 11, disturbances=[0.0])
    assert certify(system, CertificateBundle(Q=Q, a=rates.power(2)), "LAGRANGE", sample).passed
    v = certify(system, CertificateBundle(Q=Q, a=rates.saturation(1.0)), "LAGRANGE", sample)
    assert not v.passed
    assert any(x.condition == "rate:a_unbounded" for x in v.violations)


def test_w_must_vanish_at_zero_for_ios():
    system, b = example1(), example1_bundle()
    shifted = ScalarField(lambda x: b.W(x) + 1.0, b.W.gradient, "W+1")
    v = certify(system, CertificateBundle(b.V, shifted, b.rho, b.a, chi=b.chi), "THM3_IOS",
                DomainSample.box([-2, -2], [2, 2], 11, disturbances=[0.0]))
    assert any(x.condition == "W(0)=0" for x in v.violations)


def test_thm2_asymmetric_quantification():
    # dW/dt = -2 W everywhere; case ii needs -gradW.f <= gamma(Q) on the whole box
    system = DynamicalSystem(1, 1, lambda x, d: -x, lambda x: x, DomainSpec.zero(1))
    W = ScalarField(lambda x: x[..., 0] ** 2, lambda x: 2 * x, "x^2")
    sample = DomainSample.box([-3], [3], 61, disturbances=[0.0])
    b = CertificateBundle(W, W, rates.linear(2.0), rates.power(2), Q=W, gamma=rates.linear(2.0),
                          zeta=rates.identity())
    assert certify(system, b, "THM2_I", sample).passed
    assert certify(system, b, "THM2_II", sample).passed
    weak = CertificateBundle(W, W, rates.linear(2.0), rates.power(2), Q=W, gamma=rates.linear(1.0),
                             zeta=rates.identity())
    assert certify(system, weak, "THM2_I", sample).passed
    assert not certify(system, weak, "THM2_II", sample).passed


def test_verdict_export_and_determinism():
    b = example1_bundle()
    inflated = CertificateBundle(b.V, b.W, rates.identity(), b.a, chi=b.chi)
    sample = DomainSample.box([-2, -2], [2, 2], 9, disturbances=[-0.5, 0.5])
    one = certify(example1(), inflated, "THM3_IOS", sample).to_dict()
    two = certify(example1(), inflated, "THM3_IOS", sample).to_dict()
    assert one == two
    assert {"theorem_id", "passed", "checked_points", "violations", "tail_condition"} <= set(one)
    assert set(one["violations"][0]) >= {"x", "d", "lhs", "rhs", "margin"}


# rectified_u ----------------------------------------------------------------

def test_u_at_origin():
    U = rectified_u(example1_bundle())
    assert U(np.zeros(2)) == 0.5


def test_u_vanishes_outside_sublevel_set():
    U = rectified_u(example1_bundle())
    x = np.array([0.3, 1.2])
    assert U(x) == 0.0 and np.array_equal(U.gradient(x), [0.0, 0.0])


def test_u_with_disturbance_level():
    U = rectified_u(example1_bundle(), 0.25)
    assert U(np.array([0.0, 1.0])) == pytest.approx(0.125, abs=1e-15)


def test_u_gradient_matches_differences():
    from outstab.dynsys import gradient_check
    pts = np.random.default_rng(1).uniform(-1.5, 1.5, (50, 2))
    assert gradient_check(rectified_u(example1_bundle()), pts).ok(1e-5)
    assert gradient_check(rectified_u(example1_bundle(), 0.1), pts).ok(1e-5)


def test_u_needs_chi_for_level_variant():
    b = example1_bundle()
    with pytest.raises(MissingBundleField):
        rectified_u(CertificateBundle(b.V, b.W, b.rho, b.a), 0.1)
