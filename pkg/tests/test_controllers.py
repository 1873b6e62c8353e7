import math
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ptstab.certify import beta_integral
from ptstab.controllers import (
    Controller,
    beta_from_corollary23,
    backstep_synthesize,
    corollary23_gains,
    default_r_bar,
    example41_controller,
    example41_k2,
    example42_cascade,
    example42_controller,
    fixed_time_controller,
    predefined_controller_scalar,
    tmax_fixed_time,
    zero_controller,
)
from ptstab.errors import ConstraintError, DomainError
from ptstab.system import StrictFeedbackSystem, example42_system

R42 = (1.0, 0.45, 0.15)


def gains42(**kw):
    args = dict(r=R42, kappa=-0.25, r_bar=2.0, k1=65.6, k3=3.1, n=2, k4=3.0)
    args.update(kw)
    return corollary23_gains(**args)


def oracle_gains(r_bar, kappa, k1, k3, n):
    # independent evaluation with exact rationals where possible
    rb, kap = F(r_bar).limit_denominator(10**6), F(kappa).limit_denominator(10**6)
    b1 = 4 * rb / (4 * rb - kap)
    b2 = (4 * rb + rb * F(k3).limit_denominator(10**6)) / (4 * rb - kap)
    a = 2 ** (-float(b1)) * k1
    m = a * (1 - float(b1))
    k2 = m / ((m - 1) * (float(b2) - 1)) * n ** ((r_bar * k3 + kappa) / (4 * r_bar - kappa)) * 2 ** float(b2)
    return float(b1), float(b2), a, k2


def test_zero_at_origin_required():
    with pytest.raises(ConstraintError):
        Controller(lambda x: 1.0 + 0 * x[..., 0], 1, "bad")


def test_fixed_time_examples():
    u = fixed_time_controller(0.5, 2.0)
    assert u([1.0]) == pytest.approx(-2.5)
    assert u([0.0]) == 0.0
    assert u([-1.0]) == pytest.approx(2.5)
    with pytest.raises(DomainError):
        fixed_time_controller(1.2, 2.0)


def test_tmax_fixed_time():
    assert tmax_fixed_time(0.5, 2) == pytest.approx(3.0)
    assert tmax_fixed_time(0.5, 3) == pytest.approx(2.5)
    assert tmax_fixed_time(1e-6, 1e6) == pytest.approx(1.0, abs=1e-5)
    with pytest.raises(DomainError):
        tmax_fixed_time(0.5, 1.0)


def test_predefined_examples():
    assert predefined_controller_scalar(1.0)([1.0]) == pytest.approx(-math.sqrt(math.pi) / 2 * math.e - 0.5)
    assert predefined_controller_scalar(1.0)([1.0]) == pytest.approx(-2.9090, abs=1e-4)
    assert predefined_controller_scalar(2.0)([1.0]) == pytest.approx(-1.7045, abs=1e-4)
    assert predefined_controller_scalar(1.0)([0.0]) == 0.0
    with pytest.raises(DomainError):
        predefined_controller_scalar(0.0)


def test_predefined_saturates_beyond_guard():
    u = predefined_controller_scalar(1.0, u_max=1e12, x_guard=6.0)
    assert u([7.0]) == -1e12
    assert u([-50.0]) == 1e12
    assert u.saturated(np.array([u([7.0])]))[0]
    assert not u.saturated(np.array([u([1.0])]))[0]


def test_example41_k2():
    assert example41_k2(4.1, 3) == pytest.approx(54.6667, abs=1e-4)
    assert example41_k2(8, 3) == pytest.approx(8 / 3)
    assert example41_k2(4.0001, 2) == pytest.approx(1.0667e5, rel=1e-3)
    with pytest.raises(ConstraintError):
        example41_k2(4.0, 3)


def test_example41_controller():
    u = example41_controller(4.1, example41_k2(4.1, 3), 3, 2)
    want = -1 - 0.5 - 4.1 / 4 - example41_k2(4.1, 3) / 4
    assert u([1.0]) == pytest.approx(want)
    assert want == pytest.approx(-16.19, abs=0.01)
    assert u([-1.0]) == pytest.approx(-want)
    assert u([0.0]) == 0.0


def test_gains_example42():
    g = gains42()
    b1, b2, a, k2 = oracle_gains(2.0, -0.25, 65.6, 3.1, 2)
    assert g.b1 == pytest.approx(32 / 33, rel=1e-15)
    assert (g.b1, g.b2, g.a, g.k2) == pytest.approx((b1, b2, a, k2), rel=1e-12)
    assert g.b2 == pytest.approx(1.7212, abs=1e-4)
    assert g.a == pytest.approx(33.496, abs=1e-3)
    assert 64 < g.k1_threshold < 65
    assert g.k1_threshold == pytest.approx(64.63, abs=0.01)
    assert g.valid and g.failing == []
    # a hand-rounded k2 = 494.6 sits below the formula value
    assert g.k2 == pytest.approx(508.73, abs=0.01)


def test_gains_invalid_cases():
    assert not gains42(k1=64.0).valid
    assert "k1_gt_threshold" in gains42(k1=64.0).failing
    g = gains42(k3=0.1)
    assert not g.valid and "k3_gt_minus_kappa_over_r_bar" in g.failing
    g = gains42(k2=494.6)
    assert g.checks["k2_ge_formula"] is False
    assert not gains42(r_bar=1.5).checks["r_bar_ge_2r"]
    with pytest.raises(DomainError):
        gains42(k4=0.0)


def test_gains_roundtrip_dict():
    d = gains42().to_dict()
    assert d["b1"] == pytest.approx(0.969697, abs=1e-6)
    assert all(d["checks"].values()) and d["valid"]


@given(st.floats(0.5, 5.0), st.floats(-0.5, -0.01), st.floats(1.0, 1e3), st.floats(0.0, 5.0))
def test_threshold_forces_positive_margin(r_bar, kappa, k1_extra, k3_extra):
    probe = corollary23_gains((r_bar / 2,), kappa, r_bar, 1.0, -kappa / r_bar + 0.01 + k3_extra, 1, 1.0)
    k1 = probe.k1_threshold * (1 + 1e-9) + k1_extra
    g = corollary23_gains((r_bar / 2,), kappa, r_bar, k1, probe.k3, 1, 1.0)
    assert g.checks["k1_gt_threshold"]
    assert g.a - g.a * g.b1 - 1 > 0


def test_beta_corollary23():
    g = gains42()
    beta = beta_from_corollary23(g)
    assert beta(0.0) == 0.0
    assert beta(1.0) == pytest.approx(g.a + g.beta_high_coef, rel=1e-14)
    assert beta(1.0) == pytest.approx(127.09, abs=0.01)
    s = np.logspace(-8, 3, 500)
    b = beta(s)
    assert np.all(b > 0) and np.all(np.diff(b) >= 0)
    with pytest.raises(ConstraintError):
        beta_from_corollary23(gains42(k1=64.0))


def test_beta_integral_vs_closed_form_split():
    g = gains42()
    beta = beta_from_corollary23(g)
    res = beta_integral(beta)
    assert res.value <= 1.0 + 1e-6
    m = g.a - g.a * g.b1
    closed = 1 / ((1 - g.b1) * g.a) + (m - 1) / m
    assert closed == pytest.approx(1.0, abs=1e-12)
    assert beta.split_bound() == pytest.approx(closed, rel=1e-12)


def test_default_r_bar():
    assert default_r_bar(R42) == 2.0


def test_example42_controller_values():
    u = example42_controller()
    assert u([0.0, 0.0]) == 0.0
    assert u([0.0, 1.0]) == pytest.approx(-(10.9 + 3.5 * 47.1**0.6 + 82.4), rel=1e-12)
    assert u([0.0, 1.0]) == pytest.approx(-128.6, abs=0.01)
    b0 = example42_cascade().steps[0].beta(None, 0.0)
    assert b0 == pytest.approx(47.1**0.6, rel=1e-15)
    assert b0 == pytest.approx(10.07, abs=0.02)


@given(st.floats(-2, 2), st.floats(-2, 2))
def test_example42_odd(x1, x2):
    u = example42_controller()
    assert u([-x1, -x2]) == pytest.approx(-u([x1, x2]), rel=1e-12, abs=1e-300)


@given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
def test_cascade_identity(x1, x2):
    c = example42_cascade()
    st_ = c.evaluate(np.array([x1, x2]))
    s = lambda v, b: math.copysign(abs(v) ** b, v)  # noqa: E731
    xi1 = s(x1, 2.0)
    b1 = (47.1 + 165 * abs(xi1) ** 3.1) ** 0.6
    xs2 = -b1 * s(xi1, 0.45 / 2.0)
    xi2 = s(x2, 2 / 0.45) - s(xs2, 2 / 0.45)
    assert st_.x_star[0] == 0.0
    assert st_.xi[0] == pytest.approx(xi1, rel=1e-12, abs=1e-300)
    assert st_.xi[1] == pytest.approx(xi2, rel=1e-12, abs=1e-12 * abs(s(xs2, 2 / 0.45)))
    # x*_j identity: [x*_2]^{rbar/r2} = -beta_1^{rbar/r2} xi_1
    assert c.xstar_pow(2, [x1, x2]) == pytest.approx(-b1 ** (2 / 0.45) * xi1, rel=1e-12, abs=1e-300)


def test_xstar_grad_chain_rule_vs_fd():
    c = example42_cascade()
    for x in ([0.5, 0.2], [-0.3, 1.0], [0.9, -0.4]):
        g = c.xstar_pow_grad(2, x)
        h = 1e-6
        fd = (c.xstar_pow(2, [x[0] + h, x[1]]) - c.xstar_pow(2, [x[0] - h, x[1]])) / (2 * h)
        assert g[0] == pytest.approx(fd, rel=1e-6)


def _const(v):
    return lambda xb: v


def test_backstep_synthesize_example42():
    sfs = example42_system()
    g = gains42()
    u = backstep_synthesize(sfs, g, [(_const(1.0), _const(1.0))], [(_const(0.0),) * 3])
    assert u([0.0, 0.0]) == 0.0
    c = u.cascade
    assert c.u_exponent == pytest.approx(0.15 / 2.0)
    # step-1 constant: (4rb - kappa - r1)/(2 r1 h1) psi^2 + n k1/(h1 k4) + phi/h1
    const = (8.25 - 1) / 2 + 2 * 65.6 / 3 + 1
    assert c.steps[0].beta(np.array([0.0]), 0.0) == pytest.approx(const ** 0.6)
    xi = 0.7
    want = (const + g.k2 / 3 * xi**3.1) ** 0.6
    assert c.steps[0].beta(np.array([0.3]), xi) == pytest.approx(want)
    x = np.array([0.4, -0.3])
    st_ = c.evaluate(x)
    assert u(x) == pytest.approx(-st_.beta[1] * math.copysign(abs(st_.xi[1]) ** 0.075, st_.xi[1]))


def test_backstep_requires_suppliers():
    sfs = example42_system()
    with pytest.raises(ConstraintError):
        backstep_synthesize(sfs, gains42(), [(_const(1.0), _const(1.0))], [])
    with pytest.raises(ConstraintError):
        backstep_synthesize(sfs, gains42(k1=64.0), [(_const(1.0), _const(1.0))], [(_const(0.0),) * 3])


def test_backstep_single_step():
    sfs = StrictFeedbackSystem(
        q=(3.0,), h=(1.0,), h_lo=(1.0,), h_hi=(1.0,),
        f=(lambda xb: 0.0 * xb[..., 0],), g=(lambda xb: 0.0 * xb[..., 0],), kappa=-0.2,
    )
    r = sfs.r
    g = corollary23_gains(r[:1], -0.2, 2.0, 100.0, 1.0, 1, 1.0)
    assert g.valid
    u = backstep_synthesize(sfs, g, [(_const(0.0), _const(0.0))])
    x = 0.8
    xi = x**2.0
    beta = u.cascade.steps[0].beta(np.array([x]), xi)
    assert u([x]) == pytest.approx(-beta * xi ** (r[1] / 2.0))


def test_controller_str():
    assert "k4=2" in str(example41_controller(4.1, 54.6, 3, 2.0))
    assert str(zero_controller()) == "u = 0"
