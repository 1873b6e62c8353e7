import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ptstab.errors import DomainError
from ptstab.sigpow import (
    holder_residual,
    lemma_residuals,
    power_sum_residual,
    root_sum_residuals,
    sigpow,
    sigpow_d1,
    sigpow_d2,
    young_residual,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)
expo = st.floats(0.01, 6.0)


@pytest.mark.parametrize(
    "a,b,want", [(-8, 1 / 3, -2.0), (0, 0.5, 0.0), (-2, 2, -4.0), (0, 0, 0.0), (3, 0, 1.0)]
)
def test_sigpow_examples(a, b, want):
    assert sigpow(a, b) == pytest.approx(want, rel=1e-15)


@pytest.mark.parametrize("a,b", [(math.nan, 1.0), (math.inf, 2.0), (1.0, -0.5), (1.0, math.nan)])
def test_sigpow_domain(a, b):
    with pytest.raises(DomainError):
        sigpow(a, b)


def test_sigpow_vectorized():
    out = sigpow(np.array([-4.0, 0.0, 9.0]), 0.5)
    assert np.allclose(out, [-2.0, 0.0, 3.0])


@given(finite, expo)
def test_odd_symmetry(a, b):
    assert sigpow(-a, b) == -sigpow(a, b)


@given(st.floats(-1e3, 1e3).filter(lambda v: abs(v) > 1e-6), st.floats(0.05, 6.0))
def test_round_trip(a, b):
    assert sigpow(sigpow(a, b), 1.0 / b) == pytest.approx(a, rel=1e-10)


@given(finite, finite, st.floats(0.05, 5.0))
def test_strictly_increasing(a, c, b):
    lo, hi = min(a, c), max(a, c)
    if lo < hi:
        assert sigpow(lo, b) <= sigpow(hi, b)


@pytest.mark.parametrize("a,b,want", [(2, 3, 12.0), (0, 2, 0.0), (-1.5, 2.5, 2.5 * 1.5**1.5)])
def test_d1_examples(a, b, want):
    assert sigpow_d1(a, b) == pytest.approx(want, rel=1e-12)


def test_d1_matches_central_difference_example():
    h = 1e-6
    fd = (sigpow(-1.5 + h, 2.5) - sigpow(-1.5 - h, 2.5)) / (2 * h)
    assert fd == pytest.approx(sigpow_d1(-1.5, 2.5), rel=1e-6)


@pytest.mark.parametrize("a,b,want", [(2, 3, 12.0), (-2, 3, -12.0), (1.3, 4, 20.28)])
def test_d2_examples(a, b, want):
    assert sigpow_d2(a, b) == pytest.approx(want, rel=1e-12)


@pytest.mark.parametrize("fn", [sigpow_d1, sigpow_d2])
def test_derivatives_reject_b_below_2(fn):
    with pytest.raises(DomainError):
        fn(1.0, 1.5)


@given(st.floats(1e-2, 1e2), st.booleans(), st.floats(2.0, 6.0))
def test_derivatives_match_fd(mag, neg, b):
    a = -mag if neg else mag
    h = 1e-5 * mag
    d1 = (sigpow(a + h, b) - sigpow(a - h, b)) / (2 * h)
    d2 = (sigpow_d1(a + h, b) - sigpow_d1(a - h, b)) / (2 * h)
    assert d1 == pytest.approx(sigpow_d1(a, b), rel=1e-6)
    assert d2 == pytest.approx(sigpow_d2(a, b), rel=1e-6, abs=1e-9)


def test_lemma_examples():
    r, _ = holder_residual(1.0, 0.0, 0.5, 2.0)
    assert r == pytest.approx(math.sqrt(2) - 1, rel=1e-14)
    r, _ = young_residual(1.0, 1.0, 1.0, 1.0, 1.0)
    assert r == pytest.approx(0.0, abs=1e-15)
    r, _ = power_sum_residual([1.0, 1.0], 2.0)
    assert r == 0.0


def test_lemma_domains():
    with pytest.raises(DomainError):
        holder_residual(1.0, 2.0, 1.5, 2.0)
    with pytest.raises(DomainError):
        young_residual(1.0, 2.0, 1.0, 1.0, -1.0)
    with pytest.raises(DomainError):
        root_sum_residuals(1.0, 2.0, 0.5)
    with pytest.raises(DomainError):
        power_sum_residual([1.0, -1.0], 2.0)


@given(
    st.floats(-50, 50), st.floats(-50, 50), st.floats(0.01, 0.99), st.floats(1.01, 5.0),
    st.floats(1.0, 10.0), st.floats(0.01, 100.0), st.floats(0.05, 4.0),
)
def test_lemma_residuals_nonnegative(x, y, p, q, a, f, b):
    assert lemma_residuals(x, y, p, q, a, f, b=b).ok(1e-12)
