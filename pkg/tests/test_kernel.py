import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from qgmm.errors import DomainError, ParameterError
from qgmm.kernel import (
    KERNEL_ORDER,
    SmoothingKernel,
    kernel_moment,
    smooth_indicator,
    smooth_indicator_derivative,
)

u = sp.symbols("u")
I_SYM = sp.Rational(1, 2) + sp.Rational(105, 64) * (
    u - sp.Rational(5, 3) * u**3 + sp.Rational(7, 5) * u**5 - sp.Rational(3, 7) * u**7
)
K_SYM = sp.diff(I_SYM, u)


def test_endpoints_exact():
    assert smooth_indicator(-1.0) == 0.0
    assert smooth_indicator(1.0) == 1.0
    assert smooth_indicator(0.0) == 0.5


def test_outside_support_saturates():
    assert_allclose(smooth_indicator(np.array([-5.0, -1.0001, 1.0001, 7.0])), [0, 0, 1, 1])
    assert_allclose(smooth_indicator_derivative(np.array([-3.0, 3.0])), [0, 0])


def test_values_against_symbolic():
    pts = [-0.9, -0.5, -0.1, 0.25, 0.5, 0.8]
    want = [float(I_SYM.subs(u, sp.Rational(str(p)))) for p in pts]
    assert_allclose(smooth_indicator(np.array(pts)), want, rtol=0, atol=1e-14)
    # a fourth-order kernel takes negative values, so the CDF overshoots 1
    assert smooth_indicator(0.5) == pytest.approx(8559 / 8192, abs=1e-15)


def test_derivative_against_symbolic():
    pts = [-0.7, 0.0, 0.3, 0.99]
    want = [float(K_SYM.subs(u, sp.Rational(str(p)))) for p in pts]
    assert_allclose(smooth_indicator_derivative(np.array(pts)), want, atol=1e-13)
    assert smooth_indicator_derivative(1.0) == pytest.approx(0.0, abs=1e-14)


@pytest.mark.parametrize("k", range(0, 9))
def test_moments_match_exact_integrals(k):
    exact = sp.integrate(u**k * K_SYM, (u, -1, 1))
    assert_allclose(kernel_moment(k), float(exact), atol=1e-13)


def test_fourth_order_kernel():
    assert kernel_moment(0) == pytest.approx(1.0, abs=1e-12)
    for k in range(1, KERNEL_ORDER):
        assert abs(kernel_moment(k)) < 1e-10
    assert kernel_moment(4) == pytest.approx(-1.0 / 33.0, abs=1e-13)


def test_nonfinite_raises():
    with pytest.raises(DomainError):
        smooth_indicator(np.nan)
    with pytest.raises(DomainError):
        smooth_indicator_derivative(np.array([0.0, np.inf]))


def test_moment_argument_checks():
    with pytest.raises(ParameterError):
        kernel_moment(-1)
    with pytest.raises(ParameterError):
        kernel_moment(2, quadrature_nodes=32)


def test_scalar_in_scalar_out():
    assert isinstance(smooth_indicator(0.3), float)
    assert smooth_indicator(np.zeros((2, 3))).shape == (2, 3)


def test_kernel_object():
    K = SmoothingKernel()
    assert K.order_r == 4
    assert K(0.2) == smooth_indicator(0.2)
    assert K.derivative(0.2) == smooth_indicator_derivative(0.2)
    assert K.moment(2) == kernel_moment(2)


@given(st.floats(-3, 3))
def test_bounded_range(x):
    # overshoot is bounded; the peak of I on [0, 1] is below 1.06
    assert -0.06 < smooth_indicator(x) < 1.06


@given(st.floats(-2, 2))
def test_symmetry(x):
    assert smooth_indicator(x) + smooth_indicator(-x) == pytest.approx(1.0, abs=1e-14)


@given(st.floats(-0.999, 0.999))
def test_derivative_matches_finite_difference(x):
    e = 1e-6
    fd = (smooth_indicator(x + e) - smooth_indicator(x - e)) / (2 * e)
    assert smooth_indicator_derivative(x) == pytest.approx(fd, abs=1e-7)
