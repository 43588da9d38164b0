"""Smoothed indicator function and its derivative.

The smoothed indicator replaces ``1{u >= 0}`` inside the quantile moment
functions. It is the integral of a fourth-order polynomial kernel supported
on [-1, 1]:

    I(u) = 0.5 + 105/64 * (u - 5/3 u^3 + 7/5 u^5 - 3/7 u^7)   for |u| <= 1

with I(u) = 0 below the support and 1 above it.
"""

import numpy as np

from .errors import DomainError, ParameterError

__all__ = [
    "KERNEL_ORDER",
    "SmoothingKernel",
    "smooth_indicator",
    "smooth_indicator_derivative",
    "kernel_moment",
]

KERNEL_ORDER = 4

_SCALE = 105.0 / 64.0


def _as_finite(u):
    arr = np.asarray(u, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("smoothed indicator requires finite input")
    return arr


def _indicator_raw(u):
    # no validation; callers guarantee finiteness
    c = np.clip(u, -1.0, 1.0)
    c2 = c * c
    poly = c * (1.0 + c2 * (-5.0 / 3.0 + c2 * (7.0 / 5.0 - c2 * (3.0 / 7.0))))
    # pin the endpoints exactly; the polynomial only reaches 0/1 up to rounding
    return np.where(u <= -1.0, 0.0, np.where(u >= 1.0, 1.0, 0.5 + _SCALE * poly))


def _indicator_fast(u):
    # endpoint values are exact only up to rounding; fine inside objectives
    c = np.clip(u, -1.0, 1.0)
    c2 = c * c
    return 0.5 + _SCALE * (c * (1.0 + c2 * (-5.0 / 3.0 + c2 * (7.0 / 5.0 - c2 * (3.0 / 7.0)))))


def _derivative_raw(u):
    c = np.clip(u, -1.0, 1.0)
    c2 = c * c
    val = _SCALE * (1.0 + c2 * (-5.0 + c2 * (7.0 - 3.0 * c2)))
    # the polynomial is already zero at |u| = 1, so clipping keeps continuity
    return val


def smooth_indicator(u):
    """Evaluate the smoothed indicator elementwise.

    Parameters
    ----------
    u : float or array_like
        Points at which to evaluate. Must be finite.

    Returns
    -------
    float or ndarray
        Same shape as ``u``.

    Raises
    ------
    DomainError
        If any entry of ``u`` is NaN or infinite.
    """
    arr = _as_finite(u)
    out = _indicator_raw(arr)
    return float(out) if out.ndim == 0 else out


def smooth_indicator_derivative(u):
    """Derivative of :func:`smooth_indicator`; zero outside [-1, 1]."""
    arr = _as_finite(u)
    out = _derivative_raw(arr)
    return float(out) if out.ndim == 0 else out


def kernel_moment(k, quadrature_nodes=64):
    """Integral of ``u**k`` times the kernel over [-1, 1].

    Uses composite Gauss-Legendre quadrature with 16-point panels, so
    ``quadrature_nodes`` is rounded down to a multiple of 16. The integrand
    is a polynomial of degree ``k + 6`` and the rule is exact for
    polynomials up to degree 31 per panel.
    """
    if k < 0:
        raise ParameterError(f"moment order must be non-negative, got {k}")
    if quadrature_nodes < 64:
        raise ParameterError(f"need at least 64 quadrature nodes, got {quadrature_nodes}")
    panels = quadrature_nodes // 16
    x, w = np.polynomial.legendre.leggauss(16)
    edges = np.linspace(-1.0, 1.0, panels + 1)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        half = 0.5 * (b - a)
        nodes = 0.5 * (a + b) + half * x
        total += half * np.sum(w * nodes**k * _derivative_raw(nodes))
    return float(total)


class SmoothingKernel:
    """Callable bundle of the smoothed indicator and its derivative.

    Kept as a small object so alternative kernels could be dropped in, but
    only the fourth-order polynomial kernel is provided.
    """

    order_r = KERNEL_ORDER
    support = (-1.0, 1.0)

    def __call__(self, u):
        return smooth_indicator(u)

    def derivative(self, u):
        return smooth_indicator_derivative(u)

    def moment(self, k, quadrature_nodes=64):
        return kernel_moment(k, quadrature_nodes)

    def __repr__(self):
        return f"SmoothingKernel(order_r={self.order_r})"
