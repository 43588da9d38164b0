"""Smoothing bandwidth selection.

The plug-in rule is a Gaussian-reference surrogate

    h = c * sigma_Lambda * n^(-1/(2r - 1)),   r = 4,

where ``sigma_Lambda`` is the pooled within-choice standard deviation of
the structural residuals at a pilot estimate. The constant ``c`` was
calibrated once on the two simulation designs in :mod:`qgmm.simulation`
(see ``PLUGIN_CONSTANT``); it is not derived from an MSE expansion.
"""

import warnings

import numpy as np

from .errors import ParameterError
from .kernel import KERNEL_ORDER
from .model import ParameterPoint, residuals

__all__ = [
    "PLUGIN_CONSTANT",
    "ADMISSIBLE_CONSTANT",
    "FALLBACK_BANDWIDTH",
    "fixed_bandwidth",
    "plugin_bandwidth",
    "pooled_residual_scale",
    "admissible",
    "parse_bandwidth",
]

PLUGIN_CONSTANT = 3.65
ADMISSIBLE_CONSTANT = 10.0
FALLBACK_BANDWIDTH = 1e-3


def fixed_bandwidth(h):
    try:
        h = float(h)
    except (TypeError, ValueError):
        raise ParameterError(f"cannot parse bandwidth {h!r}") from None
    if not (np.isfinite(h) and h > 0):
        raise ParameterError(f"bandwidth must be positive, got {h}")
    return h


def pooled_residual_scale(data, model, theta):
    """sqrt of the average over choices of the residual variance."""
    beta = theta.beta if isinstance(theta, ParameterPoint) else np.asarray(theta)[:-1]
    lams = residuals(data, model, beta)
    return float(np.sqrt(np.mean([np.var(lam) for lam in lams])))


def plugin_bandwidth(data, model, theta_pilot, constant=PLUGIN_CONSTANT):
    """Plug-in bandwidth at the pilot estimate ``theta_pilot``.

    Falls back to ``FALLBACK_BANDWIDTH`` with a warning when the residuals
    have no spread beyond rounding error.
    """
    scale = pooled_residual_scale(data, model, theta_pilot)
    # residuals of an exact fit carry rounding noise only
    ref = max(1.0, float(np.sqrt(np.mean([np.mean(b.Y**2) for b in data.choices]))))
    if not scale > 1e-12 * ref:
        warnings.warn(
            f"structural residuals have zero spread; using h={FALLBACK_BANDWIDTH}",
            RuntimeWarning,
            stacklevel=2,
        )
        return FALLBACK_BANDWIDTH
    return float(constant * scale * data.n ** (-1.0 / (2 * KERNEL_ORDER - 1)))


def admissible(h, n, constant=ADMISSIBLE_CONSTANT):
    """Whether ``h <= constant * n^(-1/(2r))``; advisory only."""
    if n < 1:
        raise ParameterError(f"n must be at least 1, got {n}")
    return bool(h <= constant * n ** (-1.0 / (2 * KERNEL_ORDER)))


def parse_bandwidth(spec):
    """Turn ``"plugin"``, ``"fixed:<h>"`` or a number into ``"plugin"`` or a float."""
    if isinstance(spec, str):
        s = spec.strip().lower()
        if s in ("plugin", "ks17"):
            return "plugin"
        if s.startswith("fixed:"):
            return fixed_bandwidth(s.split(":", 1)[1])
        return fixed_bandwidth(s)
    return fixed_bandwidth(spec)
