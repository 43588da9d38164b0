"""GMM quadratic objective and its global minimisation.

The search is a box-constrained simulated annealing run followed by a
bounded Nelder-Mead polish. Both are deterministic for a given seed.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize

from .errors import DimensionError, NonFiniteObjectiveError, ParameterError
from .model import ParameterPoint, _moment_vector_raw, moment_vector

__all__ = [
    "Bounds",
    "AnnealConfig",
    "gmm_objective",
    "make_objective",
    "anneal",
    "polish",
    "minimize",
    "profile_start",
]

TAU_BOUNDS = (0.05, 0.95)


@dataclass(frozen=True)
class Bounds:
    """Axis-aligned box; ``lower``/``upper`` run over (beta..., tau)."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape:
            raise DimensionError(f"bound shapes differ: {lo.shape} vs {hi.shape}")
        if not np.all(lo < hi):
            raise ParameterError("every lower bound must be strictly below its upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def around(cls, beta, radius=10.0, tau_bounds=TAU_BOUNDS):
        beta = np.atleast_1d(np.asarray(beta, dtype=float))
        return cls(
            np.append(beta - radius, tau_bounds[0]),
            np.append(beta + radius, tau_bounds[1]),
        )

    @property
    def dim(self):
        return self.lower.size

    @property
    def span(self):
        return self.upper - self.lower

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def clip(self, x):
        return np.clip(x, self.lower, self.upper)

    def check_tau(self):
        lo, hi = self.lower[-1], self.upper[-1]
        if not (0.0 < lo and hi < 1.0):
            raise ParameterError(f"tau bounds must lie strictly inside (0, 1), got [{lo}, {hi}]")


@dataclass(frozen=True)
class AnnealConfig:
    """Settings for :func:`anneal` and :func:`polish`.

    ``max_iterations`` is the total number of objective evaluations shared
    between a uniform screen of the box (a tenth of the budget, at most
    1000 points) and ``restarts`` annealing chains. The first chain starts
    at the supplied point, middle chains at the best screened points and
    the last at the best point so far; each resets the temperature.
    ``initial_temperature`` is relative to the median screened objective
    excess over the screened minimum. When ``bounds`` is
    None the estimator builds a box of half-width ``beta_radius`` around
    its current pilot with tau in [0.05, 0.95].
    """

    max_iterations: int = 20_000
    initial_temperature: float = 1.0
    cooling_rate: float = 0.999
    bounds: Bounds = None
    seed: int = 0
    polish_tolerance: float = 1e-6
    restarts: int = 3
    initial_step: float = 0.5
    min_step: float = 1e-4
    beta_radius: float = 10.0
    polish_max_evaluations: int = 4000

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ParameterError("max_iterations must be positive")
        if not 0.0 < self.cooling_rate < 1.0:
            raise ParameterError(f"cooling_rate must lie in (0, 1), got {self.cooling_rate}")
        if self.initial_temperature <= 0:
            raise ParameterError("initial_temperature must be positive")
        if self.restarts < 1:
            raise ParameterError("restarts must be at least 1")
        if self.bounds is not None and not isinstance(self.bounds, Bounds):
            lo, hi = self.bounds
            object.__setattr__(self, "bounds", Bounds(lo, hi))

    def with_(self, **changes):
        return replace(self, **changes)


def gmm_objective(data, model, theta, W, h):
    """Quadratic form M_n(theta)' W M_n(theta) of the smoothed moments."""
    W = np.asarray(W, dtype=float)
    k = data.n_moments
    if W.shape != (k, k):
        raise DimensionError(f"weighting matrix has shape {W.shape}, expected ({k}, {k})")
    g = moment_vector(data, model, theta, h)
    return float(g @ W @ g)


def make_objective(data, model, W, h, scale_by_tau=False):
    """Closure ``theta_vector -> objective`` for the optimisers.

    With ``scale_by_tau`` the quadratic form is divided by tau (1 - tau),
    i.e. the weight is continuously updated in tau.
    """
    W = np.asarray(W, dtype=float)
    k = data.n_moments
    if W.shape != (k, k):
        raise DimensionError(f"weighting matrix has shape {W.shape}, expected ({k}, {k})")
    if not h > 0:
        raise ParameterError(f"bandwidth must be positive, got {h}")
    d = model.d_beta
    moment_vector(data, model, ParameterPoint(np.zeros(d), 0.5), h)  # shape checks once

    def objective(x):
        g = _moment_vector_raw(data, model, x[:d], x[d], h)
        if scale_by_tau:
            return float(g @ W @ g) / (x[d] * (1.0 - x[d]))
        return float(g @ W @ g)

    return objective


def _unwrap(start):
    if isinstance(start, ParameterPoint):
        return start.as_vector(), True
    return np.atleast_1d(np.asarray(start, dtype=float)).copy(), False


def _wrap(x, as_point):
    return ParameterPoint.from_vector(x) if as_point else x


def _evaluate(objective, x):
    val = objective(x)
    if not np.isfinite(val):
        raise NonFiniteObjectiveError(f"objective returned {val} at theta={x!r}", theta=x.copy())
    return float(val)


def anneal(objective, config, start, bounds=None):
    """Simulated annealing over a box.

    Proposals perturb every coordinate by a uniform step scaled by the box
    span; the step shrinks with the square root of the temperature. Moves
    are accepted by the Metropolis rule and clipped into the box.

    Parameters
    ----------
    objective : callable
        Maps a 1-D parameter vector to a finite float.
    config : AnnealConfig
    start : ParameterPoint or array_like
        Must lie inside the box.
    bounds : Bounds, optional
        Overrides ``config.bounds``.

    Returns
    -------
    ParameterPoint or ndarray
        The best point visited, of the same kind as ``start``. Its objective
        never exceeds the objective at ``start``.
    """
    x0, as_point = _unwrap(start)
    box = bounds if bounds is not None else config.bounds
    if box is None:
        raise ParameterError("anneal needs bounds")
    if box.dim != x0.size:
        raise DimensionError(f"start has {x0.size} coordinates, bounds have {box.dim}")
    if not box.contains(x0):
        raise ParameterError(f"start point {x0} lies outside the search box")
    rng = np.random.default_rng(config.seed)
    span = box.span

    best_x = x0.copy()
    best_f = _evaluate(objective, x0)
    budget = config.max_iterations - 1

    # screen the box: sets the temperature scale and seeds later chains
    n_screen = min(budget // 10, 1000)
    screen_x = box.lower + span * rng.random((n_screen, x0.size))
    screen_f = np.array([_evaluate(objective, x) for x in screen_x])
    budget -= n_screen
    if n_screen:
        k = int(np.argmin(screen_f))
        if screen_f[k] < best_f:
            best_x, best_f = screen_x[k].copy(), float(screen_f[k])
        scale = float(np.median(np.abs(screen_f - screen_f.min())))
    else:
        scale = abs(best_f)
    scale = max(scale, 1e-12)
    ranked = screen_x[np.argsort(screen_f, kind="stable")]

    per_chain = max(1, budget // config.restarts)
    for chain in range(config.restarts):
        n_iter = per_chain if chain < config.restarts - 1 else budget - per_chain * chain
        # start, then the best screened points, with the last chain from the best so far
        if chain == 0:
            x = x0.copy()
        elif chain == config.restarts - 1 or chain - 1 >= len(ranked):
            x = best_x.copy()
        else:
            x = ranked[chain - 1].copy()
        fx = _evaluate(objective, x)
        temp = config.initial_temperature
        for _ in range(max(n_iter, 0)):
            step = max(config.initial_step * np.sqrt(temp / config.initial_temperature), config.min_step)
            cand = box.clip(x + step * span * rng.uniform(-1.0, 1.0, x.size))
            fc = _evaluate(objective, cand)
            delta = fc - fx
            # always draw so the stream does not depend on the branch taken
            u = rng.random()
            if delta <= 0 or u < np.exp(-delta / (temp * scale)):
                x, fx = cand, fc
                if fx < best_f:
                    best_x, best_f = x.copy(), fx
            temp *= config.cooling_rate
    return _wrap(best_x, as_point)


def polish(objective, theta0, bounds, tol=1e-6, max_evaluations=4000, initial_step=0.02):
    """Bounded Nelder-Mead refinement started at ``theta0``.

    Stops once every simplex vertex is within ``tol`` of the best vertex in
    each coordinate. The result is never worse than ``theta0``.
    """
    x0, as_point = _unwrap(theta0)
    if not bounds.contains(x0):
        raise ParameterError(f"polish start {x0} lies outside the box")
    f0 = _evaluate(objective, x0)
    d = x0.size
    simplex = np.tile(x0, (d + 1, 1))
    for k in range(d):
        step = initial_step * bounds.span[k]
        # step inward if the vertex would leave the box
        if x0[k] + step > bounds.upper[k]:
            step = -step
        simplex[k + 1, k] = x0[k] + step
    simplex = bounds.clip(simplex)

    def wrapped(x):
        return _evaluate(objective, x)

    res = optimize.minimize(
        wrapped,
        x0,
        method="Nelder-Mead",
        bounds=list(zip(bounds.lower, bounds.upper)),
        options={
            "initial_simplex": simplex,
            "xatol": tol,
            "fatol": np.inf,
            "maxfev": max_evaluations,
        },
    )
    x = bounds.clip(res.x)
    fx = _evaluate(objective, x)
    if fx <= f0:
        return _wrap(x, as_point)
    return _wrap(x0, as_point)


def profile_start(objective, bounds, start, grid_size=19, tol=1e-4, max_evaluations=400):
    """Best point of the tau-profiled objective on a grid.

    For each tau on an even grid over the tau bounds the objective is
    minimised over beta by Nelder-Mead, warm-started from the solution at
    the neighbouring grid point. Sweeps run outward from the grid point
    nearest ``start``. Following the beta valley along tau this way finds
    basins that a global search over the full box can miss when beta is
    poorly scaled against tau.

    Returns
    -------
    ParameterPoint or ndarray
        Same kind as ``start``; its objective never exceeds that of ``start``.
    """
    x0, as_point = _unwrap(start)
    if not bounds.contains(x0):
        raise ParameterError(f"start point {x0} lies outside the search box")
    d = x0.size - 1
    taus = np.linspace(bounds.lower[-1], bounds.upper[-1], grid_size)
    mid = int(np.argmin(np.abs(taus - x0[-1])))
    beta_box = Bounds(bounds.lower[:d], bounds.upper[:d])
    best_x, best_f = x0.copy(), _evaluate(objective, x0)
    for order in (taus[mid:], taus[mid::-1]):
        beta = x0[:d].copy()
        for tau in order:
            def concentrated(b, tau=tau):
                return objective(np.append(b, tau))

            beta = polish(concentrated, beta, beta_box, tol, max_evaluations, initial_step=0.01)
            f = _evaluate(objective, np.append(beta, tau))
            if f < best_f:
                best_x, best_f = np.append(beta, tau), f
    return _wrap(best_x, as_point)


def minimize(objective, config, start, bounds=None):
    """:func:`anneal` followed by :func:`polish`; returns (theta, value)."""
    box = bounds if bounds is not None else config.bounds
    x = anneal(objective, config, start, box)
    x = polish(objective, x, box, config.polish_tolerance, config.polish_max_evaluations)
    xv, _ = _unwrap(x)
    return x, _evaluate(objective, xv)
