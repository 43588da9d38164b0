"""Initial, one-step and efficient two-step smoothed GMM estimation.

The pipeline in :func:`two_step` is

A. a GMM fit with a data-only weight (the initial estimate),
B. one Newton-type update from it using the estimated Jacobian and
   moment covariance,
C. re-minimisation of the objective weighted by the inverse moment
   covariance evaluated at the one-step estimate,

followed by sandwich standard errors at the final estimate.
:func:`estimate` wraps this with bandwidth selection, and
:func:`bootstrap_inference` resamples observations jointly across choices.
"""

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._parallel import map_ordered, stream_seeds
from .bandwidth import admissible, parse_bandwidth, plugin_bandwidth, pooled_residual_scale
from .errors import (
    ConditioningError,
    DimensionError,
    EstimationError,
    IdentificationError,
    InferenceError,
    NonFiniteObjectiveError,
    ParameterError,
    QGMMError,
)
from .model import ParameterPoint, moment_jacobian, smoothed_moments
from .optimizer import AnnealConfig, Bounds, make_objective, minimize, profile_start
from .weighting import efficient_weight, estimate_covariance, instrument_weight

__all__ = [
    "EstimateReport",
    "OneStep",
    "BootstrapResult",
    "initial_estimate",
    "one_step",
    "two_step",
    "estimate",
    "asymptotic_covariance",
    "bootstrap_inference",
    "check_rank",
    "Z_95",
]

log = logging.getLogger(__name__)

Z_95 = 1.96
RANK_RTOL = 1e-10
PILOT_FRACTION = 0.1


@dataclass
class StageRecord:
    name: str
    theta: np.ndarray
    objective: float


@dataclass
class EstimateReport:
    """Point estimate, sandwich covariance and a trace of the pipeline.

    ``asymptotic_cov`` is already divided by n, so ``se`` is the square
    root of its diagonal. Entries are NaN when inference was not required
    and the Jacobian was rank deficient.
    """

    theta_hat: ParameterPoint
    asymptotic_cov: np.ndarray
    se: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    objective_value: float
    bandwidth_used: float
    stage_trace: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    param_names: list = None
    weight: np.ndarray = field(default=None, repr=False)

    def to_dict(self):
        names = self.param_names or [f"theta{k}" for k in range(self.se.size)]
        theta = self.theta_hat.as_vector()
        return {
            "params": {
                name: {
                    "estimate": float(theta[k]),
                    "se": _num(self.se[k]),
                    "ci": [_num(self.ci_low[k]), _num(self.ci_high[k])],
                }
                for k, name in enumerate(names)
            },
            "asymptotic_cov": [[_num(v) for v in row] for row in self.asymptotic_cov],
            "objective_value": self.objective_value,
            "bandwidth": self.bandwidth_used,
            "stages": [
                {"stage": s.name, "theta": [float(v) for v in s.theta], "objective": s.objective}
                for s in self.stage_trace
            ],
            "diagnostics": self.diagnostics,
        }


def _num(v):
    v = float(v)
    return v if np.isfinite(v) else None


class OneStep(NamedTuple):
    theta: ParameterPoint
    clamped: bool


def check_rank(G, stage=None):
    """Raise IdentificationError unless ``G`` has full column rank."""
    s = np.linalg.svd(np.asarray(G, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0 or s[-1] <= RANK_RTOL * s[0]:
        raise IdentificationError(
            f"moment Jacobian is rank deficient (singular values {np.array2string(s, precision=3)})",
            singular_values=s,
            stage=stage,
        )
    return s


def _default_start(data, model, box):
    return ParameterPoint(box.clip(np.append(model.beta_start(data), 0.5))[:-1], 0.5)


def _bounds(config, model, beta_center):
    if config.bounds is not None:
        box = config.bounds
    else:
        box = Bounds.around(beta_center, config.beta_radius)
    if box.dim != model.d_beta + 1:
        raise DimensionError(f"bounds have {box.dim} coordinates, model needs {model.d_beta + 1}")
    box.check_tau()
    return box


def initial_weight_objective(data, model, h, weight="instrument"):
    """Objective used for the initial estimate.

    ``weight="instrument"`` divides the per-choice instrument-normalised
    quadratic form by tau (1 - tau); ``"identity"`` is plain identity
    weighting.
    """
    if weight == "identity":
        return make_objective(data, model, np.eye(data.n_moments), h)
    if weight == "instrument":
        return make_objective(data, model, instrument_weight(data), h, scale_by_tau=True)
    raise ParameterError(f"unknown initial weight {weight!r}")


def initial_estimate(data, model, h, config=None, start=None, weight="instrument"):
    """Smoothed GMM fit with a fixed, data-only weight by annealing plus polish.

    See :func:`initial_weight_objective` for the choice of ``weight``.
    """
    config = config or AnnealConfig()
    center = start.beta if start is not None else model.beta_start(data)
    box = _bounds(config, model, center)
    if start is None:
        start = _default_start(data, model, box)
    elif not box.contains(start.as_vector()):
        start = ParameterPoint.from_vector(box.clip(start.as_vector()))
    objective = initial_weight_objective(data, model, h, weight)
    start = profile_start(objective, box, start)
    theta, _ = minimize(objective, config, start, box)
    return theta


def _covariance_at(data, model, theta, h, cov_method, lags):
    ev = smoothed_moments(data, model, theta, h)
    return ev, estimate_covariance(ev.per_obs_moments, cov_method, lags)


def one_step(data, model, theta_bar, h, cov_method="iid", lags=None, bounds=None):
    """Single Newton-type update from a consistent initial estimate.

    Returns
    -------
    OneStep
        ``theta`` clamped into ``bounds`` (if given) and whether clamping
        happened.

    Raises
    ------
    IdentificationError
        If the Jacobian at ``theta_bar`` is rank deficient.
    """
    G = moment_jacobian(data, model, theta_bar, h)
    check_rank(G, stage="one_step")
    ev, cov = _covariance_at(data, model, theta_bar, h, cov_method, lags)
    W = efficient_weight(cov)
    GW = G.T @ W
    step = np.linalg.solve(GW @ G, GW @ ev.g_bar)
    theta = theta_bar.as_vector() - step
    clamped = False
    if bounds is not None and not bounds.contains(theta):
        theta = bounds.clip(theta)
        clamped = True
    return OneStep(ParameterPoint.from_vector(theta), clamped)


def asymptotic_covariance(G_hat, W, Sigma_hat, n):
    """Sandwich covariance (G'WG)^-1 G'W Sigma W G (G'WG)^-1 / n."""
    G = np.asarray(G_hat, dtype=float)
    W = np.asarray(W, dtype=float)
    S = np.asarray(Sigma_hat, dtype=float)
    k, p = G.shape
    if W.shape != (k, k) or S.shape != (k, k):
        raise DimensionError(f"W {W.shape} and Sigma {S.shape} must both be ({k}, {k})")
    check_rank(G, stage="inference")
    bread = np.linalg.inv(G.T @ W @ G)
    meat = G.T @ W @ S @ W @ G
    cov = bread @ meat @ bread / n
    return 0.5 * (cov + cov.T)


def _nan_inference(p):
    nan = np.full(p, np.nan)
    return np.full((p, p), np.nan), nan, nan.copy(), nan.copy()


def two_step(
    data,
    model,
    h,
    config=None,
    cov_method="iid",
    lags=None,
    initial=None,
    require_inference=True,
    initial_weight="instrument",
):
    """Efficient two-step smoothed GMM with sandwich inference.

    Parameters
    ----------
    data : ObservationSet
    model : StructuralModel
    h : float
        Smoothing bandwidth.
    config : AnnealConfig, optional
    cov_method : {"iid", "hac"}
        Moment covariance estimator for the weighting matrix and the
        sandwich.
    lags : int, optional
        HAC truncation lag; Newey-West default when None.
    initial : ParameterPoint, optional
        Use this as the initial estimate instead of running stage A.
    require_inference : bool, default True
        If False a rank-deficient Jacobian at the estimate yields NaN
        standard errors instead of an :class:`IdentificationError`.
    initial_weight : {"instrument", "identity"}
        Weight for stage A, see :func:`initial_weight_objective`.

    Returns
    -------
    EstimateReport
    """
    config = config or AnnealConfig()
    h = parse_bandwidth(h)
    if h == "plugin":
        raise ParameterError("two_step needs a numeric bandwidth; use estimate() for plug-in")
    if data.m < 2:
        raise ParameterError("estimating tau needs at least two choices")
    trace = []
    diagnostics = {"admissible_bandwidth": admissible(h, data.n)}
    obj_initial = initial_weight_objective(data, model, h, initial_weight)

    try:
        if initial is None:
            theta_bar = initial_estimate(data, model, h, config, weight=initial_weight)
            trace.append(StageRecord("initial", theta_bar.as_vector(), obj_initial(theta_bar.as_vector())))
        else:
            theta_bar = initial
            trace.append(StageRecord("initial (supplied)", theta_bar.as_vector(), obj_initial(theta_bar.as_vector())))
    except NonFiniteObjectiveError as exc:
        raise EstimationError(str(exc), "initial") from exc

    box_a = _bounds(config, model, theta_bar.beta)
    rank_error = None
    try:
        theta_1s, clamped = one_step(data, model, theta_bar, h, cov_method, lags, box_a)
        diagnostics["one_step_clamped"] = clamped
    except IdentificationError as exc:
        # the Newton step is only a better starting value; stage C still runs
        log.info("one-step update skipped: %s", exc)
        theta_1s = theta_bar
        rank_error = exc
        diagnostics["one_step_skipped"] = str(exc)
    except ConditioningError as exc:
        raise EstimationError(str(exc), "one_step") from exc

    try:
        _, cov_1s = _covariance_at(data, model, theta_1s, h, cov_method, lags)
        W = efficient_weight(cov_1s)
    except ConditioningError as exc:
        # a singular covariance on top of a rank-deficient Jacobian is an
        # identification failure, e.g. constant regressors
        if rank_error is not None:
            raise rank_error from exc
        raise EstimationError(str(exc), "weighting") from exc
    diagnostics["sigma_min_eigenvalue"] = float(np.linalg.eigvalsh(cov_1s.sigma)[0])
    objective = make_objective(data, model, W, h)
    trace.append(StageRecord("one_step", theta_1s.as_vector(), objective(theta_1s.as_vector())))

    box_c = _bounds(config, model, theta_1s.beta)
    start_c = theta_1s
    if not box_c.contains(start_c.as_vector()):
        start_c = ParameterPoint.from_vector(box_c.clip(start_c.as_vector()))
    try:
        theta_2s, value = minimize(objective, config, start_c, box_c)
    except NonFiniteObjectiveError as exc:
        raise EstimationError(str(exc), "two_step") from exc
    trace.append(StageRecord("two_step", theta_2s.as_vector(), value))

    p = model.d_beta + 1
    ev, cov_2s = _covariance_at(data, model, theta_2s, h, cov_method, lags)
    G = moment_jacobian(data, model, theta_2s, h)
    try:
        acov = asymptotic_covariance(G, W, cov_2s.sigma, data.n)
        se = np.sqrt(np.clip(np.diag(acov), 0.0, None))
        theta_vec = theta_2s.as_vector()
        lo, hi = theta_vec - Z_95 * se, theta_vec + Z_95 * se
    except IdentificationError as exc:
        if require_inference:
            raise
        diagnostics["inference"] = f"unavailable: {exc}"
        acov, se, lo, hi = _nan_inference(p)
    diagnostics["covariance"] = cov_2s.method
    if cov_2s.method != "iid":
        diagnostics["hac_lags"] = cov_2s.lags

    return EstimateReport(
        theta_hat=theta_2s,
        asymptotic_cov=acov,
        se=se,
        ci_low=lo,
        ci_high=hi,
        objective_value=value,
        bandwidth_used=h,
        stage_trace=trace,
        diagnostics=diagnostics,
        param_names=model.names(),
        weight=W,
    )


def pilot_bandwidth(data, model, beta=None):
    """Small bandwidth for the pilot fit: a tenth of the residual scale at ``beta``."""
    if beta is None:
        beta = model.beta_start(data)
    scale = pooled_residual_scale(data, model, np.append(beta, 0.5))
    return PILOT_FRACTION * scale if scale > 0 else 1e-3


def estimate(
    data,
    model,
    bandwidth="plugin",
    config=None,
    cov_method="iid",
    lags=None,
    initial=None,
    require_inference=True,
):
    """Bandwidth selection followed by :func:`two_step`.

    With ``bandwidth="plugin"`` a pilot stage-A fit at a small
    bandwidth (or ``initial``, when given) supplies both the residual scale
    for the plug-in rule and the initial estimate for the one-step update.
    """
    config = config or AnnealConfig()
    bw = parse_bandwidth(bandwidth)
    if bw != "plugin":
        return two_step(data, model, bw, config, cov_method, lags, initial, require_inference)
    if initial is None:
        h0 = pilot_bandwidth(data, model)
        initial = initial_estimate(data, model, h0, config)
    h = plugin_bandwidth(data, model, initial)
    report = two_step(data, model, h, config, cov_method, lags, initial, require_inference)
    report.diagnostics["bandwidth_rule"] = "plugin"
    return report


@dataclass
class BootstrapResult:
    """Bootstrap standard errors and normal-approximation 95% intervals."""

    theta_hat: np.ndarray
    se: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    draws: np.ndarray
    failures: int
    bandwidths: np.ndarray = None

    @property
    def ci(self):
        return np.column_stack([self.ci_low, self.ci_high])


def _bootstrap_draw(task):
    data, model, bandwidth, config, theta_hat, draw_seed, cov_method, lags = task
    rng = np.random.default_rng(draw_seed)
    idx = rng.integers(0, data.n, data.n)
    sample = data.take(idx)
    cfg = config.with_(seed=int(rng.integers(0, 2**31 - 1)))
    try:
        rep = estimate(
            sample, model, bandwidth, cfg, cov_method, lags, initial=theta_hat, require_inference=False
        )
    except QGMMError as exc:
        return None, None, f"{type(exc).__name__}: {exc}"
    return rep.theta_hat.as_vector(), rep.bandwidth_used, None


def bootstrap_inference(
    data,
    model,
    h,
    B,
    seed,
    config=None,
    theta_hat=None,
    freeze_bandwidth=False,
    cov_method="iid",
    lags=None,
    workers=None,
    draw_seeds=None,
    max_failure_rate=0.10,
):
    """Nonparametric bootstrap over observation rows.

    Rows are resampled with replacement jointly across choice blocks. Each
    draw re-runs the estimator starting from the full-sample estimate. With
    a plug-in bandwidth the rule is re-applied on every resample unless
    ``freeze_bandwidth`` is set.

    Parameters
    ----------
    h : float or str
        Numeric bandwidth, ``"fixed:<h>"`` or ``"plugin"``.
    B : int
        Number of draws, at least 2.
    seed : int
        Master seed; draw b uses a stream derived from ``(seed, b)``.
    theta_hat : ParameterPoint, optional
        Full-sample estimate; computed with :func:`estimate` when omitted.
    draw_seeds : sequence of int, optional
        Explicit per-draw seeds, overriding the derived streams.

    Returns
    -------
    BootstrapResult

    Raises
    ------
    InferenceError
        If more than ``max_failure_rate`` of the draws fail.
    """
    if B < 2:
        raise ParameterError(f"need at least 2 bootstrap draws, got {B}")
    config = config or AnnealConfig()
    bw = parse_bandwidth(h)
    if theta_hat is None:
        full = estimate(data, model, bw, config, cov_method, lags, require_inference=False)
        theta_hat = full.theta_hat
        full_h = full.bandwidth_used
    else:
        full_h = plugin_bandwidth(data, model, theta_hat) if bw == "plugin" else bw
    if bw == "plugin" and freeze_bandwidth:
        bw = full_h
    if draw_seeds is None:
        draw_seeds = [stream_seeds(seed, b, 1)[0] for b in range(B)]
    elif len(draw_seeds) != B:
        raise ParameterError(f"got {len(draw_seeds)} draw seeds for B={B}")
    tasks = [(data, model, bw, config, theta_hat, s, cov_method, lags) for s in draw_seeds]
    results = map_ordered(_bootstrap_draw, tasks, workers)
    ok = [(t, hb) for t, hb, err in results if err is None]
    failures = B - len(ok)
    if failures > max_failure_rate * B or len(ok) < 2:
        errors = [err for _, _, err in results if err is not None][:3]
        raise InferenceError(f"{failures}/{B} bootstrap draws failed, e.g. {errors}")
    draws = np.array([t for t, _ in ok])
    se = draws.std(axis=0, ddof=1)
    point = theta_hat.as_vector()
    return BootstrapResult(
        theta_hat=point,
        se=se,
        ci_low=point - Z_95 * se,
        ci_high=point + Z_95 * se,
        draws=draws,
        failures=failures,
        bandwidths=np.array([hb for _, hb in ok]),
    )
