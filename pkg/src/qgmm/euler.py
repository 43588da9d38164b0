"""Quantile Euler equation for consumption with several assets.

With isoelastic utility the first-order condition for asset j is

    Q_tau[ delta (c_{t+1}/c_t)^(-gamma) R_j | e_t ] = 1.

Taking logs (quantiles commute with monotone maps) and flipping the sign
of the argument for gamma > 0 gives a linear IV quantile restriction at
level q = 1 - tau:

    Q_q[ g - b0 - b1 ln R_j | e_t ] = 0,   g = ln(c_{t+1}/c_t),
    b0 = ln(delta) / gamma,   b1 = 1 / gamma.

Consumption growth is common to every asset. Estimating (b0, b1, q) with
the stacked smoothed GMM machinery and mapping back gives the preference
parameters (tau, delta, gamma, EIS).
"""

import csv
import re
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import DimensionError, DomainError, InsufficientDataError, ParameterError
from .model import ChoiceBlock, LinearQuantileModel, ObservationSet
from .estimator import Z_95, bootstrap_inference, estimate

__all__ = [
    "CSV_COLUMNS",
    "INSTRUMENT_COLUMNS",
    "ConsumptionPanel",
    "CsvSchemaError",
    "EulerModel",
    "PreferenceEstimates",
    "PreferenceInference",
    "euler_structural_model",
    "to_preferences",
    "from_preferences",
    "preference_inference",
    "delta_method_inference",
    "EulerResult",
    "estimate_preferences",
    "synthetic_panel",
]

INSTRUMENT_COLUMNS = ("lag2_consumption_growth", "lag2_nominal_return", "inflation")
CSV_COLUMNS = (
    "household_id",
    "period",
    "consumption_growth",
    "log_return_asset1",
    "log_return_asset2",
) + INSTRUMENT_COLUMNS
_RETURN_COL = re.compile(r"^log_return_asset(\d+)$")
PREFERENCE_NAMES = ("tau", "delta", "gamma", "eis")


class CsvSchemaError(DomainError):
    """Malformed panel CSV; the message names the offending row or column."""


@dataclass(frozen=True)
class ConsumptionPanel:
    """Household-period rows of consumption growth, asset returns and instruments.

    Attributes
    ----------
    household_id, period : ndarray of int, shape (N,)
    consumption_growth : ndarray, shape (N,)
        ln(c_{t+1} / c_t).
    log_returns : ndarray, shape (N, m)
        ln R_j for each asset, m >= 2.
    instruments : ndarray, shape (N, 3)
        Twice-lagged consumption growth, twice-lagged nominal return and
        inflation, in that order. A constant is added when building moments.
    """

    household_id: np.ndarray
    period: np.ndarray
    consumption_growth: np.ndarray
    log_returns: np.ndarray
    instruments: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.consumption_growth, dtype=float).ravel()
        r = np.asarray(self.log_returns, dtype=float)
        z = np.asarray(self.instruments, dtype=float)
        if r.ndim != 2 or z.ndim != 2:
            raise DimensionError("log_returns and instruments must be 2-D")
        n = g.size
        hid = np.asarray(self.household_id).ravel()
        per = np.asarray(self.period).ravel()
        for name, a in (("log_returns", r), ("instruments", z), ("household_id", hid), ("period", per)):
            if a.shape[0] != n:
                raise DimensionError(f"{name} has {a.shape[0]} rows, consumption_growth has {n}")
        if r.shape[1] < 2:
            raise InsufficientDataError(f"need at least 2 assets to identify tau, got {r.shape[1]}")
        for name, a in (("consumption_growth", g), ("log_returns", r), ("instruments", z)):
            if not np.all(np.isfinite(a)):
                raise DomainError(f"{name} contains non-finite entries")
        for name, a in (("household_id", hid), ("period", per), ("consumption_growth", g),
                        ("log_returns", r), ("instruments", z)):
            a = np.array(a)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n_rows(self):
        return self.consumption_growth.size

    @property
    def num_assets(self):
        return self.log_returns.shape[1]

    def to_observation_set(self):
        """One choice block per asset sharing consumption growth and instruments."""
        z = np.column_stack([np.ones(self.n_rows), self.instruments])
        blocks = [
            ChoiceBlock(self.consumption_growth, self.log_returns[:, j], z)
            for j in range(self.num_assets)
        ]
        return ObservationSet(blocks)

    @classmethod
    def from_csv(cls, path):
        """Read a panel; header names are fixed, extra columns are ignored.

        Raises
        ------
        CsvSchemaError
            Missing column or an unparsable cell, reported by column name and
            1-based line number.
        OSError
            If the file cannot be read.
        """
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            asset_cols = sorted(
                (c for c in header if _RETURN_COL.match(c)),
                key=lambda c: int(_RETURN_COL.match(c).group(1)),
            )
            for col in CSV_COLUMNS:
                if col not in header:
                    raise CsvSchemaError(f"{path}: missing column {col!r}")
            rows = {c: [] for c in ("household_id", "period", "consumption_growth", *asset_cols,
                                    *INSTRUMENT_COLUMNS)}
            for line, rec in enumerate(reader, start=2):
                for col, vals in rows.items():
                    cell = rec.get(col)
                    try:
                        vals.append(float(cell))
                    except (TypeError, ValueError):
                        raise CsvSchemaError(
                            f"{path}: line {line}, column {col!r}: cannot parse {cell!r} as a number"
                        ) from None
                    if not np.isfinite(vals[-1]):
                        raise CsvSchemaError(f"{path}: line {line}, column {col!r}: non-finite value")
        if not rows["consumption_growth"]:
            raise CsvSchemaError(f"{path}: no data rows")
        return cls(
            np.asarray(rows["household_id"]).astype(np.int64),
            np.asarray(rows["period"]).astype(np.int64),
            np.asarray(rows["consumption_growth"]),
            np.column_stack([rows[c] for c in asset_cols]),
            np.column_stack([rows[c] for c in INSTRUMENT_COLUMNS]),
        )

    def to_csv(self, path):
        cols = ["household_id", "period", "consumption_growth"]
        cols += [f"log_return_asset{j + 1}" for j in range(self.num_assets)]
        cols += list(INSTRUMENT_COLUMNS)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for i in range(self.n_rows):
                w.writerow(
                    [int(self.household_id[i]), int(self.period[i]), repr(float(self.consumption_growth[i]))]
                    + [repr(float(v)) for v in self.log_returns[i]]
                    + [repr(float(v)) for v in self.instruments[i]]
                )


class EulerModel(LinearQuantileModel):
    """Lambda_j = g - b0 - b1 ln R_j; the fitted quantile level is q = 1 - tau."""

    def __init__(self, num_assets=2):
        if num_assets < 2:
            raise ParameterError(f"need at least 2 assets, got {num_assets}")
        self.num_assets = int(num_assets)
        super().__init__(1, ["b0", "b1"])

    def names(self):
        return ["b0", "b1", "q"]

    def __reduce__(self):
        return (type(self), (self.num_assets,))

    def __repr__(self):
        return f"EulerModel(num_assets={self.num_assets})"


def euler_structural_model(num_assets=2):
    return EulerModel(num_assets)


@dataclass(frozen=True)
class PreferenceEstimates:
    """Risk attitude tau, discount factor delta, curvature gamma and EIS = 1/gamma."""

    tau: float
    delta: float
    gamma: float
    eis: float

    def as_dict(self):
        return {k: float(getattr(self, k)) for k in PREFERENCE_NAMES}

    def as_vector(self):
        return np.array([getattr(self, k) for k in PREFERENCE_NAMES], dtype=float)


def to_preferences(b0, b1, q):
    """Map Euler regression coefficients and the fitted level to preferences.

    Raises
    ------
    DomainError
        If ``b1 <= 0``; the sign flip behind the q = 1 - tau restriction
        needs gamma > 0.
    """
    b0, b1, q = float(b0), float(b1), float(q)
    if not b1 > 0:
        raise DomainError(f"slope b1 = {b1} must be positive (gamma > 0)")
    if not 0.0 < q < 1.0:
        raise DomainError(f"quantile level q = {q} must lie in (0, 1)")
    return PreferenceEstimates(tau=1.0 - q, delta=float(np.exp(b0 / b1)), gamma=1.0 / b1, eis=b1)


def from_preferences(prefs):
    """Inverse of :func:`to_preferences`: returns (b0, b1, q)."""
    if not prefs.gamma > 0 or not prefs.delta > 0:
        raise DomainError("gamma and delta must be positive")
    b1 = 1.0 / prefs.gamma
    return b1 * np.log(prefs.delta), b1, 1.0 - prefs.tau


@dataclass
class PreferenceInference:
    """Point estimates with bootstrap standard errors and point +/- 1.96 SE intervals."""

    estimates: PreferenceEstimates
    se: dict
    ci_low: dict
    ci_high: dict
    draws: np.ndarray
    dropped: int

    def to_dict(self):
        est = self.estimates.as_dict()
        return {
            **est,
            "se": dict(self.se),
            "ci": {k: [self.ci_low[k], self.ci_high[k]] for k in PREFERENCE_NAMES},
            "dropped_draws": int(self.dropped),
        }


def preference_inference(bootstrap_draws, point=None):
    """Bootstrap inference on the preference scale.

    Parameters
    ----------
    bootstrap_draws : array_like, shape (B, 3)
        Draws of (b0, b1, q).
    point : array_like, optional
        The full-sample (b0, b1, q). Defaults to the mean of the usable draws.

    Draws with ``b1 <= 0`` cannot be mapped and are dropped and counted.
    """
    draws = np.atleast_2d(np.asarray(bootstrap_draws, dtype=float))
    if draws.shape[1] != 3:
        raise DimensionError(f"draws must have 3 columns (b0, b1, q), got {draws.shape[1]}")
    keep = (draws[:, 1] > 0) & (draws[:, 2] > 0) & (draws[:, 2] < 1)
    usable = draws[keep]
    if usable.shape[0] < 2:
        raise InsufficientDataError(f"need at least 2 usable draws, got {usable.shape[0]}")
    mapped = np.array([to_preferences(*d).as_vector() for d in usable])
    est = to_preferences(*(usable.mean(axis=0) if point is None else point))
    sd = mapped.std(axis=0, ddof=1)
    centre = est.as_vector()
    se = dict(zip(PREFERENCE_NAMES, map(float, sd)))
    lo = dict(zip(PREFERENCE_NAMES, map(float, centre - Z_95 * sd)))
    hi = dict(zip(PREFERENCE_NAMES, map(float, centre + Z_95 * sd)))
    return PreferenceInference(est, se, lo, hi, mapped, int(draws.shape[0] - usable.shape[0]))


def _preference_jacobian(b0, b1):
    # d(tau, delta, gamma, eis) / d(b0, b1, q)
    delta = np.exp(b0 / b1)
    return np.array([
        [0.0, 0.0, -1.0],
        [delta / b1, -delta * b0 / b1**2, 0.0],
        [0.0, -1.0 / b1**2, 0.0],
        [0.0, 1.0, 0.0],
    ])


def delta_method_inference(point, cov):
    """Preference SEs from the asymptotic covariance of (b0, b1, q)."""
    point = np.asarray(point, dtype=float)
    est = to_preferences(*point)
    J = _preference_jacobian(point[0], point[1])
    var = np.diag(J @ np.asarray(cov, dtype=float) @ J.T)
    sd = np.sqrt(np.where(var >= 0, var, np.nan))
    centre = est.as_vector()
    se = dict(zip(PREFERENCE_NAMES, map(float, sd)))
    lo = dict(zip(PREFERENCE_NAMES, map(float, centre - Z_95 * sd)))
    hi = dict(zip(PREFERENCE_NAMES, map(float, centre + Z_95 * sd)))
    return PreferenceInference(est, se, lo, hi, None, 0)


@dataclass
class EulerResult:
    """Preference estimates plus the underlying (b0, b1, q) fit."""

    preferences: PreferenceInference
    report: object
    bootstrap: object = None

    @property
    def inference(self):
        return "bootstrap" if self.bootstrap is not None else "asymptotic"

    def to_dict(self):
        out = self.preferences.to_dict()
        out["inference"] = self.inference
        out["regression"] = self.report.to_dict()
        if self.bootstrap is not None:
            out["bootstrap_draws"] = int(self.bootstrap.draws.shape[0])
            out["bootstrap_failures"] = int(self.bootstrap.failures)
        return out


def estimate_preferences(
    panel,
    bandwidth="plugin",
    config=None,
    bootstrap=0,
    seed=0,
    cov_method="iid",
    lags=None,
    workers=None,
):
    """Fit the Euler restriction on a panel and report preference parameters.

    With ``bootstrap > 0`` standard errors come from that many row
    resamples mapped through :func:`to_preferences`; otherwise the
    delta method is applied to the sandwich covariance.
    """
    data = panel.to_observation_set()
    model = EulerModel(panel.num_assets)
    report = estimate(data, model, bandwidth, config, cov_method, lags)
    point = report.theta_hat.as_vector()
    if bootstrap > 0:
        bs = bootstrap_inference(
            data, model, bandwidth, bootstrap, seed, config,
            theta_hat=report.theta_hat, cov_method=cov_method, lags=lags, workers=workers,
        )
        return EulerResult(preference_inference(bs.draws, point), report, bs)
    return EulerResult(delta_method_inference(point, report.asymptotic_cov), report)


def synthetic_panel(n, T, prefs, seed, noise=(0.05, 0.3), slope_spread=0.8):
    """Two-asset panel on which the log Euler restriction holds at q = 1 - tau.

    Each asset has a structural quantile function in its own rank U_j,
    independent of the instruments:

        asset 2:  g = a + s2 (U2 - q) + (b + k (U2 - q)) r2
        asset 1:  g = a + s1 (Phi^-1(U1) - Phi^-1(q)) + b r1

    with a = ln(delta)/gamma and b = 1/gamma, s1, s2 = ``noise`` and
    k = ``slope_spread``. r2 is drawn from the instruments and U2 and
    consumption growth follows from the asset-2 relation; r1 is then
    solved from the asset-1 relation, so both returns are endogenous. The
    two relations agree only at U = q, which identifies q. Bounded
    instruments keep r2 > -s2/k, so each relation is increasing in its
    rank and P(Lambda_j <= 0 | instruments) = q exactly.

    Parameters
    ----------
    n, T : int
        Households and periods; the panel has n * T rows.
    prefs : PreferenceEstimates
        Only tau, delta and gamma are used.
    seed : int
    """
    if n < 1 or T < 1:
        raise ParameterError(f"n and T must be at least 1, got n={n}, T={T}")
    if not 0.0 < prefs.tau < 1.0:
        raise ParameterError(f"tau must lie in (0, 1), got {prefs.tau}")
    a, b, q = from_preferences(prefs)
    s1, s2 = map(float, noise)
    k = float(slope_spread)
    if s1 <= 0 or s2 <= 0 or k < 0:
        raise ParameterError("noise scales must be positive and slope_spread non-negative")
    if b - k * q <= 0:
        raise ParameterError("slope_spread too large: the asset-2 slope must stay positive")
    rng = np.random.default_rng(seed)
    N = n * T
    # instruments on bounded supports
    lag2_g = rng.uniform(-0.1, 0.1, N)
    lag2_nom = rng.uniform(-0.3, 0.4, N)
    infl = rng.uniform(0.0, 0.06, N)
    u1 = rng.uniform(0.0, 1.0, N)
    u2 = rng.uniform(0.0, 1.0, N)
    r2 = 0.02 + 0.8 * lag2_nom - 0.5 * infl + 0.5 * lag2_g + 0.1 * (u2 - 0.5)
    if np.any(k * r2 <= -s2):
        raise ParameterError("noise[1] too small relative to slope_spread for monotonicity")
    g = a + s2 * (u2 - q) + (b + k * (u2 - q)) * r2
    r1 = (g - a - s1 * (ndtri(u1) - ndtri(q))) / b
    hid = np.repeat(np.arange(1, n + 1), T)
    per = np.tile(np.arange(1, T + 1), n)
    return ConsumptionPanel(
        hid, per, g, np.column_stack([r1, r2]), np.column_stack([lag2_g, lag2_nom, infl])
    )
