"""Simulation designs with two choices whose structural quantile functions cross.

Each choice j follows a random-coefficient model

    Y_j = b0_j(U_j) + b1_j(U_j) * D_j,   D_j = Z_j + U_j,
    U_j ~ Uniform(0, 1),   Z_j ~ Normal(4, 1),

so the regressor is endogenous and Z_j is a valid instrument. In both
designs the coefficient curves of the two choices meet only at u = 0.7,
which identifies the quantile level jointly with (b0, b1).
"""

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import ndtri

from ._parallel import map_ordered, rep_seeds
from .bandwidth import parse_bandwidth
from .errors import HarnessError, ParameterError, QGMMError
from .model import ChoiceBlock, LinearQuantileModel, ObservationSet, ParameterPoint

__all__ = [
    "DgpSpec",
    "DGP1",
    "DGP2",
    "get_dgp",
    "normal_quantile",
    "generate",
    "true_parameters",
    "dgp_model",
    "BiasRmseTable",
    "run_replications",
    "PARAM_ORDER",
]

TRUE_TAU = 0.7
# report order used by the bias/RMSE tables
PARAM_ORDER = ("tau", "beta1", "beta0")


def normal_quantile(u):
    """Standard normal quantile function."""
    return ndtri(u)


def _dgp1_b01(u):
    return ndtri(u)


def _dgp1_b11(u):
    return np.full_like(np.asarray(u, dtype=float), 0.7)


def _dgp1_b02(u):
    return np.full_like(np.asarray(u, dtype=float), ndtri(0.7))


def _dgp1_b12(u):
    return np.asarray(u, dtype=float)


def _dgp2_b1(u):
    return 5.0 * np.asarray(u, dtype=float)


def _dgp2_b2(u):
    return 6.0 * np.asarray(u, dtype=float) - 0.7


@dataclass(frozen=True)
class DgpSpec:
    """Coefficient functions ``coefficients[j] = (b0_j, b1_j)`` per choice."""

    id: int
    coefficients: tuple
    instrument_mean: float = 4.0
    instrument_sd: float = 1.0
    tau0: float = TRUE_TAU

    @property
    def name(self):
        return f"DGP{self.id}"


DGP1 = DgpSpec(1, ((_dgp1_b01, _dgp1_b11), (_dgp1_b02, _dgp1_b12)))
DGP2 = DgpSpec(2, ((_dgp2_b1, _dgp2_b1), (_dgp2_b2, _dgp2_b2)))


def get_dgp(dgp):
    if isinstance(dgp, DgpSpec):
        return dgp
    key = str(dgp).upper().removeprefix("DGP")
    if key == "1":
        return DGP1
    if key == "2":
        return DGP2
    raise ParameterError(f"unknown design {dgp!r}; expected 1 or 2")


def dgp_model():
    """The linear index Lambda = y - b0 - b1 * d shared by both designs."""
    return LinearQuantileModel(1, ["beta0", "beta1"])


def true_parameters(dgp):
    """(b0, b1, tau) at the crossing quantile."""
    spec = get_dgp(dgp)
    u = np.array([spec.tau0])
    b0, b1 = spec.coefficients[0]
    return ParameterPoint([float(b0(u)[0]), float(b1(u)[0])], spec.tau0)


def generate(dgp, n, seed, shared_rank=False):
    """Draw an ObservationSet of size ``n``; instruments are stored as (1, Z).

    With ``shared_rank`` every choice uses the same rank draw U, so the
    choices' indicators 1{Lambda_j <= 0} coincide at the true parameters.
    The default draws an independent U per choice.
    """
    spec = get_dgp(dgp)
    if n < 1:
        raise ParameterError(f"n must be at least 1, got {n}")
    rng = np.random.default_rng(seed)
    blocks = []
    u_common = rng.uniform(0.0, 1.0, n) if shared_rank else None
    for b0, b1 in spec.coefficients:
        u = u_common if shared_rank else rng.uniform(0.0, 1.0, n)
        z = rng.normal(spec.instrument_mean, spec.instrument_sd, n)
        d = z + u
        y = b0(u) + b1(u) * d
        blocks.append(ChoiceBlock(y, d, np.column_stack([np.ones(n), z])))
    return ObservationSet(blocks)


@dataclass
class BiasRmseTable:
    """Bias and RMSE of (tau, beta1, beta0) over Monte Carlo replications."""

    dgp: int
    n: int
    reps: int
    bandwidth: str
    bias: dict
    rmse: dict
    failures: int = 0
    bandwidth_min: float = None
    bandwidth_mean: float = None
    bandwidth_max: float = None
    estimates: np.ndarray = field(default=None, repr=False)
    bandwidths: np.ndarray = field(default=None, repr=False)

    def rows(self):
        for p in PARAM_ORDER:
            yield {
                "dgp": self.dgp,
                "n": self.n,
                "reps": self.reps,
                "bandwidth": self.bandwidth,
                "param": p,
                "bias": self.bias[p],
                "rmse": self.rmse[p],
            }

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.DictWriter(
            buf, ["dgp", "n", "reps", "bandwidth", "param", "bias", "rmse"], lineterminator="\n"
        )
        writer.writeheader()
        for row in self.rows():
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    def to_dict(self):
        d = asdict(self)
        d.pop("estimates")
        d.pop("bandwidths")
        d["rows"] = list(self.rows())
        return d

    def to_json(self, **extra):
        return json.dumps({**self.to_dict(), **extra}, indent=2, sort_keys=True)


def _replicate(task):
    # module-level so it pickles into worker processes
    from .estimator import estimate

    spec, n, bandwidth, data_seed, anneal_seed, config, cov_method = task
    data = generate(spec, n, data_seed)
    cfg = config.with_(seed=anneal_seed)
    try:
        report = estimate(data, dgp_model(), bandwidth, cfg, cov_method=cov_method, require_inference=False)
    except QGMMError as exc:
        return None, None, f"{type(exc).__name__}: {exc}"
    # stored as (tau, beta1, beta0)
    th = report.theta_hat
    return np.array([th.tau, th.beta[1], th.beta[0]]), report.bandwidth_used, None


def run_replications(
    dgp,
    n,
    reps,
    bandwidth="plugin",
    seed=0,
    config=None,
    workers=None,
    cov_method="iid",
    max_failure_rate=0.05,
):
    """Monte Carlo bias and RMSE of the two-step estimator.

    Each replication r gets its own data and annealing seeds derived from
    ``(seed, r)``, so the table is identical for any worker count.

    Raises
    ------
    HarnessError
        If more than ``max_failure_rate`` of the replications fail.
    """
    from .optimizer import AnnealConfig

    spec = get_dgp(dgp)
    if reps < 1:
        raise ParameterError(f"reps must be at least 1, got {reps}")
    bw = parse_bandwidth(bandwidth)
    config = config or AnnealConfig()
    tasks = [
        (spec, n, bw, ds, as_, config, cov_method)
        for ds, as_ in rep_seeds(seed, reps)
    ]
    results = map_ordered(_replicate, tasks, workers)
    ok = [(est, h) for est, h, err in results if err is None]
    failures = reps - len(ok)
    if failures > max_failure_rate * reps:
        errors = [err for _, _, err in results if err is not None][:3]
        raise HarnessError(f"{failures}/{reps} replications failed, e.g. {errors}")
    est = np.array([e for e, _ in ok])
    hs = np.array([h for _, h in ok])
    th0 = true_parameters(spec)
    truth = np.array([th0.tau, th0.beta[1], th0.beta[0]])
    err = est - truth
    bias = err.mean(axis=0)
    rmse = np.sqrt((err**2).mean(axis=0))
    label = "plugin" if bw == "plugin" else f"fixed:{bw:g}"
    return BiasRmseTable(
        dgp=spec.id,
        n=int(n),
        reps=int(reps),
        bandwidth=label,
        bias={p: float(v) for p, v in zip(PARAM_ORDER, bias)},
        rmse={p: float(v) for p, v in zip(PARAM_ORDER, rmse)},
        failures=int(failures),
        bandwidth_min=float(hs.min()),
        bandwidth_mean=float(hs.mean()),
        bandwidth_max=float(hs.max()),
        estimates=est,
        bandwidths=hs,
    )
