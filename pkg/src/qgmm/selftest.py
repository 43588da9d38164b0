"""Numerical self-checks of the kernel, Jacobian, sandwich and moment covariance."""

from dataclasses import asdict, dataclass

import numpy as np

from .estimator import asymptotic_covariance
from .kernel import KERNEL_ORDER, kernel_moment, smooth_indicator
from .model import ParameterPoint, moment_jacobian, smoothed_moments, unsmoothed_moments
from .simulation import dgp_model, generate, true_parameters
from .weighting import covariance_iid, theoretical_iid_sigma

__all__ = [
    "CheckResult",
    "DEFAULT_TOLERANCES",
    "check_kernel",
    "check_jacobian",
    "check_sandwich",
    "check_lemma2",
    "lemma2_discrepancy",
    "run_all",
]

DEFAULT_TOLERANCES = {
    "kernel": 1e-10,
    "jacobian": 1e-5,
    "sandwich": 1e-10,
    "lemma2": 0.10,
}


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def line(self):
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] {self.name:<10} value={self.value:.3e} tol={self.tolerance:.1e}  {self.detail}"

    def to_dict(self):
        d = asdict(self)
        d["value"] = float(d["value"])
        return d


def check_kernel(tol=DEFAULT_TOLERANCES["kernel"]):
    """Derivative integrates to one, moments 1..r-1 vanish, moment r does not,
    and the indicator hits 0 and 1 exactly at the support ends."""
    worst = abs(kernel_moment(0) - 1.0)
    for k in range(1, KERNEL_ORDER):
        worst = max(worst, abs(kernel_moment(k)))
    mr = kernel_moment(KERNEL_ORDER)
    ends = smooth_indicator(-1.0) == 0.0 and smooth_indicator(1.0) == 1.0
    ok = worst < tol and abs(mr) > 1e-3 and ends
    return CheckResult("kernel", bool(ok), worst, tol, f"moment_{KERNEL_ORDER}={mr:.6f} exact_ends={ends}")


def check_jacobian(tol=DEFAULT_TOLERANCES["jacobian"], n=200, points=20, h=0.5, seed=0):
    """Analytic Jacobian against central differences at random parameters on design 1."""
    data = generate(1, n, seed)
    model = dgp_model()
    rng = np.random.default_rng(seed + 1)
    th0 = true_parameters(1).as_vector()
    worst = 0.0
    for _ in range(points):
        x = th0 + rng.uniform(-0.3, 0.3, th0.size)
        x[-1] = np.clip(x[-1], 0.1, 0.9)
        J = moment_jacobian(data, model, ParameterPoint.from_vector(x), h)
        fd = np.empty_like(J)
        for k in range(x.size):
            e = np.zeros_like(x)
            e[k] = 1e-6 * max(1.0, abs(x[k]))
            up = smoothed_moments(data, model, ParameterPoint.from_vector(x + e), h).g_bar
            dn = smoothed_moments(data, model, ParameterPoint.from_vector(x - e), h).g_bar
            fd[:, k] = (up - dn) / (2 * e[k])
        scale = np.maximum(np.abs(fd), 1e-3 * np.abs(fd).max())
        worst = max(worst, float(np.max(np.abs(J - fd) / scale)))
    return CheckResult("jacobian", worst <= tol, worst, tol, f"n={n} points={points} h={h}")


def check_sandwich(tol=DEFAULT_TOLERANCES["sandwich"], trials=20, seed=0):
    """With W = Sigma^-1 the sandwich collapses to (G' Sigma^-1 G)^-1 / n."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        k = int(rng.integers(3, 9))
        p = int(rng.integers(1, k + 1))
        A = rng.normal(size=(k, k))
        S = A @ A.T + k * np.eye(k)
        G = rng.normal(size=(k, p))
        n = int(rng.integers(50, 5000))
        W = np.linalg.inv(S)
        lhs = asymptotic_covariance(G, W, S, n)
        rhs = np.linalg.inv(G.T @ W @ G) / n
        worst = max(worst, float(np.max(np.abs(lhs - rhs)) / np.max(np.abs(rhs))))
    return CheckResult("sandwich", worst <= tol, worst, tol, f"trials={trials}")


def lemma2_discrepancy(n=5000, seed=0, shared_rank=False, blocks_only=False):
    """Relative Frobenius distance between the iid covariance of the
    unsmoothed moments at the truth and tau0 (1 - tau0) E[Z Z'].

    ``blocks_only`` restricts both matrices to their within-choice blocks.
    """
    data = generate(1, n, seed, shared_rank=shared_rank)
    th0 = true_parameters(1)
    g = unsmoothed_moments(data, dgp_model(), th0, per_obs=True)
    S = covariance_iid(g).sigma
    T = theoretical_iid_sigma(th0.tau, data)
    if blocks_only:
        mask = np.kron(np.eye(data.m), np.ones((data.d_z, data.d_z)))
        S, T = S * mask, T * mask
    return float(np.linalg.norm(S - T) / np.linalg.norm(T))


def check_lemma2(tol=DEFAULT_TOLERANCES["lemma2"], n=5000, seed=0):
    """Moment covariance at the truth matches tau0 (1 - tau0) E[Z Z'].

    The full stacked formula holds when the choices share their rank draw;
    with independent ranks only the within-choice blocks follow it, so both
    cases are checked on the blocks that the formula covers.
    """
    shared = lemma2_discrepancy(n, seed, shared_rank=True)
    blocks = lemma2_discrepancy(n, seed, shared_rank=False, blocks_only=True)
    worst = max(shared, blocks)
    return CheckResult(
        "lemma2", worst <= tol, worst, tol,
        f"shared-rank full={shared:.4f} independent within-choice={blocks:.4f}",
    )


def run_all(tolerance=None):
    """All checks; ``tolerance`` overrides every default when given."""
    def tol(name):
        return DEFAULT_TOLERANCES[name] if tolerance is None else float(tolerance)

    return [
        check_kernel(tol("kernel")),
        check_jacobian(tol("jacobian")),
        check_sandwich(tol("sandwich")),
        check_lemma2(tol("lemma2")),
    ]
