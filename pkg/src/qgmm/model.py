"""Data containers, structural models and stacked quantile moments.

For choice ``j`` and observation ``i`` the (smoothed) moment is

    Z_ji * (I(-Lambda(Y_ji, X_ji, beta) / h) - tau)

and the moments of all choices are stacked into one vector of length
``m * d_Z``. Letting ``h -> 0`` recovers the indicator ``1{Lambda <= 0}``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError, ParameterError
from .kernel import _derivative_raw, _indicator_fast, _indicator_raw

__all__ = [
    "ChoiceBlock",
    "ObservationSet",
    "StructuralModel",
    "FunctionModel",
    "LinearQuantileModel",
    "ParameterPoint",
    "MomentEvaluation",
    "unsmoothed_moments",
    "smoothed_moments",
    "moment_vector",
    "moment_jacobian",
    "residuals",
]


def _matrix(a, name):
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 1-D or 2-D, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class ChoiceBlock:
    """Outcomes, regressors and instruments for one choice variable.

    ``Z`` carries the constant instrument in its first column by convention;
    nothing here enforces that.
    """

    Y: np.ndarray
    X: np.ndarray
    Z: np.ndarray

    def __post_init__(self):
        for name in ("Y", "X", "Z"):
            arr = _matrix(getattr(self, name), name)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self):
        return self.Y.shape[0]


class ObservationSet:
    """Stacked per-choice samples sharing a common observation index.

    Parameters
    ----------
    choices : sequence of ChoiceBlock or (Y, X, Z) tuples
        One block per choice variable. All blocks must have the same number
        of rows and only finite entries.
    """

    def __init__(self, choices):
        blocks = []
        for j, c in enumerate(choices):
            if not isinstance(c, ChoiceBlock):
                c = ChoiceBlock(*c)
            blocks.append(c)
        if not blocks:
            raise DimensionError("an ObservationSet needs at least one choice block")
        n = blocks[0].n
        for j, b in enumerate(blocks):
            for name in ("Y", "X", "Z"):
                arr = getattr(b, name)
                if arr.shape[0] != n:
                    raise DimensionError(
                        f"choice {j}: {name} has {arr.shape[0]} rows, expected {n}"
                    )
                if not np.all(np.isfinite(arr)):
                    raise DomainError(f"choice {j}: {name} contains non-finite entries")
            if b.Z.shape[1] != blocks[0].Z.shape[1]:
                raise DimensionError(
                    f"choice {j}: {b.Z.shape[1]} instruments, expected {blocks[0].Z.shape[1]}"
                )
        self.choices = tuple(blocks)
        self.n = n

    @property
    def m(self):
        return len(self.choices)

    @property
    def d_z(self):
        return self.choices[0].Z.shape[1]

    @property
    def n_moments(self):
        return self.m * self.d_z

    def stacked_instruments(self):
        """(n, m*d_Z) matrix whose row i is (Z_1i', ..., Z_mi')'."""
        return np.hstack([b.Z for b in self.choices])

    def take(self, index):
        """Rows ``index`` of every block jointly (used by the bootstrap)."""
        index = np.asarray(index)
        return ObservationSet(
            [ChoiceBlock(b.Y[index], b.X[index], b.Z[index]) for b in self.choices]
        )

    def __repr__(self):
        return f"ObservationSet(n={self.n}, m={self.m}, d_z={self.d_z})"


class StructuralModel:
    """The known structural function Lambda(y, x, beta) and its beta-gradient.

    Subclasses implement :meth:`residual` and :meth:`gradient` vectorised
    over rows: ``y`` is (n, d_Y), ``x`` is (n, d_X), and the methods return
    arrays of shape (n,) and (n, d_beta) respectively. Models are defined at
    module level so they pickle into worker processes.
    """

    d_beta = None
    param_names = None

    def residual(self, y, x, beta):
        raise NotImplementedError

    def gradient(self, y, x, beta):
        raise NotImplementedError

    def beta_start(self, data):
        """Centre of the default search box for beta."""
        return np.zeros(self.d_beta)

    def names(self):
        if self.param_names is not None:
            return list(self.param_names) + ["tau"]
        return [f"beta{k}" for k in range(self.d_beta)] + ["tau"]


class FunctionModel(StructuralModel):
    """Wrap a pair of plain callables as a :class:`StructuralModel`."""

    def __init__(self, residual, gradient, d_beta, param_names=None):
        self._residual = residual
        self._gradient = gradient
        self.d_beta = int(d_beta)
        self.param_names = param_names

    def residual(self, y, x, beta):
        return np.asarray(self._residual(y, x, beta), dtype=float).reshape(-1)

    def gradient(self, y, x, beta):
        g = np.asarray(self._gradient(y, x, beta), dtype=float)
        return g.reshape(g.shape[0], self.d_beta)


class LinearQuantileModel(StructuralModel):
    """Lambda = y - b0 - x @ b[1:], the linear IV quantile regression index.

    Parameters
    ----------
    d_x : int
        Number of regressor columns; ``d_beta = d_x + 1`` with the intercept
        first.
    """

    def __init__(self, d_x=1, param_names=None):
        self.d_x = int(d_x)
        self.d_beta = self.d_x + 1
        if param_names is None:
            param_names = ["beta0"] + [f"beta{k + 1}" for k in range(self.d_x)]
        self.param_names = list(param_names)

    def residual(self, y, x, beta):
        return y[:, 0] - beta[0] - x @ beta[1:]

    def gradient(self, y, x, beta):
        return np.hstack([-np.ones((y.shape[0], 1)), -x])

    def __reduce__(self):
        return (type(self), (self.d_x, self.param_names))

    def __repr__(self):
        return f"LinearQuantileModel(d_x={self.d_x})"


@dataclass(frozen=True)
class ParameterPoint:
    """theta = (beta, tau)."""

    beta: np.ndarray
    tau: float

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float)).copy()
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "tau", float(self.tau))

    @classmethod
    def from_vector(cls, theta):
        theta = np.asarray(theta, dtype=float)
        return cls(theta[:-1], theta[-1])

    def as_vector(self):
        return np.append(self.beta, self.tau)

    def __eq__(self, other):
        if not isinstance(other, ParameterPoint):
            return NotImplemented
        return np.array_equal(self.beta, other.beta) and self.tau == other.tau

    def __hash__(self):
        return hash((self.beta.tobytes(), self.tau))


@dataclass
class MomentEvaluation:
    """Stacked moment vector, per-observation moments and (optionally) Jacobian."""

    g_bar: np.ndarray
    per_obs_moments: np.ndarray
    G_hat: np.ndarray = field(default=None)


def _check_h(h):
    if not (np.isfinite(h) and h > 0):
        raise ParameterError(f"bandwidth must be positive, got {h}")


def _as_point(theta):
    if isinstance(theta, ParameterPoint):
        return theta
    return ParameterPoint.from_vector(theta)


def residuals(data, model, beta):
    """List of Lambda vectors, one (n,) array per choice."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (model.d_beta,):
        raise DimensionError(f"beta has shape {beta.shape}, model expects ({model.d_beta},)")
    out = []
    for j, b in enumerate(data.choices):
        lam = model.residual(b.Y, b.X, beta)
        if lam.shape != (data.n,):
            raise DimensionError(f"choice {j}: residual has shape {lam.shape}, expected ({data.n},)")
        out.append(lam)
    return out


def unsmoothed_moments(data, model, theta, per_obs=False):
    """Sample average of Z_j * (1{Lambda_j <= 0} - tau), stacked over choices.

    With ``per_obs`` the (n, m * d_z) matrix of per-observation moments is
    returned instead of its column means.
    """
    theta = _as_point(theta)
    parts = []
    for b, lam in zip(data.choices, residuals(data, model, theta.beta)):
        parts.append(b.Z * ((lam <= 0).astype(float) - theta.tau)[:, None])
    g = np.hstack(parts)
    return g if per_obs else g.mean(axis=0)


def moment_vector(data, model, theta, h):
    """Smoothed stacked moment vector only."""
    theta = _as_point(theta)
    residuals(data, model, theta.beta)  # shape checks
    return _moment_vector_raw(data, model, theta.beta, theta.tau, h)


def _moment_vector_raw(data, model, beta, tau, h):
    # optimiser hot path: no validation, no ParameterPoint construction
    parts = [
        b.Z.T @ (_indicator_fast(model.residual(b.Y, b.X, beta) * (-1.0 / h)) - tau)
        for b in data.choices
    ]
    return np.concatenate(parts) / data.n


def smoothed_moments(data, model, theta, h, jacobian=False):
    """Smoothed stacked moments with per-observation contributions.

    Parameters
    ----------
    data : ObservationSet
    model : StructuralModel
    theta : ParameterPoint or array_like
        ``(beta..., tau)``.
    h : float
        Bandwidth, strictly positive.
    jacobian : bool, default False
        Also fill ``G_hat`` via :func:`moment_jacobian`.

    Returns
    -------
    MomentEvaluation
    """
    _check_h(h)
    theta = _as_point(theta)
    blocks = []
    for b, lam in zip(data.choices, residuals(data, model, theta.beta)):
        lam_over_h = -lam / h
        if not np.all(np.isfinite(lam_over_h)):
            raise DomainError("non-finite structural residual")
        blocks.append(b.Z * (_indicator_raw(lam_over_h) - theta.tau)[:, None])
    per_obs = np.hstack(blocks)
    ev = MomentEvaluation(g_bar=per_obs.mean(axis=0), per_obs_moments=per_obs)
    if jacobian:
        ev.G_hat = moment_jacobian(data, model, theta, h)
    return ev


def moment_jacobian(data, model, theta, h):
    """Derivative of the smoothed moment vector with respect to (beta, tau).

    Returns an (m*d_Z, d_beta + 1) matrix. The beta block of choice j is
    ``-(1/(n h)) sum_i I'(-Lambda_ji/h) Z_ji dLambda_ji/dbeta'`` and the last
    column is the negated instrument mean.
    """
    _check_h(h)
    theta = _as_point(theta)
    rows = []
    n = data.n
    for j, b in enumerate(data.choices):
        lam = model.residual(b.Y, b.X, theta.beta)
        grad = model.gradient(b.Y, b.X, theta.beta)
        if grad.shape != (n, model.d_beta):
            raise DimensionError(
                f"choice {j}: gradient has shape {grad.shape}, expected ({n}, {model.d_beta})"
            )
        weight = _derivative_raw(-lam / h)
        beta_block = -(b.Z * weight[:, None]).T @ grad / (n * h)
        tau_col = -b.Z.mean(axis=0)[:, None]
        rows.append(np.hstack([beta_block, tau_col]))
    return np.vstack(rows)
