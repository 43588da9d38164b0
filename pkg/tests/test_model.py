import pickle

import numpy as np
import pytest
from numpy.testing import assert_allclose

from qgmm.errors import DimensionError, DomainError, ParameterError
from qgmm.kernel import smooth_indicator
from qgmm.model import (
    ChoiceBlock,
    FunctionModel,
    LinearQuantileModel,
    ObservationSet,
    ParameterPoint,
    moment_jacobian,
    moment_vector,
    smoothed_moments,
    unsmoothed_moments,
)
from qgmm.simulation import dgp_model, generate, true_parameters


@pytest.fixture(scope="module")
def data():
    return generate(1, 200, 3)


def _loop_moments(data, beta, tau, h):
    # one observation at a time, straight from the definition
    out = np.zeros(data.n_moments)
    for j, b in enumerate(data.choices):
        for i in range(data.n):
            lam = b.Y[i, 0] - beta[0] - b.X[i] @ beta[1:]
            out[j * data.d_z:(j + 1) * data.d_z] += b.Z[i] * (smooth_indicator(-lam / h) - tau)
    return out / data.n


def test_smoothed_moments_match_loop(data):
    beta, tau, h = np.array([0.3, 0.6]), 0.65, 0.8
    ev = smoothed_moments(data, dgp_model(), ParameterPoint(beta, tau), h)
    assert_allclose(ev.g_bar, _loop_moments(data, beta, tau, h), atol=1e-13)
    assert ev.per_obs_moments.shape == (200, 4)
    assert_allclose(ev.per_obs_moments.mean(axis=0), ev.g_bar)
    assert_allclose(moment_vector(data, dgp_model(), ParameterPoint(beta, tau), h), ev.g_bar, atol=1e-14)


def test_tiny_bandwidth_recovers_indicator(data):
    th = true_parameters(1)
    sm = smoothed_moments(data, dgp_model(), th, 1e-12).g_bar
    assert_allclose(sm, unsmoothed_moments(data, dgp_model(), th), atol=1e-12)


def test_unsmoothed_per_obs(data):
    th = true_parameters(1)
    g = unsmoothed_moments(data, dgp_model(), th, per_obs=True)
    assert g.shape == (200, 4)
    assert_allclose(g.mean(axis=0), unsmoothed_moments(data, dgp_model(), th))


def _fd_jacobian(data, model, x, h, eps=1e-6):
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = eps
        up = smoothed_moments(data, model, x + e, h).g_bar
        dn = smoothed_moments(data, model, x - e, h).g_bar
        cols.append((up - dn) / (2 * eps))
    return np.column_stack(cols)


@pytest.mark.parametrize("h", [0.3, 1.0, 3.0])
def test_jacobian_finite_difference(data, h):
    x = np.array([0.4, 0.72, 0.6])
    J = moment_jacobian(data, dgp_model(), x, h)
    assert J.shape == (4, 3)
    assert_allclose(J, _fd_jacobian(data, dgp_model(), x, h), rtol=1e-6, atol=1e-9)
    # tau column is minus the instrument means
    assert_allclose(J[:2, -1], -data.choices[0].Z.mean(axis=0))


def test_function_model_nonlinear(data):
    # Lambda = y - exp(b0) * x^b1, gradients by hand
    def res(y, x, b):
        return y[:, 0] - np.exp(b[0]) * x[:, 0] ** b[1]

    def grad(y, x, b):
        f = np.exp(b[0]) * x[:, 0] ** b[1]
        return np.column_stack([-f, -f * np.log(x[:, 0])])

    model = FunctionModel(res, grad, 2)
    x = np.array([-0.5, 0.8, 0.5])
    J = moment_jacobian(data, model, x, 2.0)
    assert_allclose(J, _fd_jacobian(data, model, x, 2.0), rtol=1e-6, atol=1e-9)
    assert model.names() == ["beta0", "beta1", "tau"]


def test_linear_model_gradient_affine():
    m = LinearQuantileModel(2)
    rng = np.random.default_rng(0)
    y, x = rng.normal(size=(5, 1)), rng.normal(size=(5, 2))
    b = rng.normal(size=3)
    assert_allclose(m.residual(y, x, b), y[:, 0] - b[0] - x @ b[1:])
    assert_allclose(m.gradient(y, x, b), np.column_stack([-np.ones(5), -x]))
    assert pickle.loads(pickle.dumps(m)).d_beta == 3


def test_observation_set_validation():
    z = np.ones((3, 2))
    with pytest.raises(DimensionError):
        ObservationSet([(np.zeros(3), np.zeros(3), z), (np.zeros(4), np.zeros(4), np.ones((4, 2)))])
    with pytest.raises(DomainError):
        ObservationSet([(np.array([0, np.nan, 0]), np.zeros(3), z)])
    with pytest.raises(DimensionError):
        ObservationSet([(np.zeros(3), np.zeros(3), z), (np.zeros(3), np.zeros(3), np.ones((3, 3)))])
    with pytest.raises(DimensionError):
        ObservationSet([])


def test_observation_set_shape_and_take(data):
    assert (data.n, data.m, data.d_z, data.n_moments) == (200, 2, 2, 4)
    assert data.stacked_instruments().shape == (200, 4)
    sub = data.take([0, 0, 5])
    assert sub.n == 3
    assert_allclose(sub.choices[1].Y[:, 0], data.choices[1].Y[[0, 0, 5], 0])


def test_blocks_read_only():
    b = ChoiceBlock(np.zeros(3), np.zeros(3), np.ones((3, 1)))
    with pytest.raises(ValueError):
        b.Y[0, 0] = 1.0


def test_parameter_point_roundtrip():
    p = ParameterPoint([1.0, 2.0], 0.3)
    assert ParameterPoint.from_vector(p.as_vector()) == p
    assert hash(p) == hash(ParameterPoint(np.array([1.0, 2.0]), 0.3))


def test_bad_inputs(data):
    with pytest.raises(ParameterError):
        smoothed_moments(data, dgp_model(), [0, 0, 0.5], 0.0)
    with pytest.raises(DimensionError):
        smoothed_moments(data, dgp_model(), [0, 0, 0, 0.5], 1.0)
