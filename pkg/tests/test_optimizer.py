import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from qgmm.errors import DimensionError, NonFiniteObjectiveError, ParameterError
from qgmm.model import ParameterPoint
from qgmm.optimizer import (
    AnnealConfig,
    Bounds,
    anneal,
    gmm_objective,
    make_objective,
    minimize,
    polish,
    profile_start,
)
from qgmm.simulation import dgp_model, generate, true_parameters
from qgmm.weighting import instrument_weight


def two_well(x):
    # global minimum at -1 (value -0.3), local minimum near +1
    x = x[0]
    return (x * x - 1.0) ** 2 + 0.15 * (x + 1.0) - 0.3


BOX1 = Bounds([-2.0], [2.0])


def test_two_well_escapes_local_minimum():
    cfg = AnnealConfig(max_iterations=4000, seed=1)
    x = anneal(two_well, cfg, np.array([0.9]), BOX1)
    assert x[0] == pytest.approx(-1.0, abs=0.1)
    xp, f = minimize(two_well, cfg, np.array([0.9]), BOX1)
    assert xp[0] == pytest.approx(-1.0, abs=0.02)


@pytest.mark.parametrize("seed", range(5))
def test_two_well_any_seed(seed):
    x, _ = minimize(two_well, AnnealConfig(max_iterations=3000, seed=seed), np.array([0.9]), BOX1)
    assert x[0] < 0


def test_anneal_deterministic():
    cfg = AnnealConfig(max_iterations=500, seed=7)
    a = anneal(two_well, cfg, np.array([1.5]), BOX1)
    b = anneal(two_well, cfg, np.array([1.5]), BOX1)
    assert a.tobytes() == b.tobytes()


@settings(max_examples=25, deadline=None)
@given(st.floats(-2, 2), st.integers(0, 2**31 - 1), st.integers(1, 300))
def test_anneal_never_worse_and_in_bounds(x0, seed, iters):
    cfg = AnnealConfig(max_iterations=iters, seed=seed, restarts=2)
    x = anneal(two_well, cfg, np.array([x0]), BOX1)
    assert BOX1.contains(x)
    assert two_well(x) <= two_well(np.array([x0])) + 1e-15


def test_anneal_returns_point_type():
    f = lambda v: float(np.sum((v - 0.3) ** 2))
    box = Bounds([-1.0, 0.05], [1.0, 0.95])
    out = anneal(f, AnnealConfig(max_iterations=200), ParameterPoint([0.0], 0.5), box)
    assert isinstance(out, ParameterPoint)


def test_polish_quadratic():
    f = lambda v: float((v[0] - 0.2) ** 2 + 10 * (v[1] + 0.4) ** 2)
    box = Bounds([-1, -1], [1, 1])
    x = polish(f, np.array([0.9, 0.9]), box, tol=1e-9, max_evaluations=5000)
    assert_allclose(x, [0.2, -0.4], atol=1e-6)


def test_polish_respects_bounds():
    f = lambda v: float((v[0] - 5.0) ** 2)
    x = polish(f, np.array([0.0]), Bounds([-1.0], [1.0]))
    assert x[0] == pytest.approx(1.0, abs=1e-5)


def test_polish_on_gmm_objective_never_increases():
    data = generate(1, 500, 11)
    model = dgp_model()
    obj = make_objective(data, model, instrument_weight(data), 1.0, scale_by_tau=True)
    box = Bounds.around([0.0, 0.0], 10.0)
    x0 = anneal(obj, AnnealConfig(max_iterations=2000, seed=3), np.array([0.0, 0.0, 0.5]), box)
    x1 = polish(obj, x0, box)
    assert obj(x1) <= obj(x0)


def test_profile_start_finds_basin():
    data = generate(1, 1500, 100)
    model = dgp_model()
    obj = make_objective(data, model, instrument_weight(data), 0.5, scale_by_tau=True)
    box = Bounds.around([0.0, 0.0], 10.0)
    x = profile_start(obj, box, np.array([0.0, 0.0, 0.5]))
    assert obj(x) <= obj(np.array([0.0, 0.0, 0.5]))
    assert abs(x[-1] - 0.7) < 0.1


def test_gmm_objective_quadratic_form():
    data = generate(1, 100, 0)
    th = true_parameters(1)
    W = np.diag([1.0, 2.0, 3.0, 4.0])
    from qgmm.model import moment_vector

    g = moment_vector(data, dgp_model(), th, 0.5)
    assert gmm_objective(data, dgp_model(), th, W, 0.5) == pytest.approx(g @ W @ g)
    with pytest.raises(DimensionError):
        gmm_objective(data, dgp_model(), th, np.eye(3), 0.5)


def test_config_and_bounds_validation():
    with pytest.raises(ParameterError):
        AnnealConfig(cooling_rate=1.0)
    with pytest.raises(ParameterError):
        AnnealConfig(max_iterations=0)
    with pytest.raises(ParameterError):
        Bounds([0.0], [0.0])
    with pytest.raises(ParameterError):
        Bounds([0.0, 0.0], [1.0, 1.0]).check_tau()
    with pytest.raises(ParameterError):
        anneal(two_well, AnnealConfig(), np.array([3.0]), BOX1)
    cfg = AnnealConfig(bounds=([-1.0, 0.1], [1.0, 0.9]))
    assert isinstance(cfg.bounds, Bounds)
    assert cfg.with_(seed=5).seed == 5


def test_nonfinite_objective_raises():
    with pytest.raises(NonFiniteObjectiveError):
        anneal(lambda v: np.nan, AnnealConfig(max_iterations=10), np.array([0.0]), BOX1)
