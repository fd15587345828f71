import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from causalqm.estimators import MomentumMapEstimator, TrajectoryEstimator, VelocityFieldEstimator


def test_params_round_trip():
    est = VelocityFieldEstimator(masses=2.0, method="characteristics")
    params = est.get_params()
    assert params["masses"] == 2.0 and params["method"] == "characteristics"
    copy = clone(est)
    assert copy.get_params() == params and not hasattr(copy, "series_")
    assert TrajectoryEstimator().set_params(flow="dbb").flow == "dbb"


def test_unfitted_estimators_raise():
    with pytest.raises(NotFittedError):
        MomentumMapEstimator().transform(np.zeros((2, 1)))
    with pytest.raises(NotFittedError):
        VelocityFieldEstimator().predict(np.zeros((2, 2)))
    with pytest.raises(NotFittedError):
        TrajectoryEstimator().predict(np.zeros((2, 1)))


def test_momentum_map_estimator(gaussian_1d):
    _, states, series = gaussian_1d
    est = MomentumMapEstimator().fit(states[-1])
    x = np.array([[-1.0], [0.0], [2.0]])
    assert np.allclose(est.transform(x), series.slices[-1].map.evaluate(x))
    assert est.score(n_samples=20_000) < 1.0
    with pytest.raises(ValueError):
        est.transform(np.zeros((2, 2)))
    dbb = MomentumMapEstimator(mode="dbb").fit(states[0])
    with pytest.raises(ValueError):
        dbb.score()
    with pytest.raises(ValueError):
        MomentumMapEstimator(mode="other").fit(states[0])


def test_velocity_field_estimator_interpolates(gaussian_1d):
    _, states, series = gaussian_1d
    est = VelocityFieldEstimator().fit(states)
    assert np.allclose(est.times_, series.times)
    t0, t1 = series.times[2], series.times[3]
    x = 0.7
    rows = np.array([[t0, x], [0.5 * (t0 + t1), x]])
    v = est.predict(rows)
    v0 = est.predict(rows[:1])[0, 0]
    v1 = est.predict(np.array([[t1, x]]))[0, 0]
    assert v[0, 0] == pytest.approx(v0) and v[1, 0] == pytest.approx(0.5 * (v0 + v1))
    with pytest.raises(ValueError):
        est.predict(np.array([[5.0, 0.0]]))


def test_trajectory_estimator_matches_functional_core(gaussian_1d):
    cfg, states, series = gaussian_1d
    est = TrajectoryEstimator(seed=4).fit(states)
    x0 = est.sample(500)
    assert np.array_equal(x0, est.sample(500, seed=4))
    paths = est.predict(x0)
    assert paths.shape == (len(states), 500, 1)
    assert est.ensemble_.seed == 4 and est.ensemble_.momenta is not None
    dbb = TrajectoryEstimator(flow="dbb", seed=4).fit(states)
    # one-dimensional assembled flow is the dBB flow
    assert np.allclose(dbb.predict(x0), paths)
    with pytest.raises(ValueError):
        TrajectoryEstimator(flow="other").fit(states)
    with pytest.raises(ValueError):
        TrajectoryEstimator().fit(states[:1])
