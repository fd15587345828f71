import warnings

import numpy as np
import pytest

from causalqm.marginal_chain import build_chain, sample_positions
from causalqm.trajectories import (EscapeWarning, NonFiniteVelocityError, compare_dbb, dbb_propagate,
                                   equivariance_test, integrator_error, propagate)
from causalqm.velocity_solver import VelocityField


def _bohm_oracle(x0, t, sigma=1.0, k=0.5):
    # dBB paths of a free gaussian: x(t) - k t = x0 sigma_x(t) / sigma
    sp = 0.5 / sigma
    return k * t + x0 * np.sqrt(sigma ** 2 + sp ** 2 * t ** 2) / sigma


def test_dbb_paths_of_free_gaussian(gaussian_1d):
    _, states, series = gaussian_1d
    x0 = np.linspace(-2.0, 2.0, 21)[:, None]
    ens = propagate(x0, series.dbb_velocities, provenance="dbb")
    exact = _bohm_oracle(x0[:, 0], ens.times[:, None])
    # linear-in-time field interpolation over the stored stride is second order
    assert np.abs(ens.positions[..., 0] - exact).max() < 5e-4
    assert not ens.escaped.any() and ens.provenance == "dbb"


def test_dbb_propagate_from_states(gaussian_1d):
    cfg, states, series = gaussian_1d
    x0 = np.array([[-1.0], [0.0], [1.5]])
    a = dbb_propagate(x0, states, cfg.masses, seed=3)
    b = propagate(x0, series.dbb_velocities, seed=3)
    assert np.allclose(a.positions, b.positions)


def test_momenta_follow_the_map(gaussian_1d):
    _, _, series = gaussian_1d
    x0 = np.array([[0.3], [-0.7]])
    ens = propagate(x0, series.velocities, series.maps)
    for k, m in enumerate(series.maps):
        assert np.allclose(ens.momenta[k], m.evaluate(ens.positions[k]))


def test_escaped_particles_are_frozen_and_flagged(gaussian_1d):
    _, _, series = gaussian_1d
    grid = series.velocities[0].grid
    x0 = np.array([[0.0], [grid.axes[0][-1] - 1e-3], [50.0]])
    fast = [VelocityField(grid, np.full_like(v.v, 2.0), v.valid, v.time, v.provenance) for v in series.velocities]
    with pytest.warns(EscapeWarning):
        ens = propagate(x0, fast)
    assert ens.escaped[0].tolist() == [False, False, True]
    assert ens.escaped[-1, 1] and ens.escaped[-1, 2]
    assert np.all(ens.positions[:, 2, 0] == grid.axes[0][-1])
    assert ens.escape_fraction == pytest.approx(2 / 3)


def test_non_finite_velocity_is_rejected(gaussian_1d):
    _, _, series = gaussian_1d
    bad = list(series.velocities)
    v = bad[3]
    broken = v.v.copy()
    broken[0, 10] = np.nan
    bad[3] = VelocityField(v.grid, broken, v.valid, v.time, v.provenance)
    with pytest.raises(NonFiniteVelocityError):
        propagate(np.zeros((1, 1)), bad)


def test_snapshot_spacing_must_be_uniform(gaussian_1d):
    _, _, series = gaussian_1d
    v = series.velocities
    with pytest.raises(ValueError):
        propagate(np.zeros((1, 1)), [v[0], v[1], v[3]])
    with pytest.raises(ValueError):
        propagate(np.zeros((1, 1)), v[:1])


def test_integrator_error_estimate(gaussian_1d):
    _, states, series = gaussian_1d
    x0 = sample_positions(states[0].density(), states[0].grid.axes, 2000, 1)
    times, err = integrator_error(x0, series.velocities)
    assert err[0] == 0.0 and np.all(err < 1e-4)
    assert np.all(np.diff(err) > 0)
    with pytest.raises(ValueError):
        integrator_error(x0, series.velocities[:4])


def test_equivariance_of_assembled_flow(gaussian_1d):
    cfg, states, series = gaussian_1d
    x0 = sample_positions(states[0].density(), states[0].grid.axes, cfg.n_particles, cfg.seed)
    ens = propagate(x0, series.velocities, series.maps, seed=cfg.seed)
    report = equivariance_test(ens, states, build_chain(1), [0.0, 0.5, 1.0])
    assert report.passed
    assert set(report.as_dict()) == {"pass", "times"}


def test_equivariance_detects_a_wrong_flow(gaussian_1d):
    cfg, states, series = gaussian_1d
    x0 = sample_positions(states[0].density(), states[0].grid.axes, cfg.n_particles, cfg.seed)
    frozen = [VelocityField(v.grid, np.zeros_like(v.v), v.valid, v.time, v.provenance) for v in series.velocities]
    ens = propagate(x0, frozen, series.maps)
    report = equivariance_test(ens, states, times=[1.0], positions_only=True)
    assert not report.passed


def test_compare_requires_paired_seeds(gaussian_1d):
    _, states, series = gaussian_1d
    x0 = np.array([[0.1], [0.4]])
    a = propagate(x0, series.velocities, seed=1)
    b = propagate(x0, series.dbb_velocities, seed=2)
    with pytest.raises(ValueError):
        compare_dbb(a, b)
    b.seed = 1
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        report = compare_dbb(a, b, integrator_error(x0, series.velocities))
    # in one dimension the assembled flow is the dBB flow
    assert report.finite and report.rms.max() == 0.0
    assert report.ratio().max() == 0.0
