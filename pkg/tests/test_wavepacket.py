import numpy as np
import pytest

from causalqm.wavepacket import (AliasingError, GridSpec, GridTooSmallError, PotentialSpec, WavefunctionSpec,
                                 analytic_free_gaussian, build_state, evolve, from_mixed_representation,
                                 polar_decompose, to_mixed_representation)

GRID_1D = GridSpec.square(-12.0, 12.0, 256, 1)
GRID_2D = GridSpec.square(-8.0, 8.0, 128, 2)


def test_grid_rejects_non_power_of_two():
    with pytest.raises(ValueError):
        GridSpec.square(-1.0, 1.0, 100, 1)


def test_grid_axes_and_spacing():
    g = GridSpec((-1.0, -2.0), (1.0, 2.0), (64, 128))
    assert g.shape == (64, 128)
    assert g.spacing == pytest.approx((2 / 64, 4 / 128))
    assert g.axes[0][0] == -1.0 and g.axes[1][-1] == pytest.approx(2.0 - 4 / 128)


def test_spec_validation():
    with pytest.raises(ValueError):
        WavefunctionSpec.gaussian(0.0, -1.0)
    with pytest.raises(ValueError):
        WavefunctionSpec.gaussian((0, 0), (1, 1), (0, 0), correlation=1.0, ndim=2)


def test_state_must_fit_the_grid():
    spec = WavefunctionSpec.gaussian(10.0, 1.0)
    with pytest.raises(GridTooSmallError):
        build_state(spec, GRID_1D)


def test_aliasing_guard():
    st = build_state(WavefunctionSpec.gaussian((0, 0), (1, 1), (0, 0), 0.0, 2), GRID_2D)
    with pytest.raises(AliasingError):
        evolve(st, PotentialSpec("free", (1.0,)), 0.005, 1)


def test_ten_steps_give_eleven_unit_norm_snapshots():
    st = build_state(WavefunctionSpec.gaussian(0.0, 1.0, 0.5), GRID_1D)
    snaps = evolve(st, PotentialSpec(), 0.005, 10)
    assert len(snaps) == 11
    assert snaps[-1].time == pytest.approx(0.05)
    for s in snaps:
        assert abs(s.norm() - 1) < 1e-8


@pytest.mark.parametrize("ndim,corr", [(1, 0.0), (2, 0.5)])
def test_free_evolution_matches_closed_form(ndim, corr):
    grid = GRID_1D if ndim == 1 else GridSpec.square(-12.0, 12.0, 256, 2)
    spec = WavefunctionSpec.gaussian(0.0, 1.0, 0.3, corr, ndim)
    dt = 0.005 if ndim == 1 else 0.002
    steps = int(round(0.5 / dt))
    final = evolve(build_state(spec, grid), PotentialSpec("free", (1.0,)), dt, steps)[-1]
    exact = analytic_free_gaussian(spec, grid, 1.0, final.time)
    overlap = abs(np.vdot(exact.amplitudes, final.amplitudes)) * grid.cell_volume
    assert overlap == pytest.approx(1.0, abs=1e-8)
    assert np.abs(final.density() - exact.density()).max() < 1e-7


def test_harmonic_ground_state_is_stationary_to_second_order():
    # the Strang splitting error in the stationary density scales as dt^2
    pot = PotentialSpec("harmonic", (1.0,), omega=(1.0,))
    st = build_state(WavefunctionSpec.gaussian(0.0, np.sqrt(0.5)), GRID_1D)
    errs = []
    for dt in (0.005, 0.0025):
        final = evolve(st, pot, dt, int(round(1.0 / dt)))[-1]
        errs.append(np.abs(final.density() - st.density()).max())
    assert errs[1] < 1e-5
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_momentum_density_of_gaussian():
    # |phi(p)|^2 is a normal density with mean k and width 1 / (2 sigma)
    sigma, k = 0.8, 0.7
    st = build_state(WavefunctionSpec.gaussian(0.0, sigma, k), GRID_1D)
    mixed = to_mixed_representation(st, "p", oversample=4)
    p = mixed.axes[0]
    sp = 1 / (2 * sigma)
    exact = np.exp(-(p - k) ** 2 / (2 * sp ** 2)) / np.sqrt(2 * np.pi * sp ** 2)
    assert np.abs(np.abs(mixed.amplitudes) ** 2 - exact).max() < 1e-10


def test_mixed_representation_round_trip():
    st = build_state(WavefunctionSpec.gaussian((0.5, -0.5), (1.0, 0.8), (0.2, 0.0), 0.3, 2), GRID_2D)
    for rep in ("px", "xp", "pp"):
        mixed = to_mixed_representation(st, rep)
        assert mixed.norm() == pytest.approx(1.0, abs=1e-10)
        back = from_mixed_representation(mixed, GRID_2D)
        assert np.abs(back.amplitudes - st.amplitudes).max() < 1e-12


def test_polar_gradient_of_plane_wave_gaussian():
    st = build_state(WavefunctionSpec.gaussian(0.0, 1.0, 0.9), GRID_1D)
    polar = polar_decompose(st)
    core = st.density() > 1e-6 * st.density().max()
    assert np.abs(polar.grad_s[0][core] - 0.9).max() < 1e-9
