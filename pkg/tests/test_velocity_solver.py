import warnings

import numpy as np
import pytest

from causalqm.fixtures import manufactured_case
from causalqm.units import state_scales
from causalqm.velocity_solver import (ClosedCharacteristicWarning, Gauge, assemble_velocity, condition_W,
                                      continuity_residual, curl_W, dbb_velocity, probability_current, solve_W,
                                      w_equation_residual)
from causalqm._numerics import spectral_derivative
from causalqm.wavepacket import GridSpec, WavefunctionSpec, analytic_free_gaussian

GRID_1D = GridSpec.square(-12.0, 12.0, 256, 1)


def test_dbb_velocity_of_free_gaussian():
    # v = k + (x - k t) t sp^2 / (sigma^2 + sp^2 t^2) with sp = 1 / (2 sigma), m = 1
    sigma, k, t = 1.0, 0.4, 0.7
    st = analytic_free_gaussian(WavefunctionSpec.gaussian(0.0, sigma, k), GRID_1D, 1.0, t)
    v = dbb_velocity(probability_current(st, 1.0), st.density())
    sp = 1 / (2 * sigma)
    x = GRID_1D.axes[0]
    exact = k + (x - k * t) * t * sp ** 2 / (sigma ** 2 + sp ** 2 * t ** 2)
    core = st.density() > 1e-8 * st.density().max()
    assert np.abs(v.v[0] - exact)[core].max() < 1e-8


def test_mass_scales_the_current():
    st = analytic_free_gaussian(WavefunctionSpec.gaussian(0.0, 1.0, 0.4), GRID_1D, 2.0, 0.3)
    j1 = probability_current(st, 1.0).j
    j2 = probability_current(st, 2.0).j
    assert np.allclose(j1, 2 * j2)


def test_one_dimensional_assembly_is_dbb():
    st = analytic_free_gaussian(WavefunctionSpec.gaussian(0.0, 1.0, 0.4), GRID_1D, 1.0, 0.3)
    vb = dbb_velocity(probability_current(st, 1.0), st.density())
    v = assemble_velocity(vb, None, st.density())
    assert np.array_equal(v.v, vb.v) and v.provenance == "assembled"


def test_manufactured_solution_least_squares():
    tensors, rho, W_exact = manufactured_case()
    W = solve_W(tensors, rho, tail_weight=0.0)
    F_rms = np.sqrt(np.mean(tensors.F12[W.region] ** 2))
    assert W.residual.rms / F_rms < 1e-3
    assert W.reduction > 1e3


def test_manufactured_solution_characteristics():
    tensors, rho, _ = manufactured_case()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ClosedCharacteristicWarning)
        W = solve_W(tensors, rho, method="characteristics")
    F_rms = np.sqrt(np.mean(tensors.F12[W.region] ** 2))
    assert W.residual.rms / F_rms < 1e-3
    assert W.reduction > 1e3
    assert W.diagnostics["closed_loops"] > 0
    assert W.diagnostics["loop_relative_max"] < 1e-2
    assert "grid_residual" in W.diagnostics


def test_least_squares_beats_exact_solution_on_grid():
    # centered differences of the exact W* on steep tails leave an O(h^2)
    # residual; the least-squares W minimizes the discrete residual itself
    tensors, rho, W_exact = manufactured_case()
    W = solve_W(tensors, rho, tail_weight=0.0)
    exact = w_equation_residual(tensors, W_exact)[W.region]
    assert W.residual.rms < 1e-2 * np.sqrt(np.mean(exact ** 2))


def test_gauge_function_is_in_the_kernel():
    tensors, rho, _ = manufactured_case()
    g = tensors.g12[tensors.region]
    gauge = Gauge.from_function(lambda s: 1e-3 * np.tanh(s / np.median(np.abs(g))), (g.min(), g.max()))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ClosedCharacteristicWarning)
        W0 = solve_W(tensors, rho, method="characteristics")
        W1 = solve_W(tensors, rho, gauge, method="characteristics")
    diff = (W1.W12 - W0.W12)[W0.region]
    assert np.abs(diff).max() > 1e-4
    assert abs(W1.residual.rms - W0.residual.rms) < 1e-2 * W0.residual.rms


def test_gauge_validation():
    with pytest.raises(ValueError):
        Gauge("tabulated", (0.0, 0.0), (1.0, 2.0))
    with pytest.raises(ValueError):
        Gauge("spline")


def test_unknown_solver_rejected():
    tensors, rho, _ = manufactured_case()
    with pytest.raises(ValueError):
        solve_W(tensors, rho, method="magic")


def test_curl_of_W_is_divergence_free():
    tensors, rho, W_exact = manufactured_case()
    c = curl_W(W_exact, tensors.grid)
    h1, h2 = tensors.grid.spacing
    div = spectral_derivative(c[0], h1, 0) + spectral_derivative(c[1], h2, 1)
    assert np.abs(div).max() < 1e-10 * np.abs(c).max()


def test_factorizable_structure_tensors_vanish(factorizable):
    cfg, states, series = factorizable
    for s in series.slices:
        sc = state_scales(s.state, cfg.masses)
        r = s.tensors.region
        assert np.abs(s.tensors.f12[r]).max() / sc.f_tensor < 1e-5
        assert np.abs(s.tensors.F12[r]).max() / sc.F_tensor < 1e-5
        assert s.W.diagnostics["degenerate"]
        assert np.abs(s.v.v - s.v_b.v).max() < 1e-6


def test_conditioned_W_keeps_continuity(correlated):
    cfg, states, series = correlated
    s = series.slices[10]
    _, base = continuity_residual(s.v_b, s.rho, s.current)
    _, full = continuity_residual(s.v, s.rho, s.current)
    sc = state_scales(s.state, cfg.masses)
    assert base.max / sc.continuity < 1e-8
    assert full.max <= 10 * base.max
    assert "conditioned" in s.W.diagnostics


def test_condition_W_tapers_tails(correlated):
    cfg, states, series = correlated
    s = series.slices[10]
    W = condition_W(s.W, s.tensors, s.rho)
    tail = s.rho < 1e-6 * s.rho.max()
    assert np.abs(W.W12[tail]).max() < 1e-3 * np.abs(W.W12).max()


def test_correlated_gaussian_has_uniform_f12(correlated):
    # every map of a free gaussian is affine, so f12 is a spatial constant up to
    # the second-order map discretization error at the default oversampling
    cfg, states, series = correlated
    s = series.slices[-1]
    core = s.rho > 1e-2 * s.rho.max()
    f = s.tensors.f12[core]
    assert np.ptp(f) < 1e-2 * max(abs(np.median(f)), 1e-12) + 1e-6
