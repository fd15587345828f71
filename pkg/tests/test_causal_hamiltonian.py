import warnings

import numpy as np
import pytest

from causalqm.causal_hamiltonian import (OutOfGridError, PathDependenceWarning, causal_hamiltonian, dbb_hamiltonian,
                                         evaluate_hamiltonian, hamilton_force_check, hamilton_velocity_check,
                                         hc_gradient, integrate_hc)
from causalqm.marginal_chain import dbb_momentum_map


def _gaussian_gradient_oracle(x, t, sigma=1.0, k=0.5):
    # p = k + a(t)(x - k t), a = sp / sx(t); the Hc gradient is a k - a'(t)(x - k t)
    sp = 0.5 / sigma
    sx = np.sqrt(sigma ** 2 + sp ** 2 * t ** 2)
    dsx = sp ** 2 * t / sx
    return sp / sx * k + sp * dsx * (x - k * t) / sx ** 2


@pytest.mark.parametrize("k", [0, 5, 10])
def test_gradient_matches_free_gaussian(gaussian_1d, k):
    _, _, series = gaussian_1d
    idx, at = series.neighbours(k)
    s = series.slices[k]
    G = hc_gradient([series.slices[i].map for i in idx], s.v, at)
    exact = _gaussian_gradient_oracle(s.state.grid.axes[0], s.time)
    core = G.valid & (s.rho > 1e-4 * s.rho.max())
    # second-order time differences over the stored stride
    assert np.abs(G.G[0] - exact)[core].max() < 1e-3 * np.abs(exact[core]).max()


def test_hamilton_equations_hold(gaussian_1d):
    _, _, series = gaussian_1d
    k = 5
    fields, grad, _ = series.hamiltonian(k)
    s = series.slices[k]
    assert hamilton_velocity_check(fields, s.map, s.v).max < 1e-8
    # momenta of a free gaussian are conserved along the flow, so dp/dt vanishes
    sc = series.scales
    force_scale = sc.momentum / sc.time
    assert np.abs(grad.dpdt[0][fields.valid]).max() < 1e-3 * force_scale
    assert hamilton_force_check(fields, s.map, s.v, grad).max < 1e-3 * force_scale


def test_one_dimensional_integral_is_path_free(gaussian_1d):
    _, _, series = gaussian_1d
    _, _, integral = series.hamiltonian(3)
    assert integral.curl is None and integral.path_discrepancy.max == 0.0
    assert integral.warning is None


def test_evaluate_hamiltonian_matches_fields(gaussian_1d):
    _, _, series = gaussian_1d
    fields, _, _ = series.hamiltonian(4)
    x = fields.grid.axes[0]
    i = int(np.argmax(series.slices[4].rho))
    p = 0.3
    expected = (p - fields.A[0][i]) ** 2 / 2 + fields.V[i]
    assert evaluate_hamiltonian(fields, [x[i]], [p]) == pytest.approx(expected, rel=1e-12)
    with pytest.raises(OutOfGridError):
        evaluate_hamiltonian(fields, [100.0], [0.0])
    with pytest.raises(ValueError):
        evaluate_hamiltonian(fields, [0.0, 1.0], [0.0])


def test_gradient_needs_three_maps(gaussian_1d):
    _, _, series = gaussian_1d
    s = series.slices[1]
    with pytest.raises(ValueError):
        hc_gradient([series.slices[0].map, s.map], s.v)


def test_curl_needs_two_dimensions(gaussian_1d):
    _, _, series = gaussian_1d
    idx, at = series.neighbours(2)
    G = hc_gradient([series.slices[i].map for i in idx], series.slices[2].v, at)
    with pytest.raises(ValueError):
        G.curl()


def test_harmonic_ground_state_has_flat_quantum_energy(harmonic_1d):
    # U + Q equals the ground-state energy omega / 2 everywhere it is resolved
    cfg, states, _ = harmonic_1d
    st = states[len(states) // 2]
    dbb = dbb_hamiltonian(st, cfg.potential)
    core = st.density() > 1e-3 * st.density().max()
    assert np.abs((dbb.U + dbb.Q)[core] - 0.5).max() < 1e-5


def test_dbb_mode_potential_is_quantum_potential(harmonic_1d):
    cfg, states, series = harmonic_1d
    k = len(states) // 2
    maps = [dbb_momentum_map(states[i]) for i in (k - 1, k, k + 1)]
    fields, _, _ = causal_hamiltonian(maps, series.slices[k].v_b, 1.0, states[k].density())
    core = fields.valid & (states[k].density() > 1e-3 * states[k].density().max())
    assert np.abs(fields.A[0][core]).max() < 1e-8
    dbb = dbb_hamiltonian(states[k], cfg.potential)
    diff = (fields.V - dbb.U - dbb.Q)[core]
    # stationary state: grad S = 0 and Hc is flat, so V tracks U + Q up to a constant
    assert np.ptp(diff) < 1e-3


def test_curl_warning_on_inconsistent_gradient(correlated):
    _, _, series = correlated
    k = len(series.slices) - 1
    idx, at = series.neighbours(k)
    s = series.slices[k]
    G = hc_gradient([series.slices[i].map for i in idx], s.v, at, s.tensors.region)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", PathDependenceWarning)
        integral = integrate_hc(G, s.rho, curl_scale=1e-12)
    assert integral.warning is not None
    assert any(issubclass(w.category, PathDependenceWarning) for w in caught)
