"""scikit-learn style wrappers over the functional core.

``fit`` takes wavefunction states in place of a design matrix; ``transform`` and
``predict`` take particle coordinates.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._numerics import interp_grid
from ._validation import check_masses, check_points, check_state, check_states
from .marginal_chain import (build_chain, chain_representations, dbb_momentum_map, momentum_map,
                             sample_positions, verify_marginals)
from .pipeline import PipelineOptions, field_series
from .trajectories import dbb_propagate, propagate


class MomentumMapEstimator(TransformerMixin, BaseEstimator):
    """Fit the momentum map of one state; ``transform`` maps positions to momenta."""

    def __init__(self, variant=1, signs=None, oversample=None, mode="cdf"):
        self.variant = variant
        self.signs = signs
        self.oversample = oversample
        self.mode = mode

    def fit(self, X, y=None):
        state = check_state(X)
        if self.mode == "dbb":
            self.map_ = dbb_momentum_map(state)
            self.representations_ = None
        elif self.mode == "cdf":
            chain = build_chain(state.grid.ndim, self.variant)
            self.representations_ = chain_representations(state, chain, self.oversample)
            self.map_ = momentum_map(self.representations_, signs=self.signs)
        else:
            raise ValueError(f"mode must be 'cdf' or 'dbb', got {self.mode!r}")
        self.n_features_in_ = state.grid.ndim
        return self

    def transform(self, X):
        check_is_fitted(self, "map_")
        return self.map_.evaluate(check_points(X, self.n_features_in_))

    def score(self, X=None, y=None, n_samples=100_000, seed=0, alpha=0.01):
        """Worst KS statistic over critical value for the fitted map (below 1 passes)."""
        check_is_fitted(self, "map_")
        if self.representations_ is None:
            raise ValueError("marginal scoring needs a chain map (mode='cdf')")
        report = verify_marginals(self.map_, self.representations_, n_samples=n_samples, seed=seed, alpha=alpha)
        return max(c.statistic / c.critical for c in report.checks)


class VelocityFieldEstimator(BaseEstimator):
    """Fit assembled velocity fields on equally spaced states.

    ``predict`` takes rows ``(t, x1[, x2])`` and interpolates linearly in time
    and multilinearly in space.
    """

    def __init__(self, masses=1.0, variant=1, signs=None, oversample=None, mode="cdf",
                 method="least_squares", tail_weight=1.0, condition=True, flow="assembled"):
        self.masses = masses
        self.variant = variant
        self.signs = signs
        self.oversample = oversample
        self.mode = mode
        self.method = method
        self.tail_weight = tail_weight
        self.condition = condition
        self.flow = flow

    def _options(self) -> PipelineOptions:
        signs = tuple(self.signs) if self.signs is not None else None
        return PipelineOptions(self.variant, signs, self.oversample, self.mode, self.method,
                               tail_weight=self.tail_weight, condition=self.condition)

    def fit(self, X, y=None):
        if self.flow not in ("assembled", "dbb"):
            raise ValueError(f"flow must be 'assembled' or 'dbb', got {self.flow!r}")
        states = check_states(X, minimum=1)
        n = states[0].grid.ndim
        self.series_ = field_series(states, check_masses(self.masses, n), self._options())
        self.times_ = self.series_.times
        self.n_features_in_ = n + 1
        return self

    @property
    def velocities_(self):
        check_is_fitted(self, "series_")
        return self.series_.velocities if self.flow == "assembled" else self.series_.dbb_velocities

    def predict(self, X):
        check_is_fitted(self, "series_")
        X = check_points(X, self.n_features_in_)
        t, x = X[:, 0], X[:, 1:]
        times = self.times_
        if np.any(t < times[0] - 1e-12) or np.any(t > times[-1] + 1e-12):
            raise ValueError(f"times must lie in [{times[0]}, {times[-1]}]")
        fields = self.velocities_
        grid = fields[0].grid
        if len(times) == 1:
            return np.stack([interp_grid(c, grid.axes, x) for c in fields[0].v], axis=1)
        k = np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2)
        w = ((t - times[k]) / (times[k + 1] - times[k]))[:, None]
        out = np.empty_like(x)
        for j in np.unique(k):
            sel = k == j
            a = np.stack([interp_grid(c, grid.axes, x[sel]) for c in fields[j].v], axis=1)
            b = np.stack([interp_grid(c, grid.axes, x[sel]) for c in fields[j + 1].v], axis=1)
            out[sel] = (1 - w[sel]) * a + w[sel] * b
        return out


class TrajectoryEstimator(BaseEstimator):
    """Fit velocity fields on states, then ``predict`` trajectories from initial positions.

    ``predict`` returns positions of shape (T, N, n); the full ensemble, with
    momenta and escape flags, is kept in ``ensemble_``.
    """

    def __init__(self, masses=1.0, flow="assembled", variant=1, signs=None, oversample=None, mode="cdf",
                 method="least_squares", tail_weight=1.0, condition=True, seed=None):
        self.masses = masses
        self.flow = flow
        self.variant = variant
        self.signs = signs
        self.oversample = oversample
        self.mode = mode
        self.method = method
        self.tail_weight = tail_weight
        self.condition = condition
        self.seed = seed

    def fit(self, X, y=None):
        if self.flow not in ("assembled", "dbb"):
            raise ValueError(f"flow must be 'assembled' or 'dbb', got {self.flow!r}")
        self.states_ = check_states(X, minimum=2)
        n = self.states_[0].grid.ndim
        self.masses_ = check_masses(self.masses, n)
        if self.flow == "assembled":
            self.field_estimator_ = VelocityFieldEstimator(
                self.masses, self.variant, self.signs, self.oversample, self.mode, self.method,
                self.tail_weight, self.condition).fit(self.states_)
        self.n_features_in_ = n
        return self

    def sample(self, n_samples: int, seed: int | None = None) -> np.ndarray:
        """Positions drawn from the density of the first fitted state."""
        check_is_fitted(self, "states_")
        st = self.states_[0]
        seed = self.seed if seed is None else seed
        return sample_positions(st.density(), st.grid.axes, n_samples, 0 if seed is None else seed)

    def predict(self, X):
        check_is_fitted(self, "states_")
        x0 = check_points(X, self.n_features_in_)
        if self.flow == "assembled":
            series = self.field_estimator_.series_
            self.ensemble_ = propagate(x0, series.velocities, series.maps, "assembled", self.seed)
        else:
            self.ensemble_ = dbb_propagate(x0, self.states_, self.masses_, None, self.seed)
        return self.ensemble_.positions
