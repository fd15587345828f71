"""Consolidated invariant suite: marginals, residuals, dBB limit, sign-branch
battery and ensemble checks, each reported as a measured value against a
threshold."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .causal_hamiltonian import (PathDependenceWarning, causal_hamiltonian, dbb_hamiltonian, dbb_limit_check,
                                 hamilton_velocity_check)
from .config import RunConfig
from .export import json_safe as _clean
from .fixtures import manufactured_case
from .marginal_chain import (build_chain, chain_representations, closed_form_residual, dbb_momentum_map,
                             momentum_map, sample_positions, sign_branches, verify_marginals)
from .pipeline import FieldSeries, PipelineOptions, evolve_snapshots, field_series
from .trajectories import (EscapeWarning, compare_dbb, dbb_propagate, equivariance_test,
                           integrator_error, propagate)
from .units import state_scales
from .velocity_solver import ClosedCharacteristicWarning, dbb_velocity, probability_current, solve_W
from .wavepacket import WavefunctionState, build_state, evolve

#: factor applied to every map component by the corruption-injection control
CORRUPTION_FACTOR = 1.1


@dataclass
class Check:
    """``relation`` is "<" (value must stay below threshold) or ">=" """

    name: str
    value: float
    threshold: float
    relation: str = "<"
    detail: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        if not math.isfinite(self.value):
            return False
        return self.value < self.threshold if self.relation == "<" else self.value >= self.threshold

    def as_dict(self) -> dict:
        return _clean({"name": self.name, "value": self.value, "threshold": self.threshold,
                       "relation": self.relation, "pass": self.passed, "detail": self.detail})


@dataclass
class BranchReport:
    signs: tuple[int, ...]
    checks: list[Check]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def as_dict(self) -> dict:
        return {"signs": list(self.signs), "pass": self.passed, "checks": [c.as_dict() for c in self.checks]}


@dataclass
class VerifyReport:
    config_sha256: str
    seed: int
    ndim: int
    branch_mode: str
    corrupted: bool
    branches: list[BranchReport]
    checks: list[Check]

    @property
    def passed(self) -> bool:
        return all(b.passed for b in self.branches) and all(c.passed for c in self.checks)

    def failing(self) -> list[str]:
        out = [f"signs={list(b.signs)}:{c.name}" for b in self.branches for c in b.checks if not c.passed]
        return out + [c.name for c in self.checks if not c.passed]

    def find(self, name: str, signs=None) -> Check:
        pool = self.checks if signs is None else next(b.checks for b in self.branches if b.signs == tuple(signs))
        for c in pool:
            if c.name == name:
                return c
        raise KeyError(name)

    def as_dict(self) -> dict:
        return {"config_sha256": self.config_sha256, "seed": self.seed, "ndim": self.ndim,
                "branch_mode": self.branch_mode, "corrupted": self.corrupted, "pass": self.passed,
                "failing": self.failing(), "branches": [b.as_dict() for b in self.branches],
                "checks": [c.as_dict() for c in self.checks]}


# -- shared orchestration -----------------------------------------------------------

def simulate(config: RunConfig) -> list[WavefunctionState]:
    """Stored snapshots of the configured evolution."""
    return evolve_snapshots(build_state(config.wavefunction, config.grid), config.potential, config.dt,
                            config.steps, config.stride)


def series_for(config: RunConfig, states, signs=None) -> FieldSeries:
    opts = config.options
    if signs is not None:
        opts = PipelineOptions(opts.variant, tuple(signs), opts.oversample, opts.mode, opts.method, opts.gauge,
                               opts.tail_weight, opts.condition)
    return field_series(states, config.masses, opts)


def default_signs(config: RunConfig) -> tuple[int, ...]:
    return tuple(config.options.signs) if config.options.signs else (1,) * config.ndim


def is_factorizable(config: RunConfig) -> bool:
    terms = config.wavefunction.terms
    return config.ndim == 2 and len(terms) == 1 and terms[0].correlation == 0.0


def initial_positions(config: RunConfig, states) -> np.ndarray:
    st = states[0]
    return sample_positions(st.density(), st.grid.axes, config.n_particles, config.seed)


def check_times(config: RunConfig, times: np.ndarray) -> list[float]:
    """Stored times closest to 0, half the horizon and the horizon."""
    out = []
    for t in (0.0, 0.5 * config.horizon, config.horizon):
        k = int(np.argmin(np.abs(times - t)))
        if float(times[k]) not in out:
            out.append(float(times[k]))
    return out


def run_ensembles(config: RunConfig, states, series: FieldSeries, flows=("assembled", "dbb")) -> dict:
    """Paired-seed ensembles for the requested flows.  dBB momenta are grad S."""
    x0 = initial_positions(config, states)
    out = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EscapeWarning)
        if "assembled" in flows:
            out["assembled"] = propagate(x0, series.velocities, series.maps, "assembled", config.seed)
        if "dbb" in flows:
            maps = [dbb_momentum_map(s) for s in states]
            out["dbb"] = dbb_propagate(x0, states, config.masses, maps, config.seed)
    return out


# -- checks ---------------------------------------------------------------------------

def _scaled_max(field_: np.ndarray, mask: np.ndarray, scale: float) -> float:
    return float(np.abs(field_[mask]).max() / scale) if mask.any() else 0.0


def marginal_check(config: RunConfig, state: WavefunctionState, signs, corrupt: bool = False) -> Check:
    chain = build_chain(config.ndim, config.options.variant)
    reps = chain_representations(state, chain, config.options.oversample)
    mmap = momentum_map(reps, signs=signs)
    if corrupt:
        mmap = mmap.scaled(CORRUPTION_FACTOR)
    report = verify_marginals(mmap, reps, n_samples=config.n_particles, seed=config.seed,
                              alpha=config.tolerances["ks_alpha"])
    worst = max(c.statistic / c.critical for c in report.checks)
    return Check("marginals", worst, 1.0, "<", {"t": state.time, "ks": [c.as_dict() for c in report.checks],
                                                  "invalid_mass": report.invalid_mass})


def closed_form_check(config: RunConfig, state: WavefunctionState) -> Check:
    res = {eps: closed_form_residual(state, eps, config.options.oversample)[0] for eps in (1, -1)}
    return Check("closed_form_n1", max(res.values()), config.tolerances["n1_closed_form"], "<",
                 {"eps+1": res[1], "eps-1": res[-1]})


def residual_checks(config: RunConfig, series: FieldSeries) -> list[Check]:
    tol = config.tolerances
    per_time = [series.residuals(k) for k in range(len(series.slices))]
    base = max(r["continuity"]["dbb"]["max"] for r in per_time)
    full = max(r["continuity"]["assembled"]["max"] for r in per_time)
    table = [{"t": r["time"], "dbb": r["continuity"]["dbb"]["max"],
              "assembled": r["continuity"]["assembled"]["max"]} for r in per_time]
    checks = [Check("continuity_baseline", base, tol["continuity_baseline"], "<", {"per_time": table}),
              Check("continuity_assembled", full, tol["continuity_factor"] * max(base, 1e-300), "<",
                    {"factor": tol["continuity_factor"]})]
    if config.ndim == 2 and not is_factorizable(config) and config.options.mode == "cdf":
        solved = [(r["time"], r["w_equation"]["reduction"]) for r, s in zip(per_time, series.slices)
                  if not s.W.diagnostics.get("degenerate")]
        worst = min(v for _, v in solved) if solved else float("nan")
        checks.append(Check("w_reduction", worst, tol["w_reduction"], ">=",
                            {"per_time": [{"t": t, "reduction": v} for t, v in solved]}))
        checks.append(_method_agreement(config, series))
    return checks


def _method_agreement(config: RunConfig, series: FieldSeries) -> Check:
    k = len(series.slices) // 2
    s = series.slices[k]
    sc = state_scales(s.state, series.masses)
    grad_scale = sc.f_tensor / (sc.density * sc.length)
    res = {}
    for method in ("least_squares", "characteristics"):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ClosedCharacteristicWarning)
            W = solve_W(s.tensors, s.rho, config.options.gauge, method, tail_weight=config.options.tail_weight,
                        grad_scale=grad_scale)
        res[method] = W.residual.rms / sc.F_tensor
    hi, lo = max(res.values()), min(res.values())
    ratio = hi / lo if lo > 0 else (1.0 if hi == 0 else float("inf"))
    return Check("w_method_agreement", ratio, config.tolerances["w_method_agreement"], "<",
                 {"t": s.time, "rms_scaled": res})


def manufactured_check(config: RunConfig) -> Check:
    tensors, rho, _ = manufactured_case()
    W = solve_W(tensors, rho, tail_weight=0.0)
    chk = W.region
    rms_F = float(np.sqrt(np.mean(tensors.F12[chk] ** 2)))
    return Check("w_manufactured", W.residual.rms / rms_F, config.tolerances["manufactured"], "<",
                 {"residual_rms": W.residual.rms, "F_rms": rms_F})


def degeneracy_checks(config: RunConfig, series: FieldSeries) -> list[Check]:
    tol = config.tolerances["dbb_degeneracy"]
    vals = {"f12": 0.0, "F12": 0.0, "W12": 0.0}
    dv = 0.0
    for s in series.slices:
        sc = state_scales(s.state, series.masses)
        r = s.tensors.region
        vals["f12"] = max(vals["f12"], _scaled_max(s.tensors.f12, r, sc.f_tensor))
        vals["F12"] = max(vals["F12"], _scaled_max(s.tensors.F12, r, sc.F_tensor))
        W = s.W.W12 if s.W is not None else np.zeros(s.rho.shape)
        vals["W12"] = max(vals["W12"], float(np.abs(W).max() / sc.W_tensor))
        dv = max(dv, float(np.abs(s.v.v - s.v_b.v)[:, s.v.valid].max()))
    checks = [Check(f"degenerate_{k}", v, tol, "<") for k, v in vals.items()]
    checks.append(Check("degenerate_velocity", dv, config.tolerances["dbb_velocity"], "<"))
    return checks


def hamiltonian_checks(config: RunConfig, series: FieldSeries) -> list[Check]:
    tol = config.tolerances
    curl, path, hv, rows = 0.0, 0.0, 0.0, []
    for k, s in enumerate(series.slices):
        if s.W is not None and s.W.diagnostics.get("degenerate") and not is_factorizable(config):
            continue
        sc = state_scales(s.state, series.masses)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", PathDependenceWarning)
            fields, grad, integral = series.hamiltonian(k, sc.F_tensor)
        row = {"t": s.time,
               "path": integral.path_discrepancy.max / sc.energy,
               "velocity": hamilton_velocity_check(fields, s.map, s.v).max / sc.velocity}
        if config.ndim == 2:
            row["curl"] = integral.curl.max / sc.F_tensor
            curl = max(curl, row["curl"])
        path = max(path, row["path"])
        hv = max(hv, row["velocity"])
        rows.append(row)
    checks = [Check("hamiltonian_path", path, tol["path"], "<", {"per_time": rows}),
              Check("hamilton_velocity", hv, tol["hamilton_velocity"], "<")]
    if config.ndim == 2:
        checks.insert(0, Check("hamiltonian_curl", curl, tol["curl"], "<"))
    return checks


def dbb_limit_checks(config: RunConfig, states) -> list[Check]:
    """In dBB mode (p = grad S) the ansatz must give A = 0 and V = U + Q.

    The time derivative of grad S uses two extra evolution steps from the middle
    snapshot, so its error is set by dt rather than the snapshot spacing.
    """
    trio = evolve(states[len(states) // 2], config.potential, config.dt, 2)
    st = trio[0]
    sc = state_scales(st, config.masses)
    maps = [dbb_momentum_map(s) for s in trio]
    v = dbb_velocity(probability_current(st, config.masses), st.density())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PathDependenceWarning)
        fields, _, _ = causal_hamiltonian(maps, v, config.masses, st.density(), 0, None, sc.F_tensor)
    dbb = dbb_hamiltonian(st, config.potential)
    res = dbb_limit_check(fields, dbb)
    core = st.density() > 1e-3 * st.density().max()
    diff = fields.V - (dbb.U + dbb.Q)
    diff = diff - diff[fields.anchor]
    mask = core & fields.valid
    return [Check("dbb_limit_A", res["A"].max / sc.momentum, config.tolerances["dbb_degeneracy"], "<",
                  {"t": st.time}),
            Check("dbb_limit_V", _scaled_max(diff, mask, sc.energy), config.tolerances["dbb_potential"], "<",
                  {"t": st.time, "region": "rho > 1e-3 max", "full_max_scaled": res["V"].max / sc.energy})]


def ensemble_checks(config: RunConfig, states, series: FieldSeries) -> list[Check]:
    tol = config.tolerances
    ens = run_ensembles(config, states, series)
    times = check_times(config, series.times)
    chain = build_chain(config.ndim, config.options.variant)
    positions_only = config.options.mode == "dbb"
    eq = equivariance_test(ens["assembled"], states, chain, times, tol["ks_alpha"], config.options.oversample,
                           positions_only)
    eqb = equivariance_test(ens["dbb"], states, chain, times, tol["ks_alpha"], config.options.oversample, True)

    def worst(rep):
        return max(c.statistic / c.critical for t in rep.times for c in rep.checks[t])

    checks = [Check("equivariance_assembled", worst(eq), 1.0, "<", eq.as_dict()),
              Check("equivariance_dbb_positions", worst(eqb), 1.0, "<", eqb.as_dict()),
              Check("escape_fraction", max(e.escape_fraction for e in ens.values()), tol["escape_fraction"], "<")]
    integ = None
    if (len(series.slices) - 1) % 2 == 0:
        integ = integrator_error(ens["assembled"].positions[0], series.velocities)
    comp = compare_dbb(ens["assembled"], ens["dbb"], integ)
    if config.ndim == 1:
        checks.append(Check("collapse_n1", float(comp.rms[-1]), tol["collapse_n1"], "<", comp.as_dict()))
    elif not is_factorizable(config) and integ is not None:
        checks.append(Check("divergence_n2", float(comp.ratio()[-1]), tol["divergence_factor"], ">=",
                            comp.as_dict()))
    return checks


def branch_report(config: RunConfig, states, signs, corrupt: bool = False,
                  series: FieldSeries | None = None) -> tuple[BranchReport, FieldSeries]:
    checks = [marginal_check(config, states[0], signs, corrupt)]
    if config.ndim == 1:
        checks.append(closed_form_check(config, states[0]))
    series = series or series_for(config, states, signs)
    checks += residual_checks(config, series)
    if is_factorizable(config):
        checks += degeneracy_checks(config, series)
    checks += hamiltonian_checks(config, series)
    return BranchReport(tuple(signs), checks), series


def run_verify(config: RunConfig, branch: str = "index", corrupt: bool = False,
               trajectories: bool = True) -> VerifyReport:
    """Run the invariant suite; ``branch="all"`` gives one sub-report per sign branch."""
    if branch not in ("index", "all"):
        raise ValueError("branch must be 'index' or 'all'")
    states = simulate(config)
    primary = default_signs(config)
    wanted = sign_branches(config.ndim) if branch == "all" else [primary]
    reports, primary_series = [], None
    for signs in wanted:
        rep, ser = branch_report(config, states, signs, corrupt)
        reports.append(rep)
        if tuple(signs) == primary:
            primary_series = ser
    primary_series = primary_series or series_for(config, states, primary)
    checks = []
    if config.ndim == 2:
        checks.append(manufactured_check(config))
    checks += dbb_limit_checks(config, states)
    if trajectories:
        checks += ensemble_checks(config, states, primary_series)
    return VerifyReport(config.sha256(), config.seed, config.ndim, branch, corrupt, reports, checks)
