"""Command-line front end: ``causalqm {evolve,fields,trajectories,verify} --config run.toml``.

Exit codes: 0 pass, 1 verification failure, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from contextlib import contextmanager

import numpy as np

from .causal_hamiltonian import PathDependenceWarning
from .config import ConfigError, RunConfig, load_config
from .export import write_ensemble, write_field, write_json, write_wavefunction
from .marginal_chain import InvalidMapError, build_chain
from .trajectories import NonFiniteVelocityError, compare_dbb, equivariance_test, integrator_error
from .verify import check_times, run_ensembles, run_verify, series_for, simulate
from .wavepacket import AliasingError, GridTooSmallError, NonFiniteAmplitudeError

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("causalqm")


class StageError(RuntimeError):
    """A numerical failure tagged with the pipeline stage it came from."""

    def __init__(self, stage: str, error: Exception):
        super().__init__(f"stage {stage}: {type(error).__name__}: {error}")
        self.stage = stage
        self.error = error


_NUMERIC = (NonFiniteAmplitudeError, NonFiniteVelocityError, InvalidMapError, FloatingPointError,
            np.linalg.LinAlgError)


@contextmanager
def stage(name: str):
    try:
        yield
    except _NUMERIC as exc:
        raise StageError(name, exc) from exc


def _time_indices(times: np.ndarray, config: RunConfig, which: str) -> list[int]:
    if which == "all":
        return list(range(len(times)))
    return [int(np.argmin(np.abs(times - t))) for t in check_times(config, times)]


def cmd_evolve(config: RunConfig, args) -> int:
    sha, seed = config.sha256(), config.seed
    with stage("evolve"):
        states = simulate(config)
    out = config.output_dir / "evolve"
    norms = []
    for k, st in enumerate(states):
        write_wavefunction(out / f"psi_{k:04d}.csv", st.grid, st.amplitudes, sha, seed)
        norms.append({"index": k, "t": st.time, "norm": st.norm()})
        log.info("t=%.6g norm=%.12f", st.time, st.norm())
    write_json(out / "evolve_report.json", {"snapshots": norms}, sha, seed)
    return EXIT_PASS


def cmd_fields(config: RunConfig, args) -> int:
    sha, seed = config.sha256(), config.seed
    with stage("evolve"):
        states = simulate(config)
    with stage("fields"):
        series = series_for(config, states)
    out = config.output_dir / "fields"
    grid = config.grid
    n = config.ndim
    summary = {"times": [], "scales": series.scales.as_dict()}
    for k in _time_indices(series.times, config, args.times):
        s = series.slices[k]
        tag = f"{k:04d}"
        for d in range(n):
            write_field(out / f"map_p{d + 1}_{tag}.csv", grid, s.map.components[d], sha, seed)
            write_field(out / f"velocity_v{d + 1}_{tag}.csv", grid, s.v.v[d], sha, seed)
            write_field(out / f"dbb_velocity_v{d + 1}_{tag}.csv", grid, s.v_b.v[d], sha, seed)
        if s.W is not None:
            write_field(out / f"W12_{tag}.csv", grid, s.W.W12, sha, seed)
        with stage("hamiltonian"), warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", PathDependenceWarning)
            fields, _, integral = series.hamiltonian(k)
        write_field(out / f"Hc_{tag}.csv", grid, np.where(fields.valid, fields.Hc, 0.0), sha, seed)
        write_field(out / f"V_{tag}.csv", grid, np.where(fields.valid, fields.V, 0.0), sha, seed)
        for d in range(n):
            write_field(out / f"A{d + 1}_{tag}.csv", grid, np.where(fields.valid, fields.A[d], 0.0), sha, seed)
        entry = series.residuals(k)
        entry.update({"index": k, "hc_anchor": list(fields.anchor),
                      "hc_path_discrepancy": integral.path_discrepancy.as_dict(),
                      "warnings": [str(w.message) for w in caught]})
        if integral.curl is not None:
            entry["hc_curl"] = integral.curl.as_dict()
        summary["times"].append(entry)
    write_json(out / "residual_summary.json", summary, sha, seed)
    return EXIT_PASS


def cmd_trajectories(config: RunConfig, args) -> int:
    sha, seed = config.sha256(), config.seed
    with stage("evolve"):
        states = simulate(config)
    with stage("fields"):
        series = series_for(config, states)
    flows = ("assembled", "dbb") if args.compare else (args.flow,)
    with stage("trajectories"):
        ens = run_ensembles(config, states, series, flows)
    out = config.output_dir / "trajectories"
    idx = _time_indices(series.times, config, args.times)
    for name, e in ens.items():
        write_ensemble(out / f"ensemble_{name}.csv", e, sha, seed, idx)
    chain = build_chain(config.ndim, config.options.variant)
    times = check_times(config, series.times)
    report = {"n_particles": config.n_particles, "flows": {}}
    ok = True
    with stage("equivariance"):
        for name, e in ens.items():
            positions_only = name == "dbb" or config.options.mode == "dbb"
            eq = equivariance_test(e, states, chain, times, config.tolerances["ks_alpha"],
                                   config.options.oversample, positions_only)
            report["flows"][name] = {"provenance": e.provenance, "escape_fraction": e.escape_fraction,
                                     "positions_only": positions_only, **eq.as_dict()}
            ok &= eq.passed
    write_json(out / "equivariance_report.json", report, sha, seed)
    if args.compare:
        with stage("comparison"):
            integ = None
            if (len(series.slices) - 1) % 2 == 0:
                integ = integrator_error(ens["assembled"].positions[0], series.velocities)
            comp = compare_dbb(ens["assembled"], ens["dbb"], integ)
        payload = comp.as_dict()
        if integ is not None:
            payload["ratio"] = comp.ratio().tolist()
        write_json(out / "comparison_report.json", payload, sha, seed)
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_verify(config: RunConfig, args) -> int:
    with stage("verify"):
        report = run_verify(config, args.branch, args.inject_corruption, not args.skip_trajectories)
    path = write_json(config.output_dir / "verify_report.json", report.as_dict(), report.config_sha256,
                      report.seed)
    for name in report.failing():
        log.error("check failed: %s", name)
    log.info("verify %s -> %s", "PASS" if report.passed else "FAIL", path)
    return EXIT_PASS if report.passed else EXIT_FAIL


COMMANDS = {"evolve": cmd_evolve, "fields": cmd_fields, "trajectories": cmd_trajectories, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="causalqm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--out", help="output directory (overrides output.dir)")
        p.add_argument("--seed", type=int, help="ensemble seed (overrides ensemble.seed)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("fields", "trajectories"):
            p.add_argument("--times", choices=("checks", "all"), default="checks",
                           help="write the check times (0, horizon/2, horizon) or every stored time")
        if name == "trajectories":
            p.add_argument("--flow", choices=("assembled", "dbb"), default="assembled")
            p.add_argument("--compare", action="store_true", help="run both flows with paired seeds")
        if name == "verify":
            p.add_argument("--branch", choices=("index", "all"), default="index",
                           help="configured sign branch only, or one sub-report per branch")
            p.add_argument("--inject-corruption", action="store_true",
                           help="scale the momentum map by 1.1 (negative control)")
            p.add_argument("--skip-trajectories", action="store_true", help="omit the ensemble checks")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        config = load_config(args.config)
        if args.seed is not None or args.out is not None:
            config = config.with_overrides(seed=args.seed, output_dir=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](config, args)
    except (GridTooSmallError, AliasingError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
