"""Command-line entry point.

    townsend spark|linear|solve|trace|sweep CONFIG [--out DIR] [--format csv,json,svg] [--workers N]

Exit status is 0 on success, 2 when the configuration is rejected (nothing
is written) and 3 when seeding or solving fails (whatever was computed is
still written).
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import svg
from .config import FORMATS, ConfigError, RunConfig, load_config
from .continuation import (Limits, bounded_density_diagnostic, halfloop_cross_check,
                           seed_branch, trace_branch)
from .errors import (DomainViolation, InvalidParameters, InvalidRange, NoConvergence,
                     NoSparkingVoltage, NotApplicable, SeedFailure, SingularJacobian)
from .linear import transversality_F
from .model import Grid, Parameters, g_of_voltage, to_physical
from .solver import SolverConfig, assemble_residual
from .sparking import D_normalized, sparking_report

__all__ = ["main", "build_parser"]

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 2, 3
_SOLVE_FAILURES = (NoSparkingVoltage, SeedFailure, NoConvergence, DomainViolation,
                   SingularJacobian)


class _Rejected(Exception):
    """Validation failure discovered after the config was parsed."""


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"artifact": pkg, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": ".".join(map(str, sys.version_info[:3]))}


def _clean(obj):
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats mapped to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


class _Writer:
    def __init__(self, out: Path, formats, config_hash: str):
        self.out = out
        self.formats = set(formats)
        self.hash = config_hash
        self.written: list[str] = []

    def _path(self, name: str) -> Path:
        path = self.out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        self.written.append(name)
        return path

    def csv(self, name: str, columns, rows) -> None:
        if "csv" not in self.formats:
            return
        lines = [f"# config_sha256={self.hash}", ",".join(columns)]
        lines += [",".join(_cell(v) for v in row) for row in rows]
        self._path(name).write_bytes(("\n".join(lines) + "\n").encode())

    def json(self, name: str, payload: dict) -> None:
        if "json" not in self.formats:
            return
        body = _clean({**payload, "config_hash": self.hash})
        text = json.dumps(body, sort_keys=True, indent=2, allow_nan=False)
        self._path(name).write_bytes((text + "\n").encode())

    def svg(self, name: str, document: str) -> None:
        if "svg" not in self.formats:
            return
        head, rest = document.split("\n", 1)
        text = f"{head}\n<!-- config_sha256={self.hash} -->\n{rest}"
        self._path(name).write_bytes(text.encode())


def _solver_config(cfg: RunConfig) -> SolverConfig:
    s = cfg.solver
    return SolverConfig(grid=Grid(cfg.grid["n_cells"], cfg.parameters.L),
                        newton_tol=s["newton_tol"], max_iters=s["max_iters"],
                        domain_margin=s["domain_margin"], damping=s["damping"],
                        min_step=s["min_step"], mode=s["mode"])


def _limits(cfg: RunConfig) -> Limits:
    c = cfg.continuation
    keys = ("max_steps", "norm_ceiling", "lambda_floor", "field_floor", "trivial_tol",
            "ds_initial", "ds_min", "ds_max")
    return Limits(**{k: c[k] for k in keys})


def _spark(cfg: RunConfig):
    try:
        return sparking_report(cfg.parameters, cfg.spark["V_max"], cfg.spark["step"])
    except (InvalidRange, InvalidParameters) as exc:
        raise _Rejected(str(exc)) from exc


def _base(cfg: RunConfig, command: str) -> dict:
    return {"command": command, "config": cfg.echo(), "versions": _versions()}


def cmd_spark(cfg: RunConfig, w: _Writer) -> int:
    report = _spark(cfg)
    n = cfg.spark["curve_points"]
    V = np.linspace(report.V_max / n, report.V_max, n)
    g = g_of_voltage(cfg.parameters, V)
    D = D_normalized(cfg.parameters, V)
    w.csv("spark_curve.csv", ["V_c", "g", "D_normalized"], zip(V, g, D))
    w.json("spark_report.json", {**_base(cfg, "spark"), "report": report.as_dict()})
    roots = [(r.V_c, 0.0) for r in report.roots]
    w.svg("spark.svg", svg.line_chart([("D normalized", V, D)], markers=roots, hlines=(0.0,),
                                      title="Sparking function", xlabel="V_c",
                                      ylabel="D normalized"))
    print(f"{len(report.roots)} root(s); sparking voltage {report.sparking_voltage}")
    return EXIT_OK


def cmd_linear(cfg: RunConfig, w: _Writer) -> int:
    report = _spark(cfg)
    payload = {**_base(cfg, "linear"), "spark": report.as_dict()}
    try:
        lin = transversality_F(cfg.parameters, report, Grid(cfg.grid["n_cells"], cfg.parameters.L))
    except NoSparkingVoltage as exc:
        w.json("linear_report.json", {**payload, "linear": None, "error": str(exc)})
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    w.json("linear_report.json", {**payload, "linear": lin.as_dict(), "error": None})
    print(f"V_c = {lin.V_c:.12g}, F = {lin.F_value:.6g}, transversal = {lin.transversal}")
    return EXIT_OK


def _state_rows(state, params):
    phys = to_physical(state, params)
    return zip(phys.x, phys.rho_i, phys.rho_e, state.R_e, state.V, phys.Phi, state.field)


_STATE_COLUMNS = ["x", "rho_i", "rho_e", "R_e", "V", "Phi", "field"]


def cmd_solve(cfg: RunConfig, w: _Writer) -> int:
    report = _spark(cfg)
    config = _solver_config(cfg)
    amp = cfg.solve["amplitude"]
    payload = {**_base(cfg, "solve"), "sparking_voltage": report.sparking_voltage,
               "amplitude": amp}
    try:
        point = seed_branch(cfg.parameters, report, config, s0=amp)
    except _SOLVE_FAILURES as exc:
        w.json("solve.json", {**payload, "converged": False, "error": str(exc)})
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED
    st = point.state
    res = assemble_residual(st, cfg.parameters, config.mode)
    w.csv("solution.csv", _STATE_COLUMNS, _state_rows(st, cfg.parameters))
    w.json("solve.json", {**payload, "converged": True, "error": None,
                          "s": point.s, "lambda": st.lam, "V_c": st.V_c,
                          "iterations": point.iterations, "residual": res.sup_norm(),
                          "diagnostics": point.diagnostics})
    print(f"solved at V_c = {st.V_c:.12g} with residual {res.sup_norm():.3g}")
    return EXIT_OK


_BRANCH_COLUMNS = ["s", "lambda", "sup_rho_i", "sup_rho_e", "l1_rho_e", "min_field",
                   "positive", "amplitude", "residual", "iterations"]


def cmd_trace(cfg: RunConfig, w: _Writer) -> int:
    params = cfg.parameters
    report = _spark(cfg)
    config = _solver_config(cfg)
    cont = cfg.continuation
    meta = {**_base(cfg, "trace"), "sparking_voltage": report.sparking_voltage}
    try:
        branch = trace_branch(params, config, _limits(cfg), spark=report, s0=cont["s0"],
                              direction=cont["direction"])
    except _SOLVE_FAILURES as exc:
        w.csv("branch.csv", _BRANCH_COLUMNS, [])
        w.json("branch_meta.json", {**meta, "points": 0, "seed": None,
                                    "termination": {"kind": "SolverFailure",
                                                    "details": {"reason": str(exc),
                                                                "stage": "seed"}},
                                    "halfloop_cross_check": None,
                                    "density_diagnostic": None})
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED

    rows = []
    for p in branch.points:
        d = p.diagnostics
        rows.append((p.s, d["lambda"], d["sup_rho_i"], d["sup_rho_e"], d["l1_rho_e"],
                     d["min_field"], d["positive"], p.amplitude, p.residual, p.iterations))
    w.csv("branch.csv", _BRANCH_COLUMNS, rows)

    stride = cont["snapshot_stride"]
    if stride > 0:
        for k, p in enumerate(branch.points):
            if k % stride == 0 or k == len(branch.points) - 1:
                w.csv(f"snapshots/point_{k:05d}.csv", _STATE_COLUMNS, _state_rows(p.state, params))

    term = branch.termination
    cross = density = None
    if term.kind == "HalfLoop":
        c = halfloop_cross_check(branch, report, params)
        cross = {"ok": c.ok, "reason": c.reason, "details": c.details}
    else:
        try:
            dd = bounded_density_diagnostic(branch, params)
            density = {"applicable": True, "hypothesis_holds": dd.hypothesis_holds,
                       "decreasing": dd.decreasing, "values": dd.values, "lambdas": dd.lambdas}
        except NotApplicable as exc:
            density = {"applicable": False, "reason": str(exc)}
    first = branch.points[0]
    seed = {"V_c_dagger": branch.start["V_c_dagger"], "s0": branch.start["s0"],
            "direction": branch.start["direction"], "trivial_tol": branch.start["trivial_tol"],
            "lambda": first.state.lam, "residual": first.residual,
            "iterations": first.iterations}
    residuals = [p.residual for p in branch.points]
    w.json("branch_meta.json", {**meta, "points": len(branch.points), "seed": seed,
                                "termination": {"kind": term.kind, "details": term.details},
                                "max_residual": max(residuals),
                                "halfloop_cross_check": cross, "density_diagnostic": density})
    V = [p.state.V_c for p in branch.points]
    amp = [p.amplitude for p in branch.points]
    w.svg("branch.svg", svg.line_chart([("branch", V, amp)],
                                       markers=[(branch.start["V_c_dagger"], 0.0)],
                                       title=f"Branch of steady states ({term.kind})",
                                       xlabel="V_c", ylabel="amplitude"))
    print(f"{len(branch.points)} point(s); termination {term.kind}")
    return EXIT_FAILED if term.kind == "SolverFailure" else EXIT_OK


_SWEEP_COLUMNS = ["a", "b", "gamma", "root_count", "condA1", "condA2", "lemmaA3_no_root",
                  "V_c_dagger", "g_dagger", "window_closed"]


def _sweep_sample(job):
    values, k_i, k_e, L, V_max, step = job
    params = Parameters(a=values["a"], b=values["b"], gamma=values["gamma"], k_i=k_i, k_e=k_e, L=L)
    rep = sparking_report(params, V_max, step)
    flags = rep.regime_flags
    dag = rep.sparking_voltage
    g_dag = None if dag is None else float(g_of_voltage(params, dag))
    return (params.a, params.b, params.gamma, len(rep.roots), flags.condA1, flags.condA2,
            flags.lemmaA3_no_root, dag, g_dag, rep.window_closed)


def cmd_sweep(cfg: RunConfig, w: _Writer, workers: int = 1) -> int:
    p = cfg.parameters
    ax, ay = cfg.sweep_axes
    base = {"a": p.a, "b": p.b, "gamma": p.gamma}
    jobs = []
    for yv in ay.values():
        for xv in ax.values():
            jobs.append(({**base, ax.name: xv, ay.name: yv}, p.k_i, p.k_e, p.L,
                         cfg.sweep["V_max"], cfg.sweep["step"]))
    try:
        for job in jobs:
            Parameters(**job[0], k_i=p.k_i, k_e=p.k_e, L=p.L)
    except InvalidParameters as exc:
        raise _Rejected(str(exc)) from exc
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_sample, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        rows = [_sweep_sample(j) for j in jobs]
    rows.sort(key=lambda r: r[:3])
    w.csv("regime_map.csv", _SWEEP_COLUMNS, rows)

    col = {"a": 0, "b": 1, "gamma": 2}
    xs, ys = ax.values(), ay.values()
    lookup = {(r[col[ax.name]], r[col[ay.name]]): r[3] for r in rows}
    grid = [[lookup[(xv, yv)] for xv in xs] for yv in ys]
    w.svg("regime_map.svg", svg.heatmap(xs, ys, grid, title="Number of roots of D",
                                        xlabel=ax.name, ylabel=ay.name))
    print(f"{len(rows)} sample(s) classified")
    return EXIT_OK


_COMMANDS = {"spark": cmd_spark, "linear": cmd_linear, "solve": cmd_solve,
             "trace": cmd_trace, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="townsend",
                                     description="Sparking voltages and steady discharge branches.")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("config", help="TOML configuration file")
    parser.add_argument("--out", help="output directory (overrides [output] directory)")
    parser.add_argument("--format", help="comma-separated subset of csv,json,svg")
    parser.add_argument("--workers", type=int, default=1, help="parallel workers for sweep")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, require_sweep=args.command == "sweep")
        formats = cfg.output["formats"]
        if args.format is not None:
            formats = [f.strip() for f in args.format.split(",") if f.strip()]
            if not formats or any(f not in FORMATS for f in formats):
                raise ConfigError(f"--format must be a nonempty subset of {','.join(FORMATS)}")
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        out = Path(args.out if args.out is not None else cfg.output["directory"])
        writer = _Writer(out, formats, cfg.hash)
        if args.command == "sweep":
            return cmd_sweep(cfg, writer, workers=args.workers)
        return _COMMANDS[args.command](cfg, writer)
    except (ConfigError, _Rejected) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
