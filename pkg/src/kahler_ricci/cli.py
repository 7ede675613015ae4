"""Command-line driver: ``kahler-ricci {report,flow,verify,sweep,oracle}``.

Configuration comes from an optional flat ``key = value`` file (``#``
comments) with command-line flags taking precedence.  Outputs are
deterministic: CSV with 17 significant digits, JSON with sorted keys, SVG
written by hand.

Exit status: 0 all checks passed, 1 a check failed, 2 configuration or I/O
error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import svg
from .checks import run_verify
from .curvature import bisectional_at, psi_of
from .errors import KahlerRicciError, KahlerViolation, SolverFailure, StepRejected
from .flow import SolverControls, evolve, initial_state, sign_change_scan
from .oracle import audit_general_n, cross_check, sample_points
from .radial import FormulaVersion, MetricFamily, Variant, build_profile

log = logging.getLogger("kahler_ricci")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3
FORMATS = ("csv", "json", "svg")
SOLVER_ERRORS = (SolverFailure, KahlerViolation, StepRejected)


class ConfigError(KahlerRicciError, ValueError):
    """Invalid configuration value or file."""


@dataclass(frozen=True)
class RunConfig:
    n: int = 2
    a: float = 1.0
    c: float = 1.0
    variant: str = Variant.CORRECTED_GENERAL.value
    version: str = FormulaVersion.CORRECTED.value
    grid: tuple = (-12.0, 12.0, 2401)
    t_final: float = 1e-3
    dt_init: float = 1e-6
    dt_max: float = 1e-5
    out: str = "out"
    formats: tuple = ("csv", "json")
    jobs: int = 1
    seed: int = 42
    oracle_points: int = 20
    sweep_c: tuple | None = None
    sweep_n: tuple | None = None
    sweep_a: tuple | None = None

    def family(self) -> MetricFamily:
        return MetricFamily(self.n, self.a, self.c, Variant(self.variant))

    def controls(self) -> SolverControls:
        return SolverControls(dt_init=self.dt_init, dt_max=self.dt_max)


# -- parsing ------------------------------------------------------------------------


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.split(",") if x.strip())


def _ints(text: str) -> tuple:
    return tuple(int(x) for x in text.split(",") if x.strip())


def parse_grid(text: str) -> tuple:
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigError(f"grid must be rmin:rmax:nodes, got {text!r}")
    return float(parts[0]), float(parts[1]), int(parts[2])


def _formats(text: str) -> tuple:
    out = tuple(x.strip() for x in text.split(",") if x.strip())
    bad = [x for x in out if x not in FORMATS]
    if bad:
        raise ConfigError(f"unknown output format(s) {bad}; choose from {FORMATS}")
    return out


CONVERTERS = {
    "n": int, "a": float, "c": float, "variant": str, "version": str, "grid": parse_grid,
    "t_final": float, "dt_init": float, "dt_max": float, "out": str, "formats": _formats,
    "jobs": int, "seed": int, "oracle_points": int,
    "sweep_c": _floats, "sweep_n": _ints, "sweep_a": _floats,
}


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; returns raw strings keyed by field name."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONVERTERS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def build_config(file_values: dict, overrides: dict) -> RunConfig:
    """Merge file values and flag overrides (flags win), convert, and validate."""
    merged = {**file_values, **{k: v for k, v in overrides.items() if v is not None}}
    kwargs = {}
    for key, raw in merged.items():
        try:
            kwargs[key] = CONVERTERS[key](raw) if isinstance(raw, str) else raw
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc
    cfg = RunConfig(**kwargs)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    try:
        Variant(cfg.variant)
        FormulaVersion(cfg.version)
        cfg.family()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    r_min, r_max, nodes = cfg.grid
    if not r_min < r_max or nodes < 5:
        raise ConfigError(f"invalid grid {cfg.grid}")
    if r_max - r_min <= 4:
        raise ConfigError("grid must be longer than 4 (trusted window margins)")
    if cfg.t_final <= 0 or cfg.dt_init <= 0 or cfg.dt_max <= 0:
        raise ConfigError("t_final, dt_init and dt_max must be positive")
    if cfg.jobs < 1:
        raise ConfigError("jobs must be >= 1")
    if cfg.oracle_points < 1:
        raise ConfigError("oracle_points must be >= 1")


# -- output helpers ------------------------------------------------------------------


def _num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return "%.17g" % float(x)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_num(x) for x in row])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    return obj


def json_text(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def _write(cfg: RunConfig, name: str, text: str) -> Path:
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        path = out / name
        path.write_text(text, encoding="utf-8", newline="")
    except OSError as exc:
        raise ConfigError(f"cannot write to output directory {out}: {exc}") from exc
    return path


def _family_dict(fam: MetricFamily) -> dict:
    return {"n": fam.n, "a": fam.a, "c": fam.c, "variant": fam.variant.value}


# -- commands -------------------------------------------------------------------------


REPORT_HEADER = ["r", "phi", "phi_r", "psi", "psi_r", "lambda1", "lambda2", "bXX", "bXY", "bYY"]


def cmd_report(cfg: RunConfig) -> int:
    fam = cfg.family()
    prof = build_profile(fam, cfg.grid)
    psi, psi_r = psi_of(prof, fam.n, FormulaVersion(cfg.version))
    w = np.exp(np.asarray(prof.grid, dtype=np.longdouble))
    bxx, bxy, byy = bisectional_at(prof)
    cols = [prof.grid, prof.phi, prof.phi_r, psi, psi_r, psi / w, psi_r / w, bxx, bxy, byy]
    cols = [np.asarray(col, dtype=float) for col in cols]
    rows = list(zip(*cols))
    if "csv" in cfg.formats:
        _write(cfg, "report.csv", csv_text(REPORT_HEADER, rows))
    if "json" in cfg.formats:
        summary = {"family": _family_dict(fam), "version": cfg.version, "grid": list(cfg.grid),
                   "max_abs": {h: float(np.max(np.abs(c))) for h, c in zip(REPORT_HEADER[1:], cols[1:])}}
        _write(cfg, "report.json", json_text(summary))
    if "svg" in cfg.formats:
        _write(cfg, "lambda2.svg", svg.line_plot(cols[0], {"lambda2": cols[6]}, "lambda2 = psi_r / w", "r"))
        _write(cfg, "bisectional.svg", svg.line_plot(cols[0], {"B(X,X)": cols[7], "B(X,Y)": cols[8], "B(Y,Y)": cols[9]},
                                                     "bisectional curvatures", "r"))
    print(f"report: {len(rows)} nodes written to {cfg.out}")
    return EXIT_OK


def cmd_flow(cfg: RunConfig) -> int:
    fam = cfg.family()
    s0 = initial_state(fam, cfg.grid, FormulaVersion(cfg.version))
    times = [cfg.t_final * q for q in (0.25, 0.5, 0.75, 1.0)]
    run = evolve(s0, cfg.t_final, cfg.controls(), snapshot_times=times)
    rep = sign_change_scan(s0, run.final)
    mask = s0.window_mask()
    r = s0.grid[mask]
    rows = [(snap.t, rr, lam) for snap in run.snapshots for rr, lam in zip(r, snap.lambda2[mask])]
    summary = {
        "family": _family_dict(fam), "version": cfg.version, "t_final": cfg.t_final,
        "steps": run.steps, "rejections": run.rejections,
        "boundary_detected": rep.boundary_detected, "boundary_predicted": rep.boundary_predicted,
        "eps_sign": rep.eps_sign, "negative_interval": rep.negative_interval, "verdict": rep.verdict,
    }
    if "csv" in cfg.formats:
        _write(cfg, "flow_snapshots.csv", csv_text(["t", "r", "lambda2"], rows))
    _write(cfg, "flow_summary.json", json_text(summary))
    if "svg" in cfg.formats:
        series = {f"t={snap.t:.3g}": snap.lambda2[mask] for snap in run.snapshots}
        _write(cfg, "flow_lambda2.svg", svg.line_plot(r, series, "lambda2 under the flow", "r"))
    print(f"flow: boundary {rep.boundary_detected} predicted {rep.boundary_predicted:.6g} verdict {rep.verdict}")
    return EXIT_CHECK if rep.verdict == "fail" else EXIT_OK


def cmd_verify(cfg: RunConfig) -> int:
    res = run_verify(cfg.family(), cfg.grid, cfg.t_final, cfg.controls())
    _write(cfg, "verify.json", json_text(res.to_dict()))
    for chk in res.checks:
        extra = f" ({chk.reason})" if chk.reason else ""
        print(f"{chk.status.upper():8s} {chk.name}{extra}")
    for f in res.findings:
        print(f"FINDING  {f.quantity} [{f.variant}/{f.version}]: {f.verdict} (discrepancy {f.discrepancy:.3g})")
    if not res.all_pass:
        print("failing checks: " + ", ".join(res.failing), file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def sweep_params(cfg: RunConfig) -> list:
    """Parameter tuples (n, a, c) in lexicographic order."""
    if cfg.sweep_n is None and cfg.sweep_c is None and cfg.sweep_a is None:
        return [(cfg.n, cfg.a, cfg.c)]
    cs = cfg.sweep_c if cfg.sweep_c is not None else (cfg.c,)
    ns = cfg.sweep_n if cfg.sweep_n is not None else (cfg.n,)
    out = set()
    for n in ns:
        if cfg.sweep_a is not None:
            avals = cfg.sweep_a
        elif cfg.sweep_n is not None:
            avals = tuple(float(k) for k in range(1, n))
        else:
            avals = (cfg.a,)
        for a in avals:
            for c in cs:
                out.add((int(n), float(a), float(c)))
    return sorted(out)


SWEEP_HEADER = ["n", "a", "c", "boundary_detected", "boundary_predicted", "all_pass", "error"]


def _sweep_row(cfg: RunConfig, params) -> tuple:
    n, a, c = params
    try:
        fam = MetricFamily(n, a, c, Variant(cfg.variant))
        res = run_verify(fam, cfg.grid, cfg.t_final, cfg.controls(), audit=False)
        failing = ";".join(res.failing)
        return (n, a, c, res.boundary_detected, res.boundary_predicted, res.all_pass, failing)
    except (KahlerRicciError, ValueError, ArithmeticError) as exc:
        return (n, a, c, None, None, False, f"{type(exc).__name__}: {exc}")


def cmd_sweep(cfg: RunConfig) -> int:
    params = sweep_params(cfg)
    if cfg.jobs > 1 and len(params) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.jobs, len(params))) as pool:
            rows = list(pool.map(_sweep_row, [cfg] * len(params), params))
    else:
        rows = [_sweep_row(cfg, p) for p in params]
    rows.sort(key=lambda row: row[:3])
    _write(cfg, "sweep.csv", csv_text(SWEEP_HEADER, rows))
    if "json" in cfg.formats:
        _write(cfg, "sweep.json", json_text([dict(zip(SWEEP_HEADER, row)) for row in rows]))
    print(f"sweep: {len(rows)} rows, {sum(1 for r in rows if not r[5])} failing")
    return EXIT_OK


def cmd_oracle(cfg: RunConfig) -> int:
    fam = cfg.family()
    rng = np.random.default_rng(cfg.seed)
    points = sample_points(rng, cfg.oracle_points, fam.n)
    findings = cross_check(fam, points)
    findings += audit_general_n(fam.n, fam.a, fam.c if fam.c > 0 else 1.0)
    report = {
        "family": _family_dict(fam), "seed": cfg.seed, "points": len(points),
        "findings": [f.to_dict() for f in findings],
        "inconsistent": sum(f.verdict == "Inconsistent" for f in findings),
    }
    _write(cfg, "oracle.json", json_text(report))
    for f in findings:
        print(f"{f.verdict:12s} {f.quantity} [{f.variant}/{f.version}] {f.discrepancy:.3g}")
    return EXIT_OK


COMMANDS = {"report": cmd_report, "flow": cmd_flow, "verify": cmd_verify, "sweep": cmd_sweep, "oracle": cmd_oracle}


def build_parser() -> argparse.ArgumentParser:
    d = RunConfig()
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value file; flags override its values")
    common.add_argument("--out", help=f"output directory (default {d.out})")
    common.add_argument("--formats", help=f"comma-separated subset of csv,json,svg (default {','.join(d.formats)})")
    common.add_argument("--jobs", type=int, help=f"parallel workers for sweep (default {d.jobs})")
    common.add_argument("--seed", type=int, help=f"seed for oracle sample points (default {d.seed})")
    common.add_argument("--n", type=int, help=f"complex dimension (default {d.n})")
    common.add_argument("--a", type=float, help=f"family parameter a (default {d.a})")
    common.add_argument("--c", type=float, help=f"family parameter c >= 0 (default {d.c})")
    common.add_argument("--variant", choices=[v.value for v in Variant], help=f"family variant (default {d.variant})")
    common.add_argument("--version", dest="formula_version", choices=[v.value for v in FormulaVersion],
                        help=f"Ricci potential formula version (default {d.version})")
    common.add_argument("--t-final", type=float, help=f"flow end time (default {d.t_final})")
    common.add_argument("--dt-max", type=float, help=f"largest time step (default {d.dt_max})")
    common.add_argument("--grid", help="rmin:rmax:nodes (default %g:%g:%d)" % d.grid)
    common.add_argument("--oracle-points", type=int, help=f"seeded oracle sample points (default {d.oracle_points})")
    common.add_argument("--sweep-c", help="comma-separated c values for sweep")
    common.add_argument("--sweep-n", help="comma-separated n values; a then ranges over 1..n-1 unless --sweep-a")
    common.add_argument("--sweep-a", help="comma-separated a values for sweep")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    ap = argparse.ArgumentParser(prog="kahler-ricci", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    helps = {
        "report": "tabulate phi, Ricci eigenvalues and bisectional curvatures over the grid",
        "flow": "evolve under the reduced flow and locate where lambda2 turns negative",
        "verify": "run the verification suite for one family",
        "sweep": "run verify over parameter ranges",
        "oracle": "finite-difference cross-checks and the general-n formula audit",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return ap


def _overrides(args) -> dict:
    return {
        "out": args.out, "formats": args.formats, "jobs": args.jobs, "seed": args.seed,
        "n": args.n, "a": args.a, "c": args.c, "variant": args.variant, "version": args.formula_version,
        "t_final": args.t_final, "dt_max": args.dt_max, "grid": args.grid, "oracle_points": args.oracle_points,
        "sweep_c": args.sweep_c, "sweep_n": args.sweep_n, "sweep_a": args.sweep_a,
    }


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        file_values = read_config_file(args.config) if args.config else {}
        cfg = build_config(file_values, _overrides(args))
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    raise SystemExit(main())
