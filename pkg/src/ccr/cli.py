"""``ccr`` command line: pose, compare and workspace commands.

Exit codes: 0 ok, 2 input parse/validation error, 3 solver non-convergence,
4 invalid options.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from . import cosserat, fourbar, workspace
from .model import (
    FIXTURE_DIR,
    STOCK_ROUTINGS,
    BackboneCurve,
    ConfigError,
    ValidationError,
    build_cable_path,
    build_spec,
    cable_length,
    grams_to_newtons,
    load_routing,
    spec_to_config,
    undeformed_cable_length,
)

SCHEMA_VERSION = 1
EXIT_PARSE, EXIT_SOLVER, EXIT_OPTIONS = 2, 3, 4

log = logging.getLogger("ccr")


class OptionsError(ValueError):
    pass


def _round_floats(obj: Any) -> Any:
    """Normalize every float to 9 significant digits (JSON-safe)."""
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return obj
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return None
        return float(f"{x:.9g}")
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _round_floats(obj.tolist())
    if isinstance(obj, dict):
        return {str(k): _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _strip_timing(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _strip_timing(v) for k, v in obj.items() if k != "wall_time_s"}
    if isinstance(obj, list):
        return [_strip_timing(v) for v in obj]
    return obj


@dataclass
class ResultEnvelope:
    command: str
    inputs: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        for f in ("inputs", "options", "outputs", "diagnostics"):
            setattr(self, f, _round_floats(getattr(self, f)))

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ResultEnvelope":
        data = json.loads(text)
        return cls(**data)

    def without_timing(self) -> "ResultEnvelope":
        d = _strip_timing(self.to_dict())
        return ResultEnvelope(**d)


# --- input loading ------------------------------------------------------------


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _resolve(value: str | None, kind: str) -> Path:
    if value is None:
        return FIXTURE_DIR / "reference_robot.json"
    p = Path(value)
    if kind == "routing" and not p.exists() and value in STOCK_ROUTINGS:
        return FIXTURE_DIR / f"routing_{value}.json"
    return p


def load_options(path: str | None) -> tuple[cosserat.CosseratOptions, fourbar.FourBarOptions, dict]:
    """Read ``{"cosserat": {...}, "fourbar": {...}}``; unknown keys are errors."""
    raw: dict = {}
    if path is not None:
        try:
            with open(path) as f:
                raw = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise OptionsError(f"options file {path}: {exc}") from exc
        if not isinstance(raw, dict) or set(raw) - {"cosserat", "fourbar"}:
            raise OptionsError("options file must be an object with 'cosserat'/'fourbar' keys")
    try:
        c_opts = cosserat.CosseratOptions(**raw.get("cosserat", {}))
        f_opts = fourbar.FourBarOptions(**raw.get("fourbar", {}))
    except (TypeError, ValueError) as exc:
        raise OptionsError(f"invalid solver options: {exc}") from exc
    used = {
        "cosserat": {f.name: getattr(c_opts, f.name) for f in fields(c_opts)},
        "fourbar": {f.name: getattr(f_opts, f.name) for f in fields(f_opts)},
    }
    return c_opts, f_opts, used


def _load(args, need_routing: bool = True):
    robot_path = _resolve(args.robot, "robot")
    spec = build_spec(robot_path)
    inputs = {
        "robot": {"path": str(robot_path), "sha256": _digest(robot_path), "config": spec_to_config(spec)}
    }
    routing = None
    if need_routing:
        if args.routing is None:
            raise OptionsError("--routing is required")
        routing_path = _resolve(args.routing, "routing")
        routing = load_routing(routing_path, spec)
        inputs["routing"] = {
            "path": str(routing_path),
            "sha256": _digest(routing_path),
            "name": routing.name,
            "holes": list(routing.holes),
        }
    return spec, routing, inputs


def _tension(args, routing) -> float:
    if args.tension_g is not None:
        if not math.isfinite(args.tension_g) or args.tension_g < 0:
            raise OptionsError("--tension-g must be a finite non-negative number")
        return grams_to_newtons(args.tension_g)
    if routing.tension is None:
        raise OptionsError(f"routing {routing.name} has no tension; pass --tension-g")
    return routing.tension


def _delta(args, routing) -> float:
    if args.delta_pct is not None:
        if not 0 <= args.delta_pct < 100:
            raise OptionsError("--delta-pct must lie in [0, 100)")
        return args.delta_pct / 100.0
    if routing.length_reduction is None:
        raise OptionsError(f"routing {routing.name} has no length reduction; pass --delta-pct")
    return routing.length_reduction


def curve_payload(curve: BackboneCurve, full: bool) -> dict:
    out = {
        "station_s_m": curve.s[curve.station_idx],
        "disc_centers_m": curve.p[curve.station_idx],
        "disc_frames": curve.R[curve.station_idx],
        "tip_m": curve.tip,
    }
    if full:
        out["s_m"] = curve.s
        out["positions_m"] = curve.p
        out["rotations"] = curve.R
        if curve.v is not None:
            out["v"] = curve.v
            out["u_per_m"] = curve.u
    return out


def _solver_diag(curve: BackboneCurve) -> dict:
    d = dict(curve.diagnostics)
    d.pop("residual_history", None)
    for seg in d.get("segments", []):
        seg.pop("multipliers", None)
    return d


# --- commands -------------------------------------------------------------------


def cmd_pose(args) -> tuple[ResultEnvelope, str | None]:
    spec, routing, inputs = _load(args)
    c_opts, f_opts, used = load_options(args.options)
    path = build_cable_path(spec, routing)
    if args.solver == "cosserat":
        tau = _tension(args, routing)
        inputs["actuation"] = {"tension_n": tau, "tension_g": tau / 9.81 * 1e3}
        curve = cosserat.solve([path], [tau], spec, c_opts)
        opts = used["cosserat"]
    else:
        delta = _delta(args, routing)
        inputs["actuation"] = {"length_reduction": delta, "length_reduction_pct": 100 * delta}
        curve = fourbar.propagate(routing, spec, delta, f_opts)
        opts = used["fourbar"]
    L0 = undeformed_cable_length(spec, path)
    L1 = cable_length(curve, path, spec)
    outputs = {
        "solver": args.solver,
        "curve": curve_payload(curve, full=args.solver == "cosserat"),
        "cable_length_m": L1,
        "undeformed_cable_length_m": L0,
        "cable_reduction_pct": 100 * (1 - L1 / L0),
    }
    env = ResultEnvelope("pose", inputs, opts, outputs, _solver_diag(curve))
    csv_text = None
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["station", "s_m", "x_m", "y_m", "z_m"])
        for k, idx in enumerate(curve.station_idx):
            w.writerow([k] + [f"{x:.9g}" for x in (curve.s[idx], *curve.p[idx])])
        csv_text = buf.getvalue()
    return env, csv_text


def _compare_one(spec, routing, tau, c_opts, f_opts):
    rep = workspace.compare_models(routing, spec, tau, c_opts, f_opts)
    d = rep.to_dict()
    d["tension_g"] = tau / 9.81 * 1e3
    d["max_error_mm"] = rep.max_error_m * 1e3
    d["cosserat_curve"] = curve_payload(rep.cosserat_curve, full=False)
    d["fourbar_curve"] = curve_payload(rep.fourbar_curve, full=False)
    diag = {"cosserat": _solver_diag(rep.cosserat_curve), "fourbar": _solver_diag(rep.fourbar_curve)}
    return rep, d, diag


def cmd_compare(args) -> tuple[ResultEnvelope, str | None]:
    if args.all:
        spec, _, inputs = _load(args, need_routing=False)
        routings = []
        for name in STOCK_ROUTINGS:
            p = FIXTURE_DIR / f"routing_{name}.json"
            routings.append(load_routing(p, spec))
        inputs["routings"] = [
            {"name": r.name, "sha256": _digest(FIXTURE_DIR / f"routing_{r.name}.json")} for r in routings
        ]
    else:
        spec, routing, inputs = _load(args)
        routings = [routing]
    c_opts, f_opts, used = load_options(args.options)
    reports, diags, rows = [], {}, []
    for r in routings:
        tau = _tension(args, r)
        rep, d, diag = _compare_one(spec, r, tau, c_opts, f_opts)
        reports.append(d)
        diags[r.name] = diag
        for k, e in enumerate(rep.per_disc_errors_m, start=1):
            c = rep.cosserat_curve.disc_centers[k - 1]
            f = rep.fourbar_curve.disc_centers[k - 1]
            rows.append([r.name, k, *c, *f, e])
    env = ResultEnvelope("compare", inputs, used, {"reports": reports}, diags)
    csv_text = None
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(
            ["routing", "disc", "cosserat_x_m", "cosserat_y_m", "cosserat_z_m",
             "fourbar_x_m", "fourbar_y_m", "fourbar_z_m", "error_m"]
        )
        for row in rows:
            w.writerow(row[:2] + [f"{x:.9g}" for x in row[2:]])
        csv_text = buf.getvalue()
    return env, csv_text


def cmd_workspace(args) -> tuple[ResultEnvelope, str | None]:
    spec, routing, inputs = _load(args)
    c_opts, f_opts, used = load_options(args.options)
    if args.grid is None:
        raise OptionsError("--grid min:max:count is required")
    try:
        grid = workspace.parse_grid(args.grid)
    except ValueError as exc:
        raise OptionsError(str(exc)) from exc
    if args.solver == "fourbar" and (grid[0] < 0 or grid[-1] >= 1):
        raise OptionsError("fourbar grid values are length-reduction fractions in [0, 1)")
    if args.solver == "cosserat" and grid[0] < 0:
        raise OptionsError("cosserat grid values are tensions in N and must be >= 0")
    inputs["grid"] = {"spec": args.grid, "unit": "fraction" if args.solver == "fourbar" else "N"}
    cloud = workspace.sample_workspace(routing, spec, args.solver, grid, c_opts, f_opts)
    outputs = cloud.to_dict()
    diag = {"n_samples": len(cloud.samples), "n_failed": cloud.n_failed, "wall_time_s": cloud.wall_time_s}
    env = ResultEnvelope("workspace", inputs, used[args.solver], outputs, diag)
    return env, cloud.to_csv() if args.format == "csv" else None


COMMANDS = {"pose": cmd_pose, "compare": cmd_compare, "workspace": cmd_workspace}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ccr", description="Cable-driven continuum robot pose tools")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, solver=True):
        p.add_argument("--robot", help="robot config JSON (default: packaged reference robot)")
        p.add_argument("--routing", help="routing JSON, or a stock routing name I..VI")
        if solver:
            p.add_argument("--solver", choices=workspace.SOLVERS, required=True)
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--out", help="write output here instead of stdout")
        p.add_argument("--options", help="solver options JSON")
        p.add_argument("--no-timing", action="store_true", help="omit wall times (byte-stable output)")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("pose", help="solve one pose")
    common(p)
    p.add_argument("--tension-g", type=float, help="cable load in grams (cosserat)")
    p.add_argument("--delta-pct", type=float, help="cable length reduction in percent (fourbar)")

    p = sub.add_parser("compare", help="compare both solvers at a tension")
    common(p, solver=False)
    p.add_argument("--tension-g", type=float, help="cable load in grams")
    p.add_argument("--all", action="store_true", help="run all six stock routings")

    p = sub.add_parser("workspace", help="sample a workspace cloud")
    common(p)
    p.add_argument("--grid", help="min:max:count (delta fraction for fourbar, N for cosserat)")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OPTIONS if exc.code not in (0, None) else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        env, csv_text = COMMANDS[args.command](args)
    except (ConfigError, ValidationError) as exc:
        print(f"ccr: input error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except OptionsError as exc:
        print(f"ccr: invalid options: {exc}", file=sys.stderr)
        return EXIT_OPTIONS
    except (
        cosserat.ShootingError,
        cosserat.CosseratError,
        fourbar.FourBarError,
        fourbar.OverActuationError,
        workspace.ComparisonError,
        workspace.WorkspaceError,
    ) as exc:
        print(f"ccr: solver failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    if args.no_timing:
        env = env.without_timing()
    text = csv_text if csv_text is not None else env.to_json()
    if args.out:
        Path(args.out).write_text(text)
        if csv_text is not None:
            Path(args.out).with_suffix(".json").write_text(env.to_json())
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
