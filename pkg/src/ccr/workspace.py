"""Tension/shortening bridge, cross-model comparison and workspace sampling."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from . import cosserat, fourbar
from .model import (
    BackboneCurve,
    CableRouting,
    RobotSpec,
    build_cable_path,
    cable_length,
    undeformed_cable_length,
)

SOLVERS = ("cosserat", "fourbar")


class ComparisonError(RuntimeError):
    def __init__(self, msg: str, solver: str):
        super().__init__(msg)
        self.solver = solver


class WorkspaceError(RuntimeError):
    pass


def _cosserat_curve(routing, spec, tau, options=None, guess=None) -> BackboneCurve:
    path = build_cable_path(spec, routing)
    if tau == 0:
        curve = cosserat.shoot([path], [0.0], spec, options)
    else:
        curve = cosserat.solve([path], [tau], spec, options, guess)
    return curve


def shortening(curve: BackboneCurve, routing: CableRouting, spec: RobotSpec) -> float:
    """Fractional cable length reduction of a solved curve."""
    path = build_cable_path(spec, routing)
    return 1.0 - cable_length(curve, path, spec) / undeformed_cable_length(spec, path)


def tension_to_delta(
    routing: CableRouting,
    spec: RobotSpec,
    tau: float,
    options: cosserat.CosseratOptions | None = None,
) -> float:
    """Cable shortening fraction produced by tension ``tau`` in the Cosserat model."""
    if tau == 0:
        return 0.0
    return shortening(_cosserat_curve(routing, spec, tau, options), routing, spec)


def delta_to_tension(
    routing: CableRouting,
    spec: RobotSpec,
    delta: float,
    options: cosserat.CosseratOptions | None = None,
    tau_max: float = 10.0,
    xtol: float = 1e-8,
) -> float:
    """Invert the bridge: tension whose Cosserat solve shortens the cable by ``delta``."""
    if delta == 0:
        return 0.0
    warm = {}

    def gap(tau):
        if tau == 0:
            return -delta
        curve = _cosserat_curve(routing, spec, tau, options, warm.get("guess"))
        warm["guess"] = curve.diagnostics["initial_strain"]
        return shortening(curve, routing, spec) - delta

    return brentq(gap, 0.0, tau_max, xtol=xtol)


def disc_errors(curve_a: BackboneCurve, curve_b: BackboneCurve) -> np.ndarray:
    return np.linalg.norm(curve_a.disc_centers - curve_b.disc_centers, axis=1)


@dataclass
class ComparisonReport:
    routing: str
    tension_n: float
    delta: float
    per_disc_errors_m: np.ndarray
    backbone_length_m: float
    cosserat_curve: BackboneCurve | None = field(default=None, repr=False)
    fourbar_curve: BackboneCurve | None = field(default=None, repr=False)

    @property
    def max_error_m(self) -> float:
        return float(np.max(self.per_disc_errors_m))

    @property
    def max_error_pct(self) -> float:
        return 100.0 * self.max_error_m / self.backbone_length_m

    def to_dict(self) -> dict:
        return {
            "routing": self.routing,
            "tension_n": self.tension_n,
            "delta": self.delta,
            "per_disc_errors_m": [float(e) for e in self.per_disc_errors_m],
            "max_error_m": self.max_error_m,
            "max_error_pct": self.max_error_pct,
        }


def compare_models(
    routing: CableRouting,
    spec: RobotSpec,
    tau: float,
    cosserat_options: cosserat.CosseratOptions | None = None,
    fourbar_options: fourbar.FourBarOptions | None = None,
) -> ComparisonReport:
    """Cosserat at ``tau``, bridged to a shortening, four-bar at that shortening."""
    routing.validate(spec)
    try:
        c_curve = _cosserat_curve(routing, spec, tau, cosserat_options)
    except (cosserat.ShootingError, cosserat.CosseratError) as exc:
        raise ComparisonError(f"cosserat solver failed: {exc}", "cosserat") from exc
    delta = 0.0 if tau == 0 else shortening(c_curve, routing, spec)
    try:
        f_curve = fourbar.propagate(routing, spec, delta, fourbar_options)
    except (fourbar.FourBarError, fourbar.OverActuationError) as exc:
        raise ComparisonError(f"fourbar solver failed: {exc}", "fourbar") from exc
    return ComparisonReport(
        routing=routing.name,
        tension_n=float(tau),
        delta=float(delta),
        per_disc_errors_m=disc_errors(c_curve, f_curve),
        backbone_length_m=spec.backbone_length,
        cosserat_curve=c_curve,
        fourbar_curve=f_curve,
    )


@dataclass
class WorkspaceSample:
    actuation: float
    tip: np.ndarray | None
    disc_centers: np.ndarray | None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class WorkspaceCloud:
    routing: str
    solver: str
    samples: list[WorkspaceSample]
    wall_time_s: float

    @property
    def tips(self) -> np.ndarray:
        return np.array([s.tip for s in self.samples if s.ok])

    @property
    def n_failed(self) -> int:
        return sum(not s.ok for s in self.samples)

    def to_dict(self) -> dict:
        return {
            "routing": self.routing,
            "solver": self.solver,
            "wall_time_s": self.wall_time_s,
            "samples": [
                {
                    "actuation": s.actuation,
                    "tip_m": None if s.tip is None else s.tip.tolist(),
                    "disc_centers_m": None if s.disc_centers is None else s.disc_centers.tolist(),
                    "error": s.error,
                }
                for s in self.samples
            ],
        }

    def to_csv(self, fmt: str = "{:.9g}") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["actuation", "tip_x_m", "tip_y_m", "tip_z_m"])
        for s in self.samples:
            if s.ok:
                w.writerow([fmt.format(s.actuation)] + [fmt.format(x) for x in s.tip])
        return buf.getvalue()


def sample_workspace(
    routing: CableRouting,
    spec: RobotSpec,
    solver_id: str,
    actuation_grid: Sequence[float],
    cosserat_options: cosserat.CosseratOptions | None = None,
    fourbar_options: fourbar.FourBarOptions | None = None,
) -> WorkspaceCloud:
    """Solve one model over a grid of scalar actuations (delta or tension in N).

    Each solve is warm-started from the previous successful grid point; failed
    points are recorded and the sweep continues.
    """
    if solver_id not in SOLVERS:
        raise ValueError(f"unknown solver '{solver_id}'")
    routing.validate(spec)
    t0 = time.perf_counter()
    path = build_cable_path(spec, routing)
    samples = []
    warm = None
    for value in actuation_grid:
        value = float(value)
        try:
            if solver_id == "fourbar":
                curve = fourbar.propagate(
                    routing, spec, value, fourbar_options, warm_start=warm
                )
                warm = curve
            else:
                if value < 0:
                    raise ValueError("tension must be >= 0")
                guess = None if warm is None else warm.diagnostics["initial_strain"]
                if value == 0:
                    curve = cosserat.shoot([path], [0.0], spec, cosserat_options)
                else:
                    curve = cosserat.solve([path], [value], spec, cosserat_options, guess)
                warm = curve
            samples.append(WorkspaceSample(value, curve.tip.copy(), curve.disc_centers.copy()))
        except (
            fourbar.FourBarError,
            fourbar.OverActuationError,
            cosserat.ShootingError,
            cosserat.CosseratError,
            ValueError,
        ) as exc:
            samples.append(WorkspaceSample(value, None, None, str(exc)))
    cloud = WorkspaceCloud(routing.name, solver_id, samples, time.perf_counter() - t0)
    if samples and cloud.n_failed > 0.5 * len(samples):
        raise WorkspaceError(
            f"{cloud.n_failed} of {len(samples)} grid points failed for "
            f"{solver_id} on routing {routing.name}"
        )
    return cloud


def reachability_radius(spec: RobotSpec) -> float:
    return spec.backbone_length + spec.hole_radius


def parse_grid(text: str) -> np.ndarray:
    """``min:max:count`` to a uniform grid (count >= 1; count 1 gives ``min``)."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"grid '{text}' is not min:max:count")
    try:
        lo, hi = float(parts[0]), float(parts[1])
        count = int(parts[2])
    except ValueError:
        raise ValueError(f"grid '{text}' is not min:max:count") from None
    if count < 1 or not (np.isfinite(lo) and np.isfinite(hi)) or hi < lo:
        raise ValueError(f"grid '{text}': need finite min <= max and count >= 1")
    if count == 1:
        return np.array([lo])
    return np.linspace(lo, hi, count)

