"""Robot geometry, material stiffness, cable routing and cable-length measurement.

Everything here is SI (m, N, Pa). File formats use mm / g / GPa / percent and
are converted on load.  Disc ``k`` (1-based) sits at arclength ``k * l0``;
station 0 is the base plate at ``s = 0`` where the cable enters through the
same hole it uses at disc 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

GRAVITY = 9.81  # m/s^2, gram-load conversion

ROBOT_FIELDS = (
    "backbone_length_mm",
    "backbone_diameter_mm",
    "num_discs",
    "hole_radius_mm",
    "holes_per_disc",
    "youngs_modulus_gpa",
    "poisson_ratio",
)


class ConfigError(ValueError):
    """A robot/routing/options file is malformed (missing or mistyped field)."""


class ValidationError(ValueError):
    """Parsed values violate a geometric or material invariant."""


@dataclass(frozen=True)
class MaterialStiffness:
    K_se: np.ndarray
    K_bt: np.ndarray
    shear_modulus: float
    area: float
    I_xx: float
    I_yy: float
    I_zz: float

    @classmethod
    def circular(cls, diameter: float, E: float, nu: float) -> "MaterialStiffness":
        G = E / (2.0 * (1.0 + nu))
        A = np.pi * diameter**2 / 4.0
        I = np.pi * diameter**4 / 64.0
        J = 2.0 * I
        return cls(
            K_se=np.diag([G * A, G * A, E * A]),
            K_bt=np.diag([E * I, E * I, G * J]),
            shear_modulus=G,
            area=A,
            I_xx=I,
            I_yy=I,
            I_zz=J,
        )


@dataclass(frozen=True)
class RobotSpec:
    backbone_length: float
    backbone_diameter: float
    num_discs: int
    hole_radius: float
    holes_per_disc: int
    youngs_modulus: float
    poisson_ratio: float

    def __post_init__(self):
        checks = [
            (self.backbone_length > 0, "backbone_length must be > 0"),
            (self.backbone_diameter > 0, "backbone_diameter must be > 0"),
            (self.num_discs >= 2, "num_discs must be >= 2"),
            (self.hole_radius > 0, "hole_radius must be > 0"),
            (self.holes_per_disc >= 1, "holes_per_disc must be >= 1"),
            (self.youngs_modulus > 0, "youngs_modulus must be > 0"),
            (0 < self.poisson_ratio < 0.5, "poisson_ratio must lie in (0, 0.5)"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValidationError(msg)

    @property
    def disc_spacing(self) -> float:
        return self.backbone_length / self.num_discs

    @property
    def station_s(self) -> np.ndarray:
        """Arclengths of the base plate (index 0) and every disc."""
        return np.arange(self.num_discs + 1) * self.disc_spacing

    @cached_property
    def stiffness(self) -> MaterialStiffness:
        return MaterialStiffness.circular(
            self.backbone_diameter, self.youngs_modulus, self.poisson_ratio
        )


@dataclass(frozen=True)
class CableRouting:
    """One cable: a hole index per disc (1-based), terminating at the tip disc.

    ``tension`` (N) drives the Cosserat model, ``length_reduction`` (fraction of
    the undeformed in-robot cable length) drives the four-bar model.
    """

    name: str
    holes: tuple[int, ...]
    tension: float | None = None
    length_reduction: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "holes", tuple(int(h) for h in self.holes))
        if self.tension is not None and not (np.isfinite(self.tension) and self.tension >= 0):
            raise ValidationError(f"routing {self.name}: tension must be finite and >= 0")
        if self.length_reduction is not None and not (0 <= self.length_reduction < 1):
            raise ValidationError(f"routing {self.name}: length reduction must lie in [0, 1)")

    @property
    def termination_disc(self) -> int:
        return len(self.holes)

    def validate(self, spec: RobotSpec) -> None:
        if len(self.holes) != spec.num_discs:
            raise ValidationError(
                f"routing {self.name}: {len(self.holes)} holes given for {spec.num_discs} discs"
            )
        for k, h in enumerate(self.holes, start=1):
            if not 1 <= h <= spec.holes_per_disc:
                raise ValidationError(
                    f"routing {self.name}: hole index {h} at disc {k} outside [1, {spec.holes_per_disc}]"
                )

    def station_holes(self) -> tuple[int, ...]:
        """Hole index at every station, base plate first."""
        return (self.holes[0],) + self.holes

    def with_tension(self, tension: float) -> "CableRouting":
        return CableRouting(self.name, self.holes, tension, self.length_reduction)

    def with_reduction(self, delta: float) -> "CableRouting":
        return CableRouting(self.name, self.holes, self.tension, delta)


def hole_angle(spec: RobotSpec, hole_index: int) -> float:
    if not 1 <= hole_index <= spec.holes_per_disc:
        raise ValidationError(f"hole index {hole_index} outside [1, {spec.holes_per_disc}]")
    return 2.0 * np.pi * (hole_index - 1) / spec.holes_per_disc


def hole_position(spec: RobotSpec, hole_index: int) -> np.ndarray:
    """Local (x, y) of a hole; hole 1 on +X, numbering counterclockwise from +Z."""
    theta = hole_angle(spec, hole_index)
    return spec.hole_radius * np.array([np.cos(theta), np.sin(theta)])


class CablePath:
    """C2 routing curve r(s) in the backbone's local frame (z component zero).

    The hole angle is interpolated with a natural cubic spline over the
    stations and mapped back onto the hole circle, so ``|r(s)| = a``
    everywhere and the knots are reproduced exactly.
    """

    def __init__(self, spec: RobotSpec, routing: CableRouting):
        routing.validate(spec)
        self.spec = spec
        self.routing = routing
        self.knot_s = spec.station_s
        angles = np.array([hole_angle(spec, h) for h in routing.station_holes()])
        self.knot_angles = np.unwrap(angles)
        self.knot_points = np.zeros((len(angles), 3))
        for k, h in enumerate(routing.station_holes()):
            self.knot_points[k, :2] = hole_position(spec, h)
        self._angle = CubicSpline(self.knot_s, self.knot_angles, bc_type="natural")

    @property
    def is_constant(self) -> bool:
        return len(set(self.routing.holes)) == 1

    def angle(self, s, nu: int = 0):
        return self._angle(s, nu)

    def evaluate(self, s) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return r, dr/ds, d2r/ds2 at ``s`` (scalar or array), each shape (..., 3)."""
        s = np.asarray(s, dtype=float)
        a = self.spec.hole_radius
        th, dth, ddth = self._angle(s), self._angle(s, 1), self._angle(s, 2)
        c, sn = np.cos(th), np.sin(th)
        zero = np.zeros_like(th)
        r = a * np.stack([c, sn, zero], axis=-1)
        dr = a * np.stack([-sn * dth, c * dth, zero], axis=-1)
        ddr = a * np.stack(
            [-sn * ddth - c * dth**2, c * ddth - sn * dth**2, zero], axis=-1
        )
        # knots reproduce hole_position exactly, independent of trig roundoff
        if s.ndim == 0:
            hit = np.flatnonzero(self.knot_s == s)
            if hit.size:
                r = self.knot_points[hit[0]].copy()
        else:
            idx = np.searchsorted(self.knot_s, s)
            idx = np.clip(idx, 0, len(self.knot_s) - 1)
            hit = self.knot_s[idx] == s
            r[hit] = self.knot_points[idx[hit]]
        return r, dr, ddr

    def r(self, s) -> np.ndarray:
        return self.evaluate(s)[0]


def build_cable_path(spec: RobotSpec, routing: CableRouting) -> CablePath:
    return CablePath(spec, routing)


@dataclass
class BackboneCurve:
    """A solved pose sampled along the backbone.

    ``station_idx`` indexes the samples at the base plate and each disc.
    ``v`` and ``u`` are ``None`` for the four-bar model.
    """

    s: np.ndarray
    p: np.ndarray
    R: np.ndarray
    station_idx: np.ndarray
    v: np.ndarray | None = None
    u: np.ndarray | None = None
    diagnostics: dict[str, Any] = field(default_factory=dict)

    @property
    def tip(self) -> np.ndarray:
        return self.p[-1]

    @property
    def disc_centers(self) -> np.ndarray:
        """Centers of discs 1..n (base plate excluded)."""
        return self.p[self.station_idx[1:]]

    @property
    def disc_frames(self) -> np.ndarray:
        return self.R[self.station_idx[1:]]

    def transformed(self, Q: np.ndarray, t: np.ndarray | None = None) -> "BackboneCurve":
        t = np.zeros(3) if t is None else np.asarray(t)
        return BackboneCurve(
            s=self.s.copy(),
            p=self.p @ Q.T + t,
            R=np.einsum("ij,njk->nik", Q, self.R),
            station_idx=self.station_idx.copy(),
            v=None if self.v is None else self.v.copy(),
            u=None if self.u is None else self.u.copy(),
            diagnostics=dict(self.diagnostics),
        )

    def orthonormality_error(self) -> float:
        eye = np.eye(3)
        err = np.einsum("nji,njk->nik", self.R, self.R) - eye
        return float(np.max(np.linalg.norm(err, axis=(1, 2))))


def straight_curve(spec: RobotSpec, n_samples: int | None = None) -> BackboneCurve:
    """Undeformed robot sampled at the stations (or a finer uniform grid)."""
    if n_samples is None:
        s = spec.station_s
        idx = np.arange(len(s))
    else:
        per = max(1, int(np.ceil((n_samples - 1) / spec.num_discs)))
        s = np.linspace(0.0, spec.backbone_length, per * spec.num_discs + 1)
        idx = np.arange(spec.num_discs + 1) * per
    p = np.zeros((len(s), 3))
    p[:, 2] = s
    R = np.broadcast_to(np.eye(3), (len(s), 3, 3)).copy()
    return BackboneCurve(s=s, p=p, R=R, station_idx=idx)


def cable_points(curve: BackboneCurve, path: CablePath) -> np.ndarray:
    """World-frame hole points at the base and every disc."""
    idx = curve.station_idx
    r = path.knot_points
    return curve.p[idx] + np.einsum("nij,nj->ni", curve.R[idx], r)


def cable_length(curve: BackboneCurve, path: CablePath, spec: RobotSpec | None = None) -> float:
    """Length of the straight-between-discs cable polyline from base to tip."""
    pts = cable_points(curve, path)
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def undeformed_cable_length(spec: RobotSpec, path: CablePath) -> float:
    return cable_length(straight_curve(spec), path, spec)


# --- file formats -----------------------------------------------------------


def _require(cfg: Mapping[str, Any], key: str, kind, where: str):
    if key not in cfg:
        raise ConfigError(f"{where}: missing field '{key}'")
    val = cfg[key]
    if isinstance(val, bool) or not isinstance(val, kind):
        raise ConfigError(f"{where}: field '{key}' has wrong type {type(val).__name__}")
    return val


def build_spec(config: Mapping[str, Any] | str | Path) -> RobotSpec:
    """Build a validated spec from a robot config mapping or JSON file path."""
    where = "robot config"
    if isinstance(config, (str, Path)):
        where = str(config)
        config = _read_json(config)
    if not isinstance(config, Mapping):
        raise ConfigError(f"{where}: expected a JSON object")
    num = (int, float)
    n_discs = _require(config, "num_discs", int, where)
    n_holes = _require(config, "holes_per_disc", int, where)
    return RobotSpec(
        backbone_length=_require(config, "backbone_length_mm", num, where) * 1e-3,
        backbone_diameter=_require(config, "backbone_diameter_mm", num, where) * 1e-3,
        num_discs=n_discs,
        hole_radius=_require(config, "hole_radius_mm", num, where) * 1e-3,
        holes_per_disc=n_holes,
        youngs_modulus=_require(config, "youngs_modulus_gpa", num, where) * 1e9,
        poisson_ratio=float(_require(config, "poisson_ratio", num, where)),
    )


def spec_to_config(spec: RobotSpec) -> dict[str, Any]:
    return {
        "backbone_length_mm": spec.backbone_length * 1e3,
        "backbone_diameter_mm": spec.backbone_diameter * 1e3,
        "num_discs": spec.num_discs,
        "hole_radius_mm": spec.hole_radius * 1e3,
        "holes_per_disc": spec.holes_per_disc,
        "youngs_modulus_gpa": spec.youngs_modulus * 1e-9,
        "poisson_ratio": spec.poisson_ratio,
    }


def load_routing(config: Mapping[str, Any] | str | Path, spec: RobotSpec | None = None) -> CableRouting:
    where = "routing"
    if isinstance(config, (str, Path)):
        where = str(config)
        config = _read_json(config)
    if not isinstance(config, Mapping):
        raise ConfigError(f"{where}: expected a JSON object")
    name = _require(config, "name", str, where)
    holes = _require(config, "holes", list, where)
    if not all(isinstance(h, int) and not isinstance(h, bool) for h in holes):
        raise ConfigError(f"{where}: field 'holes' must be a list of integers")
    tension_g = config.get("tension_g")
    pct = config.get("length_reduction_pct")
    for key, val in (("tension_g", tension_g), ("length_reduction_pct", pct)):
        if val is not None and (isinstance(val, bool) or not isinstance(val, (int, float))):
            raise ConfigError(f"{where}: field '{key}' must be a number or null")
    routing = CableRouting(
        name=name,
        holes=tuple(holes),
        tension=None if tension_g is None else grams_to_newtons(tension_g),
        length_reduction=None if pct is None else pct / 100.0,
    )
    if spec is not None:
        routing.validate(spec)
    return routing


def routing_to_config(routing: CableRouting) -> dict[str, Any]:
    return {
        "name": routing.name,
        "holes": list(routing.holes),
        "tension_g": None if routing.tension is None else routing.tension / GRAVITY * 1e3,
        "length_reduction_pct": None
        if routing.length_reduction is None
        else routing.length_reduction * 100.0,
    }


def grams_to_newtons(grams: float) -> float:
    return grams * 1e-3 * GRAVITY


def _read_json(path: str | Path) -> Any:
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read ({exc.strerror})") from exc


FIXTURE_DIR = Path(__file__).parent / "fixtures"
STOCK_ROUTINGS = ("I", "II", "III", "IV", "V", "VI")


def reference_spec() -> RobotSpec:
    return build_spec(FIXTURE_DIR / "reference_robot.json")


def stock_routing(name: str, spec: RobotSpec | None = None) -> CableRouting:
    return load_routing(FIXTURE_DIR / f"routing_{name}.json", spec)


def stock_routings(spec: RobotSpec | None = None) -> list[CableRouting]:
    return [stock_routing(n, spec) for n in STOCK_ROUTINGS]


def skew(w: Sequence[float] | np.ndarray) -> np.ndarray:
    """Hat map, batched over leading axes."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out
