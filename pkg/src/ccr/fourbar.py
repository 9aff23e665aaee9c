"""Sequential four-bar kinematic model.

Each segment between two consecutive stations is a virtual four-bar linkage:
the current disc (center and hole) is the fixed link, the next disc is the
coupler, the backbone and cable segments are the side links.  The coupler
pose minimizes the squared angles between the fixed link and the coupler
(plus the matching out-of-plane pair built from cross products) subject to
the three length constraints.  Segments are solved base to tip, each solved
disc becoming the fixed link of the next segment.

The length constraints alone leave a zero-cost motion: the next disc can
slide along its own hole direction without turning.  A fourth equality pins
the hole direction into the arc-consistent disc plane, whose normal is the
current normal reflected about the backbone chord.

Internally each segment is solved in coordinates relative to the current
disc center and scaled by the segment length ``l0``.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .model import BackboneCurve, CableRouting, RobotSpec, build_cable_path, hole_angle

CROSS_EPS = 1e-12


def _cross(a, b):
    return np.array(
        [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
    )


def _norm(a) -> float:
    return math.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])


class FourBarError(RuntimeError):
    """Segment optimization failed to meet its tolerances."""

    def __init__(self, msg: str, best=None, violations=None, segment: int | None = None):
        super().__init__(msg)
        self.best = best
        self.violations = violations
        self.segment = segment


class OverActuationError(ValueError):
    pass


@dataclass(frozen=True)
class FourBarOptions:
    penalty_start: float = 1e3
    penalty_growth: float = 10.0
    max_outer: int = 6
    constraint_tol: float = 1e-8  # m
    stationarity_tol: float = 1e-8  # scaled units, see SegmentSolution
    inner_gtol: float = 1e-9
    inner_maxiter: int = 400

    def __post_init__(self):
        if self.penalty_start <= 0 or self.penalty_growth <= 1 or self.max_outer < 1:
            raise ValueError("invalid penalty schedule")


@dataclass(frozen=True)
class SegmentProblem:
    """Data for one segment.

    ``X_a`` / ``X_a_next`` are locations of the hole the cable uses at the
    *next* disc, expressed in the current/undeformed-next disc; the coupler
    angle compares like with like.  ``cable_anchor`` is where the cable
    actually leaves the current disc (defaults to ``X_a``); the cable-length
    constraint is measured from it.
    """

    X_0: np.ndarray
    X_a: np.ndarray
    X_0_next: np.ndarray
    X_a_next: np.ndarray
    l0: float
    l_a: float
    a: float
    cable_anchor: np.ndarray | None = None
    enforce_arc: bool = True

    def __post_init__(self):
        for name in ("X_0", "X_a", "X_0_next", "X_a_next", "cable_anchor"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, np.asarray(val, dtype=float))
        if self.cable_anchor is None:
            object.__setattr__(self, "cable_anchor", self.X_a)
        if abs(np.linalg.norm(self.X_a - self.X_0) - self.a) > 1e-10:
            raise ValueError("|X_0 - X_a| must equal the hole radius")
        if not 0 < self.l_a <= self.l0 + 2 * self.a:
            raise ValueError("cable segment length outside (0, l0 + 2a]")

    @property
    def virtual_point(self) -> np.ndarray:
        return virtual_point(self.X_0, self.X_a, self.X_0_next, self.a)


@dataclass
class SegmentSolution:
    x_0: np.ndarray
    x_a: np.ndarray
    X_b: np.ndarray
    x_b: np.ndarray
    objective: float
    frame: np.ndarray
    violations: np.ndarray  # m, one per length constraint
    stationarity: float
    iterations: int
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def max_violation(self) -> float:
        return float(np.max(np.abs(self.violations)))


def virtual_point(X_0, X_a, X_0_next, a) -> np.ndarray:
    """Offset-anchored virtual vertex X_0 + a * unit((X_a - X_0) x (X_0_next - X_0))."""
    X_0 = np.asarray(X_0, dtype=float)
    w = np.cross(np.asarray(X_a) - X_0, np.asarray(X_0_next) - X_0)
    nrm = np.linalg.norm(w)
    scale = np.linalg.norm(np.asarray(X_a) - X_0) * np.linalg.norm(np.asarray(X_0_next) - X_0)
    if nrm <= CROSS_EPS * max(scale, 1.0) or nrm == 0.0:
        raise ValueError("virtual point undefined: hole direction parallel to segment")
    return X_0 + a * w / nrm


def _unit_or_none(w):
    nrm = np.linalg.norm(w)
    return None if nrm < CROSS_EPS else w / nrm


def _clamped_angle(u, v) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("zero-length link vector in coupler objective")
    return float(np.arccos(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0)))


def coupler_objective(x_0_next, x_a_next, problem: SegmentProblem) -> float:
    """Sum of squared coupler angles (rad^2) for a candidate next disc."""
    x_0, x_a = np.asarray(x_0_next, float), np.asarray(x_a_next, float)
    A = problem.X_0 - problem.X_a
    B = x_0 - x_a
    total = _clamped_angle(A, B) ** 2
    try:
        C = problem.X_0 - problem.virtual_point
    except ValueError:
        return total
    n_def = _deformed_normal(problem, x_0, x_a)
    if n_def is None:
        return total
    D = -problem.a * n_def  # x_0 - x_b with x_b = x_0 + a * n_def
    return total + _clamped_angle(C, D) ** 2


def _segment_direction(problem: SegmentProblem, x_0) -> np.ndarray:
    """Axis the deformed virtual point is built on: the arc-consistent normal
    of the next disc, or the raw chord when the arc constraint is off."""
    chord = x_0 - problem.X_0
    if not problem.enforce_arc:
        return chord
    z = problem.X_0_next - problem.X_0
    z = z / np.linalg.norm(z)
    ch = chord / np.linalg.norm(chord)
    return 2.0 * np.dot(ch, z) * ch - z


def _deformed_normal(problem: SegmentProblem, x_0, x_a):
    return _unit_or_none(np.cross(x_a - x_0, _segment_direction(problem, x_0)))


def _angle_sq_grad(ref_unit, w):
    """theta^2 between a fixed unit vector and ``w``, with its gradient wrt ``w``."""
    nw = _norm(w)
    wh = w / nw
    cos = ref_unit @ wh
    sin = _norm(_cross(ref_unit, wh))
    theta = math.atan2(sin, cos)
    factor = 2.0 if sin < 1e-300 else 2.0 * theta / sin
    grad = -factor * (ref_unit - cos * wh) / nw
    return theta * theta, grad


class _ScaledSegment:
    """Objective and constraints in coordinates y = (x - X_0) / l0."""

    def __init__(self, problem: SegmentProblem):
        self.problem = problem
        L = problem.l0
        self.L = L
        self.Xa = (problem.X_a - problem.X_0) / L
        self.anchor = (problem.cable_anchor - problem.X_0) / L
        self.lengths = np.array([1.0, problem.l_a / L, problem.a / L])
        A = -self.Xa
        self.A_hat = A / np.linalg.norm(A)
        axis = (problem.X_0_next - problem.X_0) / L
        self.z = axis / np.linalg.norm(axis)
        self.n_hat = _unit_or_none(np.cross(self.Xa, axis))
        self.n_constraints = 4 if problem.enforce_arc else 3

    def to_y(self, x0, xa):
        X0 = self.problem.X_0
        return np.concatenate([(x0 - X0) / self.L, (xa - X0) / self.L])

    def to_x(self, y):
        X0 = self.problem.X_0
        return X0 + self.L * y[:3], X0 + self.L * y[3:]

    def f_grad(self, y):
        y0, ya = y[:3], y[3:]
        g = np.zeros(6)
        B = y0 - ya
        f, gB = _angle_sq_grad(self.A_hat, B)
        g[:3] += gB
        g[3:] -= gB
        if self.n_hat is not None:
            b, c = ya - y0, y0
            if self.n_constraints == 4:
                nc = _norm(c)
                ch = c / nc
                z = self.z
                cz = ch @ z
                t = 2.0 * cz * ch - z
            else:
                t = c
            w = _cross(b, t)
            if _norm(w) >= CROSS_EPS:
                f2, gw = _angle_sq_grad(self.n_hat, w)
                gb = _cross(t, gw)
                q = _cross(gw, b)
                if self.n_constraints == 4:
                    # transpose of d(z_next)/dc applied to q
                    k = 2.0 * (z * (ch @ q) + cz * q)
                    gc = (k - ch * (ch @ k)) / nc
                else:
                    gc = q
                f += f2
                g[3:] += gb
                g[:3] += gc - gb
        return f, g

    def constraints(self, y):
        y0, ya = y[:3], y[3:]
        d = np.stack([y0, ya - self.anchor, y0 - ya])
        nrm = np.sqrt(np.einsum("ij,ij->i", d, d))
        c = nrm - self.lengths
        J = np.zeros((self.n_constraints, 6))
        u = d / nrm[:, None]
        J[0, :3] = u[0]
        J[1, 3:] = u[1]
        J[2, :3] = u[2]
        J[2, 3:] = -u[2]
        if self.n_constraints == 3:
            return c, J
        # hole stays in the plane of the arc-consistent next disc
        b, z = ya - y0, self.z
        ch = y0 / nrm[0]
        cz, cb = ch @ z, ch @ b
        z_next = 2.0 * cz * ch - z
        d_b = z_next
        d_c = 2.0 * (z * cb + b * cz - 2.0 * cz * cb * ch) / nrm[0]
        J[3, :3] = d_c - d_b
        J[3, 3:] = d_b
        return np.append(c, b @ z_next), J


def _augmented_lagrangian(seg: _ScaledSegment, y0: np.ndarray, opts: FourBarOptions, lam0=None):
    lam = np.zeros(seg.n_constraints) if lam0 is None else np.array(lam0, dtype=float)
    mu = opts.penalty_start
    y = y0.copy()
    tol_c = opts.constraint_tol / seg.L
    iters = 0
    stat = np.inf
    c = seg.constraints(y)[0]

    def fun(y, lam, mu):
        f, g = seg.f_grad(y)
        c, J = seg.constraints(y)
        val = f - lam @ c + 0.5 * mu * c @ c
        grad = g + J.T @ (mu * c - lam)
        return val, grad

    for outer in range(opts.max_outer):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = minimize(
                fun, y, args=(lam, mu), jac=True, method="BFGS",
                options={"gtol": opts.inner_gtol, "maxiter": opts.inner_maxiter},
            )
        y = res.x
        iters += int(res.nit)
        c, J = seg.constraints(y)
        lam = lam - mu * c
        f, g = seg.f_grad(y)
        stat = float(np.linalg.norm(g - J.T @ lam))
        if np.max(np.abs(c)) < tol_c and stat < opts.stationarity_tol:
            break
        mu *= opts.penalty_growth
    y, lam, c, stat, n_newton = _kkt_polish(seg, y, lam, opts)
    return y, lam, c * seg.L, stat, iters + n_newton


def _lagrangian_hessian(seg: _ScaledSegment, y, lam, h=1e-7):
    H = np.zeros((6, 6))
    for k in range(6):
        e = np.zeros(6)
        e[k] = h
        gp = seg.f_grad(y + e)[1] - seg.constraints(y + e)[1].T @ lam
        gm = seg.f_grad(y - e)[1] - seg.constraints(y - e)[1].T @ lam
        H[:, k] = (gp - gm) / (2 * h)
    return 0.5 * (H + H.T)


def _kkt_polish(seg: _ScaledSegment, y, lam, opts: FourBarOptions, max_iter: int = 8):
    """Newton steps on the KKT system to tighten the AL solution.

    Steps are kept only while they reduce the KKT residual, so a polish can
    never degrade the augmented-Lagrangian iterate.
    """

    def kkt(y, lam):
        f, g = seg.f_grad(y)
        c, J = seg.constraints(y)
        return g - J.T @ lam, c, J

    r, c, J = kkt(y, lam)
    err = np.linalg.norm(np.concatenate([r, c]))
    n = 0
    for _ in range(max_iter):
        if np.max(np.abs(c)) * seg.L < opts.constraint_tol * 1e-3 and np.linalg.norm(r) < opts.stationarity_tol * 1e-3:
            break
        H = _lagrangian_hessian(seg, y, lam)
        m = J.shape[0]
        K = np.zeros((6 + m, 6 + m))
        K[:6, :6] = H
        K[:6, 6:] = -J.T
        K[6:, :6] = J
        try:
            step = np.linalg.solve(K, -np.concatenate([r, c]))
        except np.linalg.LinAlgError:
            break
        y_new, lam_new = y + step[:6], lam + step[6:]
        r_new, c_new, J_new = kkt(y_new, lam_new)
        err_new = np.linalg.norm(np.concatenate([r_new, c_new]))
        if not err_new < err:
            break
        y, lam, r, c, J, err = y_new, lam_new, r_new, c_new, J_new, err_new
        n += 1
    return y, lam, c, float(np.linalg.norm(r)), n


def disc_frame(X_0_prev, x_0, x_a, hole_theta: float, z_prev=None) -> np.ndarray:
    """Disc rotation from the solved center, hole point and hole angle.

    The normal is the previous normal reflected about the chord (circular-arc
    segment) when ``z_prev`` is given, otherwise the chord itself; either way
    its component along the hole direction is removed.  The in-plane axes
    are rotated so the hole sits at its nominal angle, keeping local +X on
    hole 1.
    """
    b = x_a - x_0
    b = b / np.linalg.norm(b)
    chord = x_0 - X_0_prev
    if z_prev is not None:
        ch = chord / np.linalg.norm(chord)
        chord = 2.0 * np.dot(ch, z_prev) * ch - z_prev
    z = chord - np.dot(chord, b) * b
    z = z / np.linalg.norm(z)
    H = np.column_stack([b, np.cross(z, b), z])
    c, s = np.cos(hole_theta), np.sin(hole_theta)
    Rz_inv = np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])
    return H @ Rz_inv


def solve_segment(
    problem: SegmentProblem,
    initial_guess=None,
    options: FourBarOptions | None = None,
    hole_theta: float | None = None,
    initial_multipliers=None,
) -> SegmentSolution:
    """Minimize the coupler angles of one segment under the length constraints."""
    opts = options or FourBarOptions()
    seg = _ScaledSegment(problem)
    if initial_guess is None:
        x0g, xag = problem.X_0_next, problem.X_a_next
    else:
        x0g, xag = (np.asarray(g, float) for g in initial_guess)
    y, lam, viol, stat, iters = _augmented_lagrangian(
        seg, seg.to_y(x0g, xag), opts, initial_multipliers
    )
    x_0, x_a = seg.to_x(y)
    if hole_theta is None:
        hole_theta = 0.0
    frame = disc_frame(problem.X_0, x_0, x_a, hole_theta, seg.z if problem.enforce_arc else None)
    n_def = _deformed_normal(problem, x_0, x_a)
    x_b = x_0 if n_def is None else x_0 + problem.a * n_def
    try:
        X_b = problem.virtual_point
    except ValueError:
        X_b = problem.X_0.copy()
    sol = SegmentSolution(
        x_0=x_0,
        x_a=x_a,
        X_b=X_b,
        x_b=x_b,
        objective=coupler_objective(x_0, x_a, problem),
        frame=frame,
        violations=viol,
        stationarity=stat,
        iterations=iters,
        multipliers=lam,
    )
    if sol.max_violation >= opts.constraint_tol or stat >= opts.stationarity_tol:
        raise FourBarError(
            f"segment did not converge: violation {sol.max_violation:.3g} m, "
            f"stationarity {stat:.3g}",
            best=sol, violations=viol,
        )
    return sol


def undeformed_segment_lengths(routing: CableRouting, spec: RobotSpec) -> np.ndarray:
    """Straight cable chord lengths between consecutive stations."""
    path = build_cable_path(spec, routing)
    pts = path.knot_points.copy()
    pts[:, 2] = spec.station_s
    return np.linalg.norm(np.diff(pts, axis=0), axis=1)


def distribute_actuation(routing: CableRouting, spec: RobotSpec, delta: float | None = None) -> np.ndarray:
    """Deformed per-segment cable lengths under uniform fractional shortening."""
    delta = routing.length_reduction if delta is None else delta
    if delta is None:
        raise ValueError(f"routing {routing.name} has no length reduction")
    if not 0 <= delta < 1:
        raise ValueError("length reduction must lie in [0, 1)")
    lam = undeformed_segment_lengths(routing, spec)
    l_a = lam * (1.0 - delta)
    bound = max(spec.disc_spacing - 2.0 * spec.hole_radius, 0.0)
    if np.any(l_a <= bound):
        raise OverActuationError(
            f"routing {routing.name}: reduction {delta:.4g} leaves a cable segment "
            f"shorter than the feasible bound {bound:.4g} m"
        )
    return l_a


def _forward_guess(X0, D, Q_prev, l0, r_next):
    """Next disc guess by repeating the previous segment's relative rotation."""
    D_next = D @ Q_prev
    chord_dir = D @ _half_rotation(Q_prev) @ np.array([0.0, 0.0, 1.0])
    x0 = X0 + l0 * chord_dir
    return x0, x0 + D_next @ r_next


def _half_rotation(Q):
    from scipy.spatial.transform import Rotation

    rv = Rotation.from_matrix(Q).as_rotvec()
    return Rotation.from_rotvec(0.5 * rv).as_matrix()


def propagate(
    routing: CableRouting,
    spec: RobotSpec,
    delta: float | None = None,
    options: FourBarOptions | None = None,
    base_rotation: np.ndarray | None = None,
    base_position: np.ndarray | None = None,
    warm_start: BackboneCurve | None = None,
) -> BackboneCurve:
    """Solve all segments base to tip; return disc centers and frames."""
    opts = options or FourBarOptions()
    t0 = time.perf_counter()
    routing.validate(spec)
    l_a = distribute_actuation(routing, spec, delta)
    path = build_cable_path(spec, routing)
    holes = routing.station_holes()
    r_loc = path.knot_points
    thetas = [hole_angle(spec, h) for h in holes]
    l0, a = spec.disc_spacing, spec.hole_radius
    n = spec.num_discs

    D = np.eye(3) if base_rotation is None else np.asarray(base_rotation, float)
    X0 = np.zeros(3) if base_position is None else np.asarray(base_position, float)
    P = [X0.copy()]
    Rs = [D.copy()]
    seg_diag = []
    Q_prev = np.eye(3)
    ez = np.array([0.0, 0.0, 1.0])
    for i in range(n):
        anchor = X0 + D @ r_loc[i]
        X_a = X0 + D @ r_loc[i + 1]
        X0n = X0 + l0 * D @ ez
        Xan = X0n + D @ r_loc[i + 1]
        prob = SegmentProblem(X0, X_a, X0n, Xan, l0, l_a[i], a, cable_anchor=anchor)
        lam0 = None
        if warm_start is not None:
            Dw0, Dw1 = warm_start.R[i], warm_start.R[i + 1]
            Qw = Dw0.T @ Dw1
            guess = _forward_guess(X0, D, Qw, l0, r_loc[i + 1])
            lam0 = warm_start.diagnostics["segments"][i]["multipliers"]
        elif i > 0:
            guess = _forward_guess(X0, D, Q_prev, l0, r_loc[i + 1])
        else:
            guess = None
        try:
            sol = solve_segment(prob, guess, opts, hole_theta=thetas[i + 1], initial_multipliers=lam0)
        except FourBarError as exc:
            # retry from the undeformed guess before giving up
            try:
                sol = solve_segment(prob, None, opts, hole_theta=thetas[i + 1])
            except FourBarError:
                exc.segment = i + 1
                raise FourBarError(f"segment {i + 1}: {exc}", exc.best, exc.violations, i + 1) from exc
        Q_prev = D.T @ sol.frame
        D = sol.frame
        X0 = sol.x_0
        P.append(X0.copy())
        Rs.append(D.copy())
        seg_diag.append(
            {
                "segment": i + 1,
                "objective": sol.objective,
                "violations_m": sol.violations.tolist(),
                "stationarity": sol.stationarity,
                "iterations": sol.iterations,
                "multipliers": sol.multipliers.tolist(),
            }
        )
    s = spec.station_s
    curve = BackboneCurve(
        s=s, p=np.array(P), R=np.array(Rs), station_idx=np.arange(n + 1)
    )
    curve.diagnostics = {
        "solver": "fourbar",
        "length_reduction": float(routing.length_reduction if delta is None else delta),
        "segments": seg_diag,
        "max_violation_m": max(max(abs(v) for v in d["violations_m"]) for d in seg_diag),
        "wall_time_s": time.perf_counter() - t0,
    }
    return curve
