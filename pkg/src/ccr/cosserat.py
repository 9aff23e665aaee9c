"""Static Cosserat rod model of a tendon-actuated backbone, solved by shooting.

The backbone state is (p, R, v, u).  Cable loads enter through the coupled
6x6 system for (v', u') and through the tip point loads of tip-terminated
cables.  The boundary value problem is closed by shooting on (v(0), u(0))
with a damped Newton iteration and a forward-difference Jacobian.

All kernels are batched over a leading axis so the nominal integration and
the six Jacobian perturbations share one vectorized pass.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .model import BackboneCurve, CablePath, MaterialStiffness, RobotSpec, skew

E3 = np.array([0.0, 0.0, 1.0])


class CosseratError(RuntimeError):
    """Integration failed (singular strain-rate system)."""

    def __init__(self, msg: str, s: float | None = None, cond: float | None = None):
        super().__init__(msg)
        self.s = s
        self.cond = cond


class ShootingError(RuntimeError):
    """Newton shooting did not reach the residual tolerance."""

    def __init__(self, msg: str, best_residual: float, guess: np.ndarray, iterations: int):
        super().__init__(msg)
        self.best_residual = best_residual
        self.guess = guess
        self.iterations = iterations


@dataclass(frozen=True)
class StrainState:
    v: np.ndarray
    u: np.ndarray

    @classmethod
    def reference(cls) -> "StrainState":
        return cls(E3.copy(), np.zeros(3))

    @classmethod
    def from_vector(cls, x: np.ndarray) -> "StrainState":
        x = np.asarray(x, dtype=float)
        return cls(x[:3].copy(), x[3:6].copy())

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.v, self.u])


@dataclass(frozen=True)
class TipLoads:
    F: np.ndarray
    T: np.ndarray


@dataclass
class ShootingState:
    guess: np.ndarray
    residual: np.ndarray
    iterations: int = 0
    step_norm: float = 0.0

    @property
    def residual_norm(self) -> float:
        return float(np.linalg.norm(self.residual))


@dataclass(frozen=True)
class CosseratOptions:
    step_count: int = 200
    tolerance: float = 1e-8
    max_iterations: int = 50
    max_halvings: int = 8
    fd_step: float = 1e-6
    continuation_steps: int = 1

    def __post_init__(self):
        if self.step_count < 40:
            raise ValueError("step_count must be >= 40")
        if self.tolerance <= 0 or self.fd_step <= 0:
            raise ValueError("tolerance and fd_step must be positive")
        if self.max_iterations < 1 or self.max_halvings < 0 or self.continuation_steps < 1:
            raise ValueError("iteration limits must be positive")


@dataclass
class CableSamples:
    """r, r', r'' for every cable at a set of arclengths: arrays (n_s, n_c, 3)."""

    s: np.ndarray
    r: np.ndarray
    dr: np.ndarray
    ddr: np.ndarray

    @classmethod
    def from_paths(cls, paths: Sequence[CablePath], s: np.ndarray) -> "CableSamples":
        ev = [p.evaluate(s) for p in paths]
        if not ev:
            z = np.zeros((len(s), 0, 3))
            return cls(s, z, z.copy(), z.copy())
        r, dr, ddr = (np.stack([e[k] for e in ev], axis=1) for k in range(3))
        return cls(s, r, dr, ddr)


def _cross(a, b):
    return np.cross(a, b)


def strain_rates(v, u, r, dr, ddr, tensions, stiffness: MaterialStiffness, s: float = np.nan):
    """Solve the coupled 6x6 system for (v', u').

    ``v``, ``u`` have shape (B, 3); ``r``, ``dr``, ``ddr`` have shape (n_c, 3).
    Returns v', u' of shape (B, 3).
    """
    K_se, K_bt = stiffness.K_se, stiffness.K_bt
    tau = np.asarray(tensions, dtype=float)
    B = v.shape[0]
    M = np.zeros((B, 6, 6))
    M[:, :3, :3] = K_se
    M[:, 3:, 3:] = K_bt
    n_se = (v - E3) @ K_se.T
    c = -_cross(u, u @ K_bt.T) - _cross(v, n_se)
    d = -_cross(u, n_se)
    active = tau != 0
    if np.any(active):
        tau, r, dr, ddr = tau[active], r[active], dr[active], ddr[active]
        pb = _cross(u[:, None, :], r[None]) + dr[None] + v[:, None, :]  # (B, n, 3)
        nrm = np.linalg.norm(pb, axis=-1)
        ph = skew(pb)
        A_i = -(tau / nrm**3)[..., None, None] * (ph @ ph)  # (B, n, 3, 3)
        rh = skew(r)  # (n, 3, 3)
        w = _cross(u[:, None, :], pb) + _cross(u[:, None, :], dr[None]) + ddr[None]
        a_i = np.einsum("bnij,bnj->bni", A_i, w)
        G = -np.einsum("bnij,njk->bik", A_i, rh)
        M[:, :3, :3] += A_i.sum(axis=1)
        M[:, :3, 3:] = G
        M[:, 3:, :3] = np.swapaxes(G, 1, 2)
        M[:, 3:, 3:] -= np.einsum("nij,bnjk,nkl->bil", rh, A_i, rh)
        d = d - a_i.sum(axis=1)
        c = c - _cross(r[None], a_i).sum(axis=1)
    rhs = np.concatenate([d, c], axis=1)
    try:
        sol = np.linalg.solve(M, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        sol = np.full_like(rhs, np.nan)
    if not np.all(np.isfinite(sol)):
        cond = float(np.max(np.linalg.cond(M)))
        raise CosseratError(f"singular strain-rate system at s={s:.6g} (cond={cond:.3g})", s, cond)
    return sol[:, :3], sol[:, 3:]


def ode_rhs(s, p, R, state: StrainState, paths: Sequence[CablePath], tensions, stiffness):
    """Unbatched derivatives (p', R', v', u') at arclength ``s``."""
    cab = CableSamples.from_paths(paths, np.array([s]))
    v, u = state.v[None], state.u[None]
    dv, du = strain_rates(v, u, cab.r[0], cab.dr[0], cab.ddr[0], tensions, stiffness, s)
    return R @ state.v, R @ skew(state.u), dv[0], du[0]


def _project_rotations(R):
    U, _, Vt = np.linalg.svd(R)
    out = U @ Vt
    # guard against reflections (never expected for small steps)
    neg = np.linalg.det(out) < 0
    if np.any(neg):
        U[neg, :, -1] *= -1
        out[neg] = U[neg] @ Vt[neg]
    return out


def _station_grid(spec: RobotSpec, step_count: int) -> int:
    """Round the step count up so every disc lands on the grid."""
    n = spec.num_discs
    return int(np.ceil(step_count / n)) * n


def integrate_batch(
    x0: np.ndarray,
    cables: CableSamples,
    tensions,
    spec: RobotSpec,
    keep_path: bool = True,
    base_rotation: np.ndarray | None = None,
):
    """RK4 from p=0, R=R0 (identity by default) for a batch of initial strains ``x0`` (B, 6).

    ``cables`` must be sampled on the half-step grid ``s = j*h/2``.
    Returns arrays with shape (n_steps+1, B, ...) or only the final states.
    """
    stiff = spec.stiffness
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    B = x0.shape[0]
    n_half = len(cables.s) - 1
    n_steps = n_half // 2
    h = spec.backbone_length / n_steps
    p = np.zeros((B, 3))
    R0 = np.eye(3) if base_rotation is None else np.asarray(base_rotation, dtype=float)
    R = np.broadcast_to(R0, (B, 3, 3)).copy()
    v, u = x0[:, :3].copy(), x0[:, 3:].copy()
    if keep_path:
        P = np.empty((n_steps + 1, B, 3))
        RR = np.empty((n_steps + 1, B, 3, 3))
        V = np.empty((n_steps + 1, B, 3))
        U = np.empty((n_steps + 1, B, 3))
        P[0], RR[0], V[0], U[0] = p, R, v, u

    def f(j, p, R, v, u):
        dv, du = strain_rates(
            v, u, cables.r[j], cables.dr[j], cables.ddr[j], tensions, stiff, cables.s[j]
        )
        return np.einsum("bij,bj->bi", R, v), R @ skew(u), dv, du

    for k in range(n_steps):
        j = 2 * k
        k1 = f(j, p, R, v, u)
        k2 = f(j + 1, p + 0.5 * h * k1[0], R + 0.5 * h * k1[1], v + 0.5 * h * k1[2], u + 0.5 * h * k1[3])
        k3 = f(j + 1, p + 0.5 * h * k2[0], R + 0.5 * h * k2[1], v + 0.5 * h * k2[2], u + 0.5 * h * k2[3])
        k4 = f(j + 2, p + h * k3[0], R + h * k3[1], v + h * k3[2], u + h * k3[3])
        p = p + h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        R = R + h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        v = v + h / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])
        u = u + h / 6.0 * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3])
        R = _project_rotations(R)
        if keep_path:
            P[k + 1], RR[k + 1], V[k + 1], U[k + 1] = p, R, v, u
    if keep_path:
        return P, RR, V, U
    return p, R, v, u


def sample_cables(paths: Sequence[CablePath], spec: RobotSpec, step_count: int) -> CableSamples:
    n = _station_grid(spec, step_count)
    s = np.linspace(0.0, spec.backbone_length, 2 * n + 1)
    return CableSamples.from_paths(paths, s)


def integrate(
    initial: StrainState,
    paths: Sequence[CablePath],
    tensions,
    spec: RobotSpec,
    step_count: int = 200,
    cables: CableSamples | None = None,
    base_rotation: np.ndarray | None = None,
) -> BackboneCurve:
    """Integrate one initial strain state into a sampled backbone curve."""
    if step_count < 40:
        raise ValueError("step_count must be >= 40")
    if cables is None:
        cables = sample_cables(paths, spec, step_count)
    P, RR, V, U = integrate_batch(
        initial.as_vector()[None], cables, tensions, spec, base_rotation=base_rotation
    )
    n_steps = P.shape[0] - 1
    s = cables.s[::2]
    per = n_steps // spec.num_discs
    return BackboneCurve(
        s=s,
        p=P[:, 0],
        R=RR[:, 0],
        station_idx=np.arange(spec.num_discs + 1) * per,
        v=V[:, 0],
        u=U[:, 0],
    )


def tip_loads(R, v, u, r, dr, tensions) -> TipLoads:
    """Summed tip force and moment of cables terminating at s=L.

    ``R`` is (B, 3, 3), ``v`` and ``u`` are (B, 3); ``r``, ``dr`` are (n_c, 3).
    """
    B = R.shape[0]
    F = np.zeros((B, 3))
    T = np.zeros((B, 3))
    for tau, ri, dri in zip(tensions, r, dr):
        if tau == 0:
            continue
        pb = np.cross(u, ri) + dri + v
        pdot = np.einsum("bij,bj->bi", R, pb)
        t_hat = pdot / np.linalg.norm(pdot, axis=1, keepdims=True)
        Fi = -tau * t_hat
        F += Fi
        T += np.cross(np.einsum("bij,j->bi", R, ri), Fi)
    return TipLoads(F, T)


def internal_loads(R, v, u, stiffness: MaterialStiffness):
    """World-frame backbone internal force and moment, batched."""
    n = np.einsum("...ij,...j->...i", R, (v - E3) @ stiffness.K_se.T)
    m = np.einsum("...ij,...j->...i", R, u @ stiffness.K_bt.T)
    return n, m


def _residual_batch(R, v, u, cables: CableSamples, tensions, stiffness):
    loads = tip_loads(R, v, u, cables.r[-1], cables.dr[-1], tensions)
    n, m = internal_loads(R, v, u, stiffness)
    return np.concatenate([n - loads.F, m - loads.T], axis=1)


def boundary_residual(curve: BackboneCurve, paths: Sequence[CablePath], tensions, stiffness) -> np.ndarray:
    """(n(L) - F(L), m(L) - T(L)) for an integrated curve."""
    L = curve.s[-1]
    cab = CableSamples.from_paths(paths, np.array([L]))
    return _residual_batch(
        curve.R[-1][None], curve.v[-1][None], curve.u[-1][None], cab, tensions, stiffness
    )[0]


def shoot(
    paths: Sequence[CablePath],
    tensions,
    spec: RobotSpec,
    options: CosseratOptions | None = None,
    guess: np.ndarray | StrainState | None = None,
    base_rotation: np.ndarray | None = None,
) -> BackboneCurve:
    """Find (v(0), u(0)) zeroing the tip residual; return the converged curve."""
    opts = options or CosseratOptions()
    tensions = np.asarray(tensions, dtype=float)
    if tensions.shape != (len(paths),):
        raise ValueError("one tension per cable path is required")
    if not np.all(np.isfinite(tensions)) or np.any(tensions < 0):
        raise ValueError("tensions must be finite and non-negative")
    t0 = time.perf_counter()
    cables = sample_cables(paths, spec, opts.step_count)
    stiff = spec.stiffness
    if guess is None:
        x = StrainState.reference().as_vector()
    elif isinstance(guess, StrainState):
        x = guess.as_vector()
    else:
        x = np.asarray(guess, dtype=float).copy()

    def residuals(X):
        p, R, v, u = integrate_batch(
            X, cables, tensions, spec, keep_path=False, base_rotation=base_rotation
        )
        return _residual_batch(R, v, u, cables, tensions, stiff)

    state = ShootingState(guess=x, residual=residuals(x[None])[0])
    best = (state.residual_norm, x.copy())
    history = [state.residual_norm]
    while state.residual_norm >= opts.tolerance:
        if state.iterations >= opts.max_iterations:
            raise ShootingError(
                f"shooting did not converge in {opts.max_iterations} iterations "
                f"(best residual {best[0]:.3g})",
                best[0], best[1], state.iterations,
            )
        X = np.repeat(x[None], 7, axis=0)
        X[1:] += opts.fd_step * np.eye(6)
        g = residuals(X)
        g0 = g[0]
        J = (g[1:] - g0).T / opts.fd_step
        scale = np.linalg.norm(J, axis=0)
        if np.any(scale == 0):
            raise ShootingError(
                "singular shooting Jacobian; try tension continuation", best[0], best[1], state.iterations
            )
        try:
            y = np.linalg.solve(J / scale, -g0)
        except np.linalg.LinAlgError:
            raise ShootingError(
                "singular shooting Jacobian; try tension continuation", best[0], best[1], state.iterations
            ) from None
        dx = y / scale
        f0 = np.linalg.norm(g0)
        alphas = 0.5 ** np.arange(opts.max_halvings + 1)
        trial = residuals((x + dx)[None])[0]
        accepted = None
        if np.linalg.norm(trial) < f0:
            accepted = (1.0, trial)
        elif opts.max_halvings:
            trials = residuals(x[None] + alphas[1:, None] * dx[None])
            norms = np.linalg.norm(trials, axis=1)
            ok = np.flatnonzero(norms < f0)
            if ok.size:
                accepted = (alphas[1 + ok[0]], trials[ok[0]])
        if accepted is None:
            raise ShootingError(
                f"line search failed after {opts.max_halvings} halvings "
                f"(residual {f0:.3g}); try tension continuation",
                best[0], best[1], state.iterations,
            )
        alpha, res = accepted
        x = x + alpha * dx
        state = ShootingState(x, res, state.iterations + 1, float(np.linalg.norm(alpha * dx)))
        history.append(state.residual_norm)
        if state.residual_norm < best[0]:
            best = (state.residual_norm, x.copy())

    curve = integrate(
        StrainState.from_vector(x), paths, tensions, spec, opts.step_count, cables, base_rotation
    )
    curve.diagnostics = {
        "solver": "cosserat",
        "iterations": state.iterations,
        "residual_norm": state.residual_norm,
        "residual": state.residual.tolist(),
        "residual_history": history,
        "initial_strain": x.tolist(),
        "step_count": int(curve.s.size - 1),
        "wall_time_s": time.perf_counter() - t0,
    }
    return curve


def continuation_solve(
    paths: Sequence[CablePath],
    target_tensions,
    spec: RobotSpec,
    n_steps: int = 4,
    options: CosseratOptions | None = None,
    guess=None,
) -> BackboneCurve:
    """Ramp tensions linearly to the target, warm-starting each shoot."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    opts = options or CosseratOptions()
    target = np.asarray(target_tensions, dtype=float)
    t0 = time.perf_counter()
    iters = 0
    curve = None
    for k in range(1, n_steps + 1):
        frac = k / n_steps
        try:
            curve = shoot(paths, frac * target, spec, opts, guess)
        except (ShootingError, CosseratError) as exc:
            raise type(exc)(*_reraise_args(exc, f"at ramp fraction {frac:.3g}")) from exc
        iters += curve.diagnostics["iterations"]
        guess = curve.diagnostics["initial_strain"]
    curve.diagnostics["continuation_steps"] = n_steps
    curve.diagnostics["total_iterations"] = iters
    curve.diagnostics["wall_time_s"] = time.perf_counter() - t0
    return curve


def _reraise_args(exc, suffix):
    msg = f"{exc} {suffix}"
    if isinstance(exc, ShootingError):
        return (msg, exc.best_residual, exc.guess, exc.iterations)
    return (msg, exc.s, exc.cond)


def solve(
    paths: Sequence[CablePath],
    tensions,
    spec: RobotSpec,
    options: CosseratOptions | None = None,
    guess=None,
) -> BackboneCurve:
    """Shoot directly; fall back to tension continuation if that fails."""
    opts = options or CosseratOptions()
    if opts.continuation_steps > 1:
        return continuation_solve(paths, tensions, spec, opts.continuation_steps, opts, guess)
    try:
        return shoot(paths, tensions, spec, opts, guess)
    except (ShootingError, CosseratError):
        return continuation_solve(paths, tensions, spec, 4, opts, guess)


def with_options(options: CosseratOptions | None, **kw) -> CosseratOptions:
    return replace(options or CosseratOptions(), **kw)
