import numpy as np
import pytest

from ccr import cosserat
from ccr.cosserat import (
    CosseratOptions,
    ShootingError,
    StrainState,
    boundary_residual,
    integrate,
    internal_loads,
    shoot,
    strain_rates,
)
from ccr.model import build_cable_path, straight_curve
from conftest import rotation

TAU = 3.924


def path_of(spec, routings, name):
    return build_cable_path(spec, routings[name])


class TestStrainRates:
    def test_unloaded_reference_is_stationary(self, spec):
        v = np.array([[0.0, 0.0, 1.0]])
        u = np.zeros((1, 3))
        r = np.array([[0.008, 0.0, 0.0]])
        dv, du = strain_rates(v, u, r, np.zeros_like(r), np.zeros_like(r), [0.0], spec.stiffness)
        np.testing.assert_allclose(dv, 0, atol=1e-15)
        np.testing.assert_allclose(du, 0, atol=1e-15)

    def test_batch_matches_single(self, spec):
        rng = np.random.default_rng(3)
        v = np.array([0, 0, 1.0]) + 0.01 * rng.standard_normal((4, 3))
        u = rng.standard_normal((4, 3))
        r = np.array([[0.008, 0, 0], [0, 0.008, 0]])
        dr = 0.01 * rng.standard_normal((2, 3))
        ddr = 0.1 * rng.standard_normal((2, 3))
        dv, du = strain_rates(v, u, r, dr, ddr, [1.0, 2.0], spec.stiffness)
        for b in range(4):
            dvb, dub = strain_rates(v[b : b + 1], u[b : b + 1], r, dr, ddr, [1.0, 2.0], spec.stiffness)
            np.testing.assert_allclose(dvb[0], dv[b], rtol=1e-12)
            np.testing.assert_allclose(dub[0], du[b], rtol=1e-12)


class TestIntegrate:
    def test_reference_strain_gives_straight_rod(self, spec, routings):
        path = path_of(spec, routings, "I")
        curve = integrate(StrainState.reference(), [path], [0.0], spec)
        ref = straight_curve(spec)
        np.testing.assert_allclose(curve.disc_centers, ref.disc_centers, atol=1e-15)

    def test_straight_guess_residual(self, spec, routings):
        # straight rod, cable on hole 1: tip force tau*e3 and moment -tau*a about y unbalanced
        path = path_of(spec, routings, "I")
        curve = integrate(StrainState.reference(), [path], [TAU], spec)
        res = boundary_residual(curve, [path], [TAU], spec.stiffness)
        np.testing.assert_allclose(res, [0, 0, TAU, 0, -TAU * 0.008, 0], atol=1e-12)

    def test_rk4_order(self, spec, routings):
        path = path_of(spec, routings, "I")
        x = StrainState.from_vector(np.array([0, 0, 1.0, 0, 7.0, 0]))
        ref = integrate(x, [path], [TAU], spec, step_count=5120).tip
        ns = np.array([40, 80, 160, 320])
        errs = [np.linalg.norm(integrate(x, [path], [TAU], spec, step_count=n).tip - ref) for n in ns]
        slope = np.polyfit(np.log(1.0 / ns), np.log(errs), 1)[0]
        assert slope == pytest.approx(4.0, abs=0.3)

    def test_rejects_coarse_grid(self, spec, routings):
        with pytest.raises(ValueError):
            integrate(StrainState.reference(), [path_of(spec, routings, "I")], [0.0], spec, step_count=20)


class TestShoot:
    def test_zero_tension_is_identity(self, spec, routings):
        for name in routings:
            curve = shoot([path_of(spec, routings, name)], [0.0], spec)
            assert curve.diagnostics["iterations"] == 0
            assert np.max(np.abs(curve.disc_centers[:, :2])) < 1e-12

    def test_converges_at_400g(self, cosserat_400):
        for name, curve in cosserat_400.items():
            assert curve.diagnostics["residual_norm"] < 1e-8, name
            assert curve.diagnostics["iterations"] <= 50

    def test_routing_one_is_planar(self, spec, cosserat_400):
        curve = cosserat_400["I"]
        assert np.max(np.abs(curve.p[:, 1])) < 1e-9 * spec.backbone_length
        # bends toward the cable side (+x)
        assert curve.tip[0] > 0.05

    def test_rotations_orthonormal(self, cosserat_400):
        for curve in cosserat_400.values():
            assert curve.orthonormality_error() < 1e-8

    @pytest.mark.parametrize("name", ["I", "V"])
    def test_global_equilibrium(self, spec, routings, cosserat_400, name):
        # cutting rod and cable at s: n(s) = -tau t(s), m(s) = -(R r) x tau t(s)
        curve = cosserat_400[name]
        path = path_of(spec, routings, name)
        r, dr, _ = path.evaluate(curve.s)
        pb = np.cross(curve.u, r) + dr + curve.v
        t = np.einsum("kij,kj->ki", curve.R, pb)
        t /= np.linalg.norm(t, axis=1, keepdims=True)
        n, m = internal_loads(curve.R, curve.v, curve.u, spec.stiffness)
        Rr = np.einsum("kij,kj->ki", curve.R, r)
        np.testing.assert_allclose(n, -TAU * t, atol=1e-6 * TAU)
        np.testing.assert_allclose(m, -np.cross(Rr, TAU * t), atol=1e-6 * TAU * 0.008)

    def test_small_load_is_linear(self, spec, routings):
        path = path_of(spec, routings, "III")
        # lateral tip deflection is first order in tau; axial shortening is not
        d1 = shoot([path], [0.01], spec).tip[:2]
        d2 = shoot([path], [0.02], spec).tip[:2]
        np.testing.assert_allclose(d2, 2 * d1, rtol=2e-3)

    def test_continuation_matches_direct(self, spec, routings, cosserat_400):
        path = path_of(spec, routings, "II")
        ramp = cosserat.continuation_solve([path], [TAU], spec, n_steps=3)
        np.testing.assert_allclose(ramp.p, cosserat_400["II"].p, atol=1e-9)

    def test_rigid_equivariance(self, spec, routings, cosserat_400):
        Q = rotation([0.3, -0.5, 0.8], 1.1)
        path = path_of(spec, routings, "VI")
        moved = shoot([path], [TAU], spec, base_rotation=Q)
        base = cosserat_400["VI"]
        np.testing.assert_allclose(moved.p, base.p @ Q.T, atol=1e-8)
        np.testing.assert_allclose(moved.R, Q @ base.R, atol=1e-8)

    def test_deterministic(self, spec, routings):
        path = path_of(spec, routings, "IV")
        a = shoot([path], [TAU], spec)
        b = shoot([path], [TAU], spec)
        assert np.array_equal(a.p, b.p) and np.array_equal(a.R, b.R)

    def test_iteration_cap(self, spec, routings):
        with pytest.raises(ShootingError) as info:
            shoot([path_of(spec, routings, "II")], [TAU], spec, CosseratOptions(max_iterations=1))
        assert info.value.best_residual > 1e-8
        assert info.value.guess.shape == (6,)

    def test_rejects_bad_tension(self, spec, routings):
        with pytest.raises(ValueError):
            shoot([path_of(spec, routings, "I")], [-1.0], spec)
        with pytest.raises(ValueError):
            shoot([path_of(spec, routings, "I")], [1.0, 2.0], spec)

    def test_two_opposing_cables_cancel(self, spec, routings):
        from ccr.model import CableRouting

        a = build_cable_path(spec, CableRouting("a", (1,) * 10))
        b = build_cable_path(spec, CableRouting("b", (7,) * 10))
        curve = shoot([a, b], [1.0, 1.0], spec)
        # pure axial compression
        assert np.max(np.abs(curve.p[:, :2])) < 1e-12
        assert curve.tip[2] < 0.18


class TestOptions:
    @pytest.mark.parametrize("kw", [{"step_count": 10}, {"tolerance": 0.0}, {"max_iterations": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            CosseratOptions(**kw)
