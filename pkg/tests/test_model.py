import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ccr.model import (
    GRAVITY,
    CableRouting,
    ConfigError,
    RobotSpec,
    ValidationError,
    build_cable_path,
    build_spec,
    cable_length,
    hole_angle,
    hole_position,
    load_routing,
    routing_to_config,
    skew,
    spec_to_config,
    straight_curve,
    undeformed_cable_length,
)
from conftest import rotation


class TestRobotSpec:
    def test_fixture_values(self, spec):
        assert spec.backbone_length == pytest.approx(0.18)
        assert spec.disc_spacing == pytest.approx(0.018)
        assert spec.hole_radius == pytest.approx(0.008)
        assert spec.num_discs == 10
        assert spec.holes_per_disc == 12

    def test_stiffness_of_circular_rod(self, spec):
        d, E, nu = 3e-3, 1.1e9, 0.3
        I = np.pi * d**4 / 64
        A = np.pi * d**2 / 4
        G = E / (2 * (1 + nu))
        K = spec.stiffness
        np.testing.assert_allclose(np.diag(K.K_bt), [E * I, E * I, G * 2 * I])
        np.testing.assert_allclose(np.diag(K.K_se), [G * A, G * A, E * A])

    @pytest.mark.parametrize(
        "field,value",
        [("backbone_length", -1.0), ("num_discs", 0), ("hole_radius", 0.0), ("poisson_ratio", 0.6)],
    )
    def test_rejects_invalid(self, spec, field, value):
        kw = {f: getattr(spec, f) for f in spec.__dataclass_fields__}
        kw[field] = value
        with pytest.raises(ValueError):
            RobotSpec(**kw)

    def test_config_round_trip(self, spec):
        assert build_spec(spec_to_config(spec)) == spec

    def test_missing_field_is_named(self, spec):
        cfg = spec_to_config(spec)
        del cfg["hole_radius_mm"]
        with pytest.raises(ConfigError, match="hole_radius"):
            build_spec(cfg)


class TestHoles:
    def test_hole_one_on_x_axis(self, spec):
        np.testing.assert_allclose(hole_position(spec, 1), [0.008, 0], atol=1e-15)

    def test_counterclockwise(self, spec):
        np.testing.assert_allclose(hole_position(spec, 4), [0, 0.008], atol=1e-15)
        assert hole_angle(spec, 7) == pytest.approx(np.pi)

    def test_injective_and_on_circle(self, spec):
        pts = np.array([hole_position(spec, h) for h in range(1, 13)])
        np.testing.assert_allclose(np.linalg.norm(pts, axis=1), spec.hole_radius)
        d = np.linalg.norm(pts[:, None] - pts[None], axis=2)
        assert np.min(d + np.eye(12)) > 1e-3

    @pytest.mark.parametrize("h", [0, 13])
    def test_out_of_range(self, spec, h):
        with pytest.raises(ValidationError):
            hole_position(spec, h)


class TestRouting:
    def test_fixture_units(self, routings):
        r = routings["VI"]
        assert r.tension == pytest.approx(0.4 * GRAVITY)
        assert r.length_reduction == pytest.approx(0.052)
        assert r.holes == (4, 5, 6, 7, 8, 8, 7, 6, 5, 4)

    def test_wrong_length(self, spec):
        with pytest.raises(ValidationError, match="10"):
            load_routing({"name": "x", "holes": [1] * 9}, spec)

    def test_hole_zero(self, spec):
        with pytest.raises(ValidationError, match="hole index 0"):
            load_routing({"name": "x", "holes": [0] + [1] * 9}, spec)

    def test_round_trip(self, routings):
        for r in routings.values():
            assert load_routing(routing_to_config(r)) == r

    def test_file_loading(self, tmp_path, spec):
        p = tmp_path / "r.json"
        p.write_text(json.dumps({"name": "f", "holes": [2] * 10, "tension_g": 100}))
        r = load_routing(p, spec)
        assert r.tension == pytest.approx(0.981)
        assert r.length_reduction is None

    def test_bad_json(self, tmp_path):
        p = tmp_path / "r.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError):
            load_routing(p)


class TestCablePath:
    def test_reproduces_knots(self, spec, routings):
        for r in routings.values():
            path = build_cable_path(spec, r)
            rr, _, _ = path.evaluate(spec.station_s)
            np.testing.assert_allclose(rr, path.knot_points, atol=1e-15)
            for k, h in enumerate(r.station_holes()):
                np.testing.assert_allclose(path.knot_points[k, :2], hole_position(spec, h), atol=1e-15)

    def test_stays_on_hole_circle(self, spec, routings):
        s = np.linspace(0, spec.backbone_length, 997)
        for r in routings.values():
            rr, dr, _ = build_cable_path(spec, r).evaluate(s)
            np.testing.assert_allclose(np.linalg.norm(rr, axis=1), spec.hole_radius, rtol=1e-12)
            np.testing.assert_allclose(np.einsum("ij,ij->i", rr, dr), 0, atol=1e-12)
            assert np.all(rr[:, 2] == 0)

    def test_straight_routing_is_constant(self, spec, routings):
        path = build_cable_path(spec, routings["I"])
        assert path.is_constant
        _, dr, ddr = path.evaluate(np.linspace(0, 0.18, 11))
        assert np.all(dr == 0) and np.all(ddr == 0)

    def test_derivatives_match_finite_difference(self, spec, routings):
        path = build_cable_path(spec, routings["III"])
        s, h = np.array([0.031, 0.077, 0.149]), 1e-6
        r0, dr, ddr = path.evaluate(s)
        rp, drp, _ = path.evaluate(s + h)
        rm, drm, _ = path.evaluate(s - h)
        np.testing.assert_allclose((rp - rm) / (2 * h), dr, atol=1e-7)
        np.testing.assert_allclose((drp - drm) / (2 * h), ddr, atol=1e-4)


class TestCableLength:
    def test_straight_routing_length(self, spec, routings):
        path = build_cable_path(spec, routings["I"])
        assert undeformed_cable_length(spec, path) == pytest.approx(0.18, abs=1e-15)

    def test_helical_segment_chords(self, spec, routings):
        # VI: segments 1 and 6 keep their hole, the other eight step 30 deg
        path = build_cable_path(spec, routings["VI"])
        chord = np.hypot(0.018, 2 * 0.008 * np.sin(np.pi / 12))
        assert undeformed_cable_length(spec, path) == pytest.approx(2 * 0.018 + 8 * chord, rel=1e-14)

    def test_not_shorter_than_backbone(self, spec, routings):
        for r in routings.values():
            path = build_cable_path(spec, r)
            assert undeformed_cable_length(spec, path) >= spec.backbone_length - 1e-15

    @settings(max_examples=25, deadline=None)
    @given(
        axis=st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda v: np.linalg.norm(v) > 0.1),
        angle=st.floats(-np.pi, np.pi),
        t=st.tuples(*[st.floats(-1, 1)] * 3),
    )
    def test_rigid_invariance(self, spec, routings, axis, angle, t):
        path = build_cable_path(spec, routings["V"])
        curve = straight_curve(spec)
        moved = curve.transformed(rotation(axis, angle), np.array(t))
        assert cable_length(moved, path) == pytest.approx(cable_length(curve, path), rel=1e-12)


class TestSkew:
    @given(st.tuples(*[st.floats(-10, 10)] * 3), st.tuples(*[st.floats(-10, 10)] * 3))
    def test_is_cross_product(self, w, x):
        np.testing.assert_allclose(skew(w) @ np.array(x), np.cross(w, x), atol=1e-12)

    def test_batched(self):
        w = np.arange(12.0).reshape(4, 3)
        S = skew(w)
        assert S.shape == (4, 3, 3)
        np.testing.assert_allclose(S + np.swapaxes(S, 1, 2), 0)
