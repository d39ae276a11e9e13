import math

import numpy as np
import pytest

from deskgrasp import synthdata as sd
from deskgrasp.errors import InvalidDimensions
from deskgrasp.geometry import Grasp7, canonicalize

GRIPPER = sd.GripperSpec()  # opening 0.085, fingers 0.04, mu 0.5, margin 5 mm


def box(ex=0.08, ey=0.08, ez=0.08, yaw=0.0, xy=(0.0, 0.0)):
    return sd.make_shape(sd.ShapeSpec("box", (ex, ey, ez), yaw, xy))


class TestShapes:
    def test_box_sdf_center(self):
        shape = box()
        assert shape.sdf([0, 0, 0.04]) == pytest.approx(-0.04, abs=1e-12)

    def test_sphere_sdf_outside(self):
        shape = sd.make_shape(sd.ShapeSpec("sphere", (0.05,)))
        # sphere rests with center at z = r
        assert shape.sdf([0.07, 0, 0.05]) == pytest.approx(0.02, abs=1e-12)

    def test_surface_samples_lie_on_surface(self):
        rng = np.random.default_rng(0)
        for spec in (sd.ShapeSpec("box", (0.07, 0.1, 0.12), 0.4, (0.02, -0.01)),
                     sd.ShapeSpec("cylinder", (0.03, 0.1), 1.1, (0.0, 0.03)),
                     sd.ShapeSpec("sphere", (0.04,), 0.0, (0.01, 0.01))):
            shape = sd.make_shape(spec)
            pts = shape.sample_surface(500, rng)
            assert np.abs(shape.sdf(pts)).max() <= 1e-9

    def test_shapes_rest_on_ground(self):
        rng = np.random.default_rng(1)
        for spec in (sd.ShapeSpec("box", (0.07, 0.1, 0.12)),
                     sd.ShapeSpec("cylinder", (0.03, 0.1)),
                     sd.ShapeSpec("sphere", (0.04,))):
            pts = sd.make_shape(spec).sample_surface(2000, rng)
            assert pts[:, 2].min() >= -1e-9

    def test_invalid_dimensions(self):
        with pytest.raises(InvalidDimensions):
            sd.ShapeSpec("box", (0.002, 0.08, 0.08))
        with pytest.raises(InvalidDimensions):
            sd.ShapeSpec("sphere", (0.05, 0.05))
        with pytest.raises(InvalidDimensions):
            sd.ShapeSpec("pyramid", (0.05,))

    def test_normals_are_unit_outward(self):
        rng = np.random.default_rng(2)
        shape = sd.make_shape(sd.ShapeSpec("cylinder", (0.035, 0.09), 0.7))
        for p in shape.sample_surface(100, rng):
            n = shape.surface_normal(p)
            assert np.linalg.norm(n) == pytest.approx(1.0, abs=1e-12)
            assert shape.sdf(p + 1e-4 * n) > shape.sdf(p)

    def test_antipodal_pairs_oppose(self):
        rng = np.random.default_rng(3)
        for spec in (sd.ShapeSpec("box", (0.07, 0.1, 0.12), 0.9),
                     sd.ShapeSpec("cylinder", (0.03, 0.1), 0.2),
                     sd.ShapeSpec("sphere", (0.04,))):
            shape = sd.make_shape(spec)
            for _ in range(50):
                p1, p2 = shape.antipodal_pair(rng)
                axis = p2 - p1
                axis = axis / np.linalg.norm(axis)
                n1 = shape.surface_normal(p1)
                n2 = shape.surface_normal(p2)
                assert float(axis @ -n1) >= 1.0 - 1e-9
                assert float(-axis @ -n2) >= 1.0 - 1e-9


class TestPartialView:
    def test_sphere_view_keeps_facing_hemisphere(self):
        shape = sd.make_shape(sd.ShapeSpec("sphere", (0.04,)))
        view = np.array([0.0, 0.7, -0.7])
        cloud = sd.sample_partial_view(shape, view, 200, seed=4)
        for p in cloud:
            n = shape.surface_normal(p)
            assert float(n @ -view / np.linalg.norm(view)) > 0.0

    def test_box_face_on_view_single_face(self):
        shape = box()
        cloud = sd.sample_partial_view(shape, [-1.0, 0, 0], 100, seed=5)
        # looking along -x: only the +x face is visible
        assert np.allclose(cloud[:, 0], 0.04, atol=1e-12)

    def test_same_seed_bit_identical(self):
        shape = box(0.06, 0.09, 0.1, yaw=0.3)
        a = sd.sample_partial_view(shape, [0.5, 0.5, -0.7], 64, seed=6)
        b = sd.sample_partial_view(shape, [0.5, 0.5, -0.7], 64, seed=6)
        assert np.array_equal(a, b)

    def test_view_points_lie_on_surface(self):
        shape = sd.make_shape(sd.ShapeSpec("cylinder", (0.03, 0.08), 0.5))
        cloud = sd.sample_partial_view(shape, [1, 0, -1], 256, seed=7)
        assert np.abs(shape.sdf(cloud)).max() <= 1e-9


class TestOracle:
    def test_diametral_sphere_grasp_passes(self):
        shape = sd.make_shape(sd.ShapeSpec("sphere", (0.03,)))
        # contacts at equator height (z = r), vertical approach
        g = Grasp7([-0.03, 0, 0.03], [0.03, 0, 0.03], math.pi / 2)
        ok, reason = sd.oracle_check(shape, g, GRIPPER)
        assert ok and reason is None

    def test_adjacent_faces_fail_friction(self):
        shape = box()
        g = Grasp7([0.04, 0, 0.04], [0, 0.04, 0.04], math.pi / 2)
        ok, reason = sd.oracle_check(shape, g, GRIPPER)
        assert not ok and reason == "friction"

    def test_wide_grasp_fails_width(self):
        shape = box(0.09, 0.08, 0.08)
        g = Grasp7([-0.045, 0, 0.04], [0.045, 0, 0.04], math.pi / 2)
        ok, reason = sd.oracle_check(shape, g, GRIPPER)
        assert not ok and reason == "width"

    def test_low_contact_fails_clearance(self):
        shape = box()
        g = Grasp7([-0.04, 0, 0.001], [0.04, 0, 0.001], math.pi / 2)
        ok, reason = sd.oracle_check(shape, g, GRIPPER)
        assert not ok and reason == "clearance"

    def test_off_surface_fails_contact(self):
        shape = box()
        g = Grasp7([-0.043, 0, 0.04], [0.043, 0, 0.04], math.pi / 2)
        ok, reason = sd.oracle_check(shape, g, GRIPPER)
        assert not ok and reason == "contact"

    def test_side_pinch_passes(self):
        shape = box(0.07, 0.12, 0.1)
        g = Grasp7([-0.035, 0, 0.05], [0.035, 0, 0.05], math.pi / 2)
        ok, reason = sd.oracle_check(shape, g, GRIPPER)
        assert ok


class TestAnnotation:
    def test_graspable_box_has_both_classes(self):
        shape = box(0.07, 0.12, 0.1)
        grasps = sd.annotate_grasps(shape, GRIPPER, 60, seed=8)
        assert len(grasps.grasps) == 60
        assert grasps.positives() and grasps.negatives()

    def test_oversized_sphere_all_negative(self):
        shape = sd.make_shape(sd.ShapeSpec("sphere", (0.06,)))  # 12 cm diameter
        grasps = sd.annotate_grasps(shape, GRIPPER, 40, seed=9)
        assert not grasps.positives()
        assert all(g.reason is not None for g in grasps.grasps)

    def test_positives_pass_and_negatives_fail_with_reason(self):
        shape = sd.make_shape(sd.ShapeSpec("cylinder", (0.035, 0.11), 0.3))
        grasps = sd.annotate_grasps(shape, GRIPPER, 80, seed=10)
        for g in grasps.grasps:
            ok, reason = sd.oracle_check(shape, g.grasp, GRIPPER)
            if g.label == 1:
                assert ok and g.reason is None
            else:
                assert not ok and g.reason == reason

    def test_all_grasps_satisfy_antipodal_condition(self):
        # negatives fail on contact/width/clearance, never on friction
        rng = np.random.default_rng(11)
        for spec in (sd.ShapeSpec("box", (0.07, 0.12, 0.1), 0.5),
                     sd.ShapeSpec("sphere", (0.032,)),
                     sd.ShapeSpec("cylinder", (0.03, 0.09), 1.2)):
            shape = sd.make_shape(spec)
            grasps = sd.annotate_grasps(shape, GRIPPER, 60,
                                        seed=int(rng.integers(1 << 30)))
            cos_limit = 1.0 / math.sqrt(1.0 + GRIPPER.friction ** 2)
            for g in grasps.grasps:
                axis = g.grasp.c2 - g.grasp.c1
                axis = axis / np.linalg.norm(axis)
                n1 = -shape.surface_normal(g.grasp.c1)
                n2 = -shape.surface_normal(g.grasp.c2)
                assert float(axis @ n1) >= cos_limit - 1e-9
                assert float(-axis @ n2) >= cos_limit - 1e-9

    def test_stored_grasps_are_canonical(self):
        shape = box(0.07, 0.1, 0.09, yaw=0.2)
        grasps = sd.annotate_grasps(shape, GRIPPER, 30, seed=12)
        for g in grasps.grasps:
            assert g.grasp.c1[2] <= g.grasp.c2[2] + 1e-12


class TestBuildDataset:
    def test_counts_and_split(self):
        ds = sd.build_dataset(num_shapes=2, views_per_shape=3,
                              grasps_per_shape=40, seed=13, cloud_points=64,
                              test_shapes=1)
        assert len(ds.samples) == 6
        train_shapes = {s.sample_id.split("_")[0] for s in ds.split("train")}
        test_shapes = {s.sample_id.split("_")[0] for s in ds.split("test")}
        assert train_shapes and test_shapes
        assert not train_shapes & test_shapes

    def test_deterministic(self):
        a = sd.build_dataset(2, 2, 30, seed=14, cloud_points=32, test_shapes=1)
        b = sd.build_dataset(2, 2, 30, seed=14, cloud_points=32, test_shapes=1)
        for sa, sb in zip(a.samples, b.samples):
            assert np.array_equal(sa.cloud, sb.cloud)
            assert sa.spec == sb.spec

    def test_every_sample_has_positives(self):
        ds = sd.build_dataset(3, 2, 40, seed=15, cloud_points=32, test_shapes=1)
        for s in ds.samples:
            assert s.grasps.positives()
            assert s.grasps.negatives()

    def test_stored_positives_repass_oracle(self):
        ds = sd.build_dataset(2, 1, 40, seed=16, cloud_points=32, test_shapes=1)
        for s in ds.samples:
            shape = sd.make_shape(s.spec)
            for g in s.grasps.positives():
                ok, _ = sd.oracle_check(shape, g.grasp, GRIPPER)
                assert ok
