import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cloudmark.geometry import (
    OrientedBox,
    PointCloud,
    RigidTransform,
    box_contains,
    centroid,
    compose,
    crop_to_box,
    point_distance,
    transform_point,
)
from conftest import cloud_of, random_box, random_rigid_transform

finite_coord = st.floats(-10.0, 10.0, allow_nan=False, allow_infinity=False)
point_st = st.tuples(finite_coord, finite_coord, finite_coord).map(np.array)


def rigid_st():
    return st.builds(
        lambda ax, ang, t: RigidTransform.from_axis_angle(ax, ang, t),
        st.tuples(
            st.floats(-1, 1), st.floats(-1, 1), st.floats(0.1, 1)
        ).map(np.array),
        st.floats(-math.pi, math.pi),
        point_st,
    )


class TestTransformPoint:
    def test_identity(self):
        p = transform_point((1, 2, 3), RigidTransform.identity())
        assert np.allclose(p, (1, 2, 3), atol=0)

    def test_pure_translation(self):
        t = RigidTransform.from_translation((0, 0, 5))
        assert np.allclose(transform_point((1, 0, 0), t), (1, 0, 5), atol=0)

    def test_quarter_turn_about_z(self):
        t = RigidTransform.from_axis_angle((0, 0, 1), math.pi / 2)
        assert np.allclose(transform_point((1, 0, 0), t), (0, 1, 0), atol=1e-15)

    @settings(max_examples=150, deadline=None)
    @given(point_st, point_st, rigid_st())
    def test_preserves_pairwise_distances(self, p, q, t):
        before = point_distance(p, q)
        after = point_distance(t.apply(p), t.apply(q))
        assert abs(before - after) < 1e-9


class TestCompose:
    def test_identity_left(self):
        t = RigidTransform.from_axis_angle((0, 1, 0), 0.3, (1, 2, 3))
        c = compose(RigidTransform.identity(), t)
        assert np.allclose(c.quaternion, t.quaternion, atol=0)
        assert np.allclose(c.translation, t.translation, atol=0)

    def test_inverse_roundtrip(self):
        t = RigidTransform.from_axis_angle((1, 2, 0.5), 1.1, (0.2, -0.4, 0.9))
        ident = compose(t, t.inverse())
        assert ident.rotation_angle() < 1e-9
        assert np.linalg.norm(ident.translation) < 1e-9

    def test_translations_commute(self):
        a = RigidTransform.from_translation((0, 0, 1))
        b = RigidTransform.from_translation((1, 0, 0))
        assert np.allclose(compose(a, b).translation, (1, 0, 1), atol=0)

    def test_applies_second_argument_first(self):
        rot = RigidTransform.from_axis_angle((0, 0, 1), math.pi / 2)
        shift = RigidTransform.from_translation((1, 0, 0))
        # shift first, then rotate: (1,0,0) -> (2,0,0) -> (0,2,0)
        assert np.allclose(
            compose(rot, shift).apply(np.array([1.0, 0, 0])), (0, 2, 0), atol=1e-15
        )

    @settings(max_examples=100, deadline=None)
    @given(rigid_st(), rigid_st(), rigid_st(), point_st)
    def test_associative(self, a, b, c, p):
        left = compose(compose(a, b), c).apply(p)
        right = compose(a, compose(b, c)).apply(p)
        assert np.linalg.norm(left - right) < 1e-9

    def test_orthonormality_after_many_compositions(self):
        t = RigidTransform.from_axis_angle((0.2, 0.3, 0.9), 0.7, (0.01, 0.02, 0.03))
        acc = RigidTransform.identity()
        for _ in range(500):
            acc = compose(acc, t)
        r = acc.rotation_matrix
        assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-9
        assert np.linalg.det(r) > 0


class TestRigidTransformValidation:
    def test_rejects_non_unit_quaternion(self):
        with pytest.raises(ValueError):
            RigidTransform(np.array([1.0, 1.0, 0.0, 0.0]), np.zeros(3))

    def test_rejects_nan_translation(self):
        with pytest.raises(ValueError):
            RigidTransform(np.array([1.0, 0, 0, 0]), np.array([np.nan, 0, 0]))

    def test_rejects_reflection_matrix(self):
        with pytest.raises(ValueError):
            RigidTransform.from_matrix(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_matrix_roundtrip(self, rng):
        for _ in range(50):
            t = random_rigid_transform(rng)
            back = RigidTransform.from_matrix(t.rotation_matrix, t.translation)
            assert back.is_close(t, tol=1e-10)


class TestBoxContains:
    def test_center_inside(self):
        box = OrientedBox.axis_aligned((0, 0, 0), (1, 1, 1))
        assert box_contains(box, (0, 0, 0))

    def test_face_point_inside_closed_convention(self):
        box = OrientedBox.axis_aligned((0, 0, 0), (1, 1, 1))
        assert box_contains(box, (0.5, 0, 0))

    def test_just_outside(self):
        box = OrientedBox.axis_aligned((0, 0, 0), (1, 1, 1))
        assert not box_contains(box, (0.51, 0, 0))

    def test_invariant_under_joint_transform(self, rng):
        for _ in range(100):
            box = random_box(rng)
            # stay clear of the boundary so float error cannot flip the answer
            local = rng.uniform(-0.48, 0.48, 3) * box.size
            inside = box.pose.apply(local)
            outside = box.pose.apply(box.size * (0.52 + rng.uniform(0, 1, 3)))
            t = random_rigid_transform(rng)
            moved_box = box.transformed(t)
            assert box_contains(box, inside)
            assert box_contains(moved_box, t.apply(inside))
            assert not box_contains(box, outside)
            assert not box_contains(moved_box, t.apply(outside))

    def test_rejects_nonpositive_extent(self):
        with pytest.raises(ValueError, match="positive"):
            OrientedBox.axis_aligned((0, 0, 0), (0.0, 1, 1))


class TestCropToBox:
    def test_empty_cloud(self):
        box = OrientedBox.axis_aligned((0, 0, 0), (1, 1, 1))
        assert len(crop_to_box(PointCloud.empty(), box)) == 0

    def test_superset_box_keeps_cloud(self):
        cloud = cloud_of([[0.1, 0.1, 0.1], [-0.2, 0.0, 0.3]])
        box = OrientedBox.axis_aligned((0, 0, 0), (10, 10, 10))
        assert crop_to_box(cloud, box) == cloud

    def test_cube_corners_vs_small_box(self):
        # 8 corners of a 2 m cube; a 1 m box at the cube center catches none
        corners = np.array(
            [[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)],
            dtype=np.float64,
        )
        box = OrientedBox.axis_aligned((0, 0, 0), (1, 1, 1))
        for corner in corners:
            assert not box_contains(box, corner)
        assert len(crop_to_box(cloud_of(corners), box)) == 0

    def test_subset_and_idempotent(self, rng):
        for _ in range(25):
            cloud = cloud_of(rng.uniform(-1, 1, (40, 3)))
            box = random_box(rng)
            once = crop_to_box(cloud, box)
            rows = {tuple(p) for p in cloud.points}
            assert all(tuple(p) in rows for p in once.points)
            assert crop_to_box(once, box) == once

    def test_preserves_order(self):
        cloud = cloud_of([[0.3, 0, 0], [5, 5, 5], [-0.1, 0.2, 0.0], [0.0, 0.0, 0.4]])
        box = OrientedBox.axis_aligned((0, 0, 0), (1, 1, 1))
        cropped = crop_to_box(cloud, box)
        assert np.array_equal(
            cropped.points, np.array([[0.3, 0, 0], [-0.1, 0.2, 0.0], [0.0, 0.0, 0.4]])
        )


class TestCentroid:
    def test_singleton(self):
        assert np.allclose(centroid(cloud_of([[1, 1, 1]])), (1, 1, 1), atol=0)

    def test_midpoint(self):
        assert np.allclose(
            centroid(cloud_of([[0, 0, 0], [2, 0, 0]])), (1, 0, 0), atol=0
        )

    def test_unit_cube_corners(self):
        corners = [
            [sx, sy, sz] for sx in (0, 1) for sy in (0, 1) for sz in (0, 1)
        ]
        assert np.allclose(centroid(cloud_of(corners)), (0.5, 0.5, 0.5), atol=0)

    def test_empty_cloud_errors(self):
        with pytest.raises(ValueError, match="empty cloud has no centroid"):
            centroid(PointCloud.empty())


class TestPointCloud:
    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            PointCloud([[0, 0, np.nan]])

    def test_immutable(self):
        cloud = cloud_of([[1, 2, 3]])
        with pytest.raises(ValueError):
            cloud.points[0, 0] = 9.0
