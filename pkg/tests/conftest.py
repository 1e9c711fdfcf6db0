import numpy as np
import pytest

from cloudmark.geometry import OrientedBox, PointCloud, RigidTransform


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def random_rigid_transform(rng, max_translation=0.5):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(-np.pi, np.pi)
    t = rng.uniform(-max_translation, max_translation, 3)
    return RigidTransform.from_axis_angle(axis, angle, t)


def random_box(rng, center_scale=0.3):
    pose = random_rigid_transform(rng, max_translation=center_scale)
    size = rng.uniform(0.05, 0.4, 3)
    return OrientedBox(pose, size)


def points_inside_box(rng, box, count):
    local = rng.uniform(-0.5, 0.5, (count, 3)) * box.size
    return box.pose.apply(local)


def cloud_of(points):
    return PointCloud(np.asarray(points, dtype=np.float64))
