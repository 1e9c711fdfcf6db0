"""The built-in synthetic benchmark suite.

Five landmarks (ball, bowl rim, detergent bottle, cup, chair-backrest
corner) captured from clean single-object scenes, searched across tabletop,
shelf, chair, and distractor scenes. The detergent bottle carries a
ball-sized spherical cap, which is the classic confusion case: a ball
searched out of context matches the cap.
"""

from __future__ import annotations

import math

import numpy as np

from .evaluation import BenchmarkScene, BenchmarkSuite, CapturedLandmark
from .geometry import OrientedBox, RigidTransform
from .search import Landmark, capture_landmark
from .synth import Placement, SceneSpec, generate_scene

__all__ = ["default_suite", "TABLE_Z", "BALL_RADIUS"]

TABLE_Z = 0.72
BALL_RADIUS = 0.03
BOWL_RIM = (0.05, 0.065)  # inner/outer radius of the rim ring
BOWL_HEIGHT = 0.08
CUP_RADIUS = 0.035
CUP_HEIGHT = 0.10
BOTTLE_SIZE = (0.09, 0.06, 0.24)
BOTTLE_NECK = (0.02, 0.03)  # radius, height
# local x becomes vertical once the panel is stood upright, so this is
# (vertical extent, horizontal extent)
CHAIR_PANEL = (0.40, 0.45)

TABLE_DENSITY = 5000.0
OBJECT_DENSITY = 30000.0
SCENE_NOISE = 0.0005

_VERTICAL_FACING_ROBOT = RigidTransform.from_axis_angle((0.0, 1.0, 0.0), -math.pi / 2)


def _at(x, y, z, yaw=0.0) -> RigidTransform:
    return RigidTransform.from_axis_angle((0.0, 0.0, 1.0), yaw, (x, y, z))


def _table(x=0.7, y=0.0, w=1.0, h=0.7) -> Placement:
    return Placement("plane", _at(x, y, TABLE_Z), (w, h), TABLE_DENSITY)


def _ball(pose: RigidTransform, tagged=True, sigma=0.0) -> Placement:
    return Placement(
        "sphere", pose, (BALL_RADIUS,), OBJECT_DENSITY, sigma,
        instance_of="ball" if tagged else None,
    )


def ball_pose(x, y) -> RigidTransform:
    return _at(x, y, TABLE_Z + BALL_RADIUS)


def _bowl(pose: RigidTransform, tagged=True, sigma=0.0) -> list:
    """A bowl reads as its rim ring plus a visible interior bottom."""
    rim = Placement(
        "annulus", pose, BOWL_RIM, OBJECT_DENSITY, sigma,
        instance_of="bowl_rim" if tagged else None,
    )
    bottom_pose = pose.compose(RigidTransform.from_translation((0, 0, -0.055)))
    bottom = Placement("annulus", bottom_pose, (0.002, 0.045), OBJECT_DENSITY, sigma)
    return [rim, bottom]


def bowl_pose(x, y) -> RigidTransform:
    # pose anchors the rim ring plane
    return _at(x, y, TABLE_Z + BOWL_HEIGHT)


def _cup(pose: RigidTransform, tagged=True, sigma=0.0) -> Placement:
    return Placement(
        "cylinder", pose, (CUP_RADIUS, CUP_HEIGHT), OBJECT_DENSITY, sigma,
        instance_of="cup" if tagged else None,
    )


def cup_pose(x, y, base_z=TABLE_Z) -> RigidTransform:
    return _at(x, y, base_z + CUP_HEIGHT / 2)


def _bottle(pose: RigidTransform, tagged=True, sigma=0.0) -> list:
    """Detergent bottle: boxy body, short neck, ball-sized spherical cap."""
    sx, sy, sz = BOTTLE_SIZE
    neck_r, neck_h = BOTTLE_NECK
    body = Placement(
        "box", pose, BOTTLE_SIZE, OBJECT_DENSITY, sigma,
        instance_of="tide_bottle" if tagged else None,
    )
    neck_pose = pose.compose(RigidTransform.from_translation((0, 0, sz / 2 + neck_h / 2)))
    neck = Placement("cylinder", neck_pose, BOTTLE_NECK, OBJECT_DENSITY, sigma)
    # cap sphere seats tangent on the neck top so no neck point hides inside it
    cap_pose = pose.compose(
        RigidTransform.from_translation((0, 0, sz / 2 + neck_h + BALL_RADIUS))
    )
    cap = Placement("sphere", cap_pose, (BALL_RADIUS,), OBJECT_DENSITY, sigma)
    return [body, neck, cap]


def bottle_pose(x, y, yaw=0.0) -> RigidTransform:
    return _at(x, y, TABLE_Z + BOTTLE_SIZE[2] / 2, yaw)


def bottle_cap_center(pose: RigidTransform) -> np.ndarray:
    offset = (0, 0, BOTTLE_SIZE[2] / 2 + BOTTLE_NECK[1] + BALL_RADIUS)
    return pose.apply(np.asarray(offset, dtype=np.float64))


def _chair(pose: RigidTransform, tagged=True, sigma=0.0) -> Placement:
    """Backrest panel standing upright, face toward the robot."""
    return Placement(
        "plane", pose, CHAIR_PANEL, TABLE_DENSITY * 4, sigma,
        instance_of="corner" if tagged else None,
    )


def chair_pose(x, y, z_top, yaw=0.0) -> RigidTransform:
    # full panel pose: stood upright, then yawed; local x spans height
    return _at(x, y, z_top - CHAIR_PANEL[0] / 2, yaw).compose(_VERTICAL_FACING_ROBOT)


def chair_corner_point(pose: RigidTransform) -> np.ndarray:
    """World position of the top corner on the robot's left."""
    local = np.array([CHAIR_PANEL[0] / 2, CHAIR_PANEL[1] / 2, 0.0])
    return pose.apply(local)


def _capture(
    placements: list, box: OrientedBox, name: str, seed: int
) -> Landmark:
    cloud, _ = generate_scene(SceneSpec(tuple(placements)), seed, f"capture:{name}")
    return capture_landmark(cloud, box, name, scene_id=f"capture:{name}")


def build_landmarks() -> dict:
    """Capture the five canonical landmarks from clean scenes."""
    captured = {}

    pose = ball_pose(0.6, -0.2)
    top = TABLE_Z + 2 * BALL_RADIUS
    box = OrientedBox.axis_aligned(
        (0.6, -0.2, (TABLE_Z + 0.003 + top + 0.012) / 2),
        (0.096, 0.096, top + 0.012 - TABLE_Z - 0.003),
    )
    captured["ball"] = CapturedLandmark(
        _capture([_table(), _ball(pose, tagged=False)], box, "ball", seed=101), pose
    )

    pose = bowl_pose(0.7, 0.25)
    box = OrientedBox.axis_aligned(
        (0.7, 0.25, TABLE_Z + BOWL_HEIGHT), (0.16, 0.16, 0.03)
    )
    captured["bowl_rim"] = CapturedLandmark(
        _capture([_table(), *_bowl(pose, tagged=False)], box, "bowl_rim", seed=102),
        pose,
    )

    pose = bottle_pose(0.75, 0.2)
    cap_top = TABLE_Z + BOTTLE_SIZE[2] + BOTTLE_NECK[1] + 2 * BALL_RADIUS
    box = OrientedBox.axis_aligned(
        (0.75, 0.2, (TABLE_Z + 0.003 + cap_top + 0.012) / 2),
        (0.13, 0.10, cap_top + 0.012 - TABLE_Z - 0.003),
    )
    captured["tide_bottle"] = CapturedLandmark(
        _capture([_table(), *_bottle(pose, tagged=False)], box, "tide_bottle", seed=103),
        pose,
    )

    pose = cup_pose(0.55, 0.1)
    box = OrientedBox.axis_aligned(
        (0.55, 0.1, TABLE_Z + 0.003 + (CUP_HEIGHT + 0.012 - 0.003) / 2),
        (0.092, 0.092, CUP_HEIGHT + 0.012 - 0.003),
    )
    captured["cup"] = CapturedLandmark(
        _capture([_table(), _cup(pose, tagged=False)], box, "cup", seed=104), pose
    )

    pose = chair_pose(0.9, 0.0, z_top=1.1)
    corner = chair_corner_point(pose)
    box = OrientedBox.axis_aligned(corner, (0.05, 0.2, 0.2))
    captured["corner"] = CapturedLandmark(
        _capture([_chair(pose, tagged=False)], box, "corner", seed=105), pose
    )

    return captured


def build_scenes() -> list:
    """Benchmark scenes with planted instances and their context tables."""
    scenes = []

    scenes.append(
        BenchmarkScene(
            scene_id="simple_bowl_ball",
            spec=SceneSpec(
                (
                    _table(),
                    *_bowl(bowl_pose(0.62, 0.28), sigma=SCENE_NOISE),
                    _ball(ball_pose(0.55, -0.25), sigma=SCENE_NOISE),
                )
            ),
            context=("bowl_rim", "ball"),
            seed=201,
        )
    )

    # planted in the same viewing quadrant as the capture: a single-view
    # landmark only matches where the same faces are visible
    scenes.append(
        BenchmarkScene(
            scene_id="simple_bottle",
            spec=SceneSpec(
                (
                    _table(),
                    *_bottle(bottle_pose(0.68, 0.16, yaw=math.radians(6)), sigma=SCENE_NOISE),
                )
            ),
            context=("tide_bottle",),
            seed=202,
        )
    )

    shelf_low = Placement("plane", _at(0.8, 0.0, 0.75), (0.45, 0.9), TABLE_DENSITY)
    shelf_high = Placement("plane", _at(0.8, 0.0, 1.08), (0.45, 0.9), TABLE_DENSITY)
    scenes.append(
        BenchmarkScene(
            scene_id="cluttered_shelf",
            spec=SceneSpec(
                (
                    shelf_low,
                    shelf_high,
                    *_bowl(_at(0.78, -0.18, 0.75 + BOWL_HEIGHT, math.radians(-5)), sigma=SCENE_NOISE),
                    *_bowl(_at(0.8, 0.2, 1.08 + BOWL_HEIGHT, math.radians(4)), sigma=SCENE_NOISE),
                    _cup(cup_pose(0.735, -0.085, base_z=0.75), sigma=SCENE_NOISE),
                )
            ),
            context=("bowl_rim", "cup"),
            seed=203,
        )
    )

    scenes.append(
        BenchmarkScene(
            scene_id="chair",
            spec=SceneSpec(
                (_chair(chair_pose(0.95, 0.1, z_top=1.02, yaw=math.radians(7)), sigma=SCENE_NOISE),)
            ),
            context=("corner",),
            seed=204,
        )
    )

    scenes.append(
        BenchmarkScene(
            scene_id="distractors",
            spec=SceneSpec(
                (
                    _table(),
                    Placement(
                        "box", _at(0.6, 0.3, TABLE_Z + 0.065, 0.3), (0.14, 0.2, 0.13),
                        OBJECT_DENSITY, SCENE_NOISE,
                    ),
                    Placement(
                        "cylinder", _at(0.75, -0.3, TABLE_Z + 0.09), (0.055, 0.18),
                        OBJECT_DENSITY, SCENE_NOISE,
                    ),
                )
            ),
            context=(),
            seed=205,
        )
    )

    return scenes


def default_suite() -> BenchmarkSuite:
    landmarks = build_landmarks()
    return BenchmarkSuite(
        landmarks=tuple(landmarks[name] for name in sorted(landmarks)),
        scenes=tuple(build_scenes()),
    )
