"""Synthetic depth-scene generation with exact ground truth.

Scenes are unions of sampled primitive surfaces (plane patch, box, sphere,
open cylinder, bowl-rim annulus). Emulates a single-view depth capture:
optional back-face culling against a fixed viewpoint and Gaussian noise
applied along the view ray. Placements tagged with a landmark name are
echoed into the ground truth with their exact pose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import PointCloud, RigidTransform

__all__ = [
    "Placement",
    "SceneSpec",
    "GroundTruthInstance",
    "generate_scene",
    "PRIMITIVE_KINDS",
]

PRIMITIVE_KINDS = ("plane", "box", "sphere", "cylinder", "annulus")

# Depth sensor height for a stationary mobile manipulator looking forward.
DEFAULT_VIEWPOINT = (0.0, 0.0, 1.4)


@dataclass(frozen=True)
class Placement:
    """One primitive surface in a scene.

    dimensions by kind:
      plane    (width, height)        patch in the local xy plane, +z normal
      box      (sx, sy, sz)           all six faces, outward normals
      sphere   (radius,)              full sphere, radial normals
      cylinder (radius, height)       open tube around local z, no caps
      annulus  (r_inner, r_outer)     flat ring in the local xy plane, +z normal
    """

    kind: str
    pose: RigidTransform
    dimensions: tuple
    density: float  # surface samples per square meter
    noise_sigma: float = 0.0  # meters, applied along the view ray
    cull: bool = True  # drop surface points facing away from the viewpoint
    instance_of: str | None = None  # landmark name this placement realizes

    def __post_init__(self):
        if self.kind not in PRIMITIVE_KINDS:
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        dims = tuple(float(d) for d in self.dimensions)
        expected = {"plane": 2, "box": 3, "sphere": 1, "cylinder": 2, "annulus": 2}
        if len(dims) != expected[self.kind]:
            raise ValueError(
                f"{self.kind} takes {expected[self.kind]} dimensions, got {len(dims)}"
            )
        if any(d <= 0 for d in dims):
            raise ValueError("primitive dimensions must be positive")
        if self.kind == "annulus" and dims[0] >= dims[1]:
            raise ValueError("annulus needs r_inner < r_outer")
        if not (self.density > 0):
            raise ValueError("sampling density must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be >= 0")
        object.__setattr__(self, "dimensions", dims)


@dataclass(frozen=True)
class SceneSpec:
    placements: tuple
    viewpoint: tuple = DEFAULT_VIEWPOINT

    def __post_init__(self):
        object.__setattr__(self, "placements", tuple(self.placements))
        object.__setattr__(self, "viewpoint", tuple(float(v) for v in self.viewpoint))


@dataclass(frozen=True)
class GroundTruthInstance:
    landmark_name: str
    pose: RigidTransform  # world pose of the primitive realizing the instance
    instance_id: str


def _surface_area(placement: Placement) -> float:
    d = placement.dimensions
    if placement.kind == "plane":
        return d[0] * d[1]
    if placement.kind == "box":
        sx, sy, sz = d
        return 2.0 * (sx * sy + sy * sz + sx * sz)
    if placement.kind == "sphere":
        return 4.0 * math.pi * d[0] ** 2
    if placement.kind == "cylinder":
        return 2.0 * math.pi * d[0] * d[1]
    if placement.kind == "annulus":
        return math.pi * (d[1] ** 2 - d[0] ** 2)
    raise AssertionError(placement.kind)


def _sample_local(placement: Placement, count: int, rng: np.random.Generator):
    """Sample (points, normals) in the primitive's local frame."""
    d = placement.dimensions
    if placement.kind == "plane":
        w, h = d
        xy = rng.uniform([-w / 2, -h / 2], [w / 2, h / 2], size=(count, 2))
        pts = np.column_stack([xy, np.zeros(count)])
        normals = np.tile([0.0, 0.0, 1.0], (count, 1))
        return pts, normals
    if placement.kind == "annulus":
        r_in, r_out = d
        r = np.sqrt(rng.uniform(r_in**2, r_out**2, size=count))
        theta = rng.uniform(0.0, 2.0 * math.pi, size=count)
        pts = np.column_stack([r * np.cos(theta), r * np.sin(theta), np.zeros(count)])
        normals = np.tile([0.0, 0.0, 1.0], (count, 1))
        return pts, normals
    if placement.kind == "sphere":
        radius = d[0]
        z = rng.uniform(-1.0, 1.0, size=count)
        theta = rng.uniform(0.0, 2.0 * math.pi, size=count)
        s = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        dirs = np.column_stack([s * np.cos(theta), s * np.sin(theta), z])
        return radius * dirs, dirs
    if placement.kind == "cylinder":
        radius, height = d
        theta = rng.uniform(0.0, 2.0 * math.pi, size=count)
        z = rng.uniform(-height / 2, height / 2, size=count)
        radial = np.column_stack([np.cos(theta), np.sin(theta), np.zeros(count)])
        pts = radial * radius
        pts[:, 2] = z
        return pts, radial
    if placement.kind == "box":
        sx, sy, sz = d
        # (axis, sign, area) for the six faces; pick faces by area
        faces = [
            (0, 1.0, sy * sz), (0, -1.0, sy * sz),
            (1, 1.0, sx * sz), (1, -1.0, sx * sz),
            (2, 1.0, sx * sy), (2, -1.0, sx * sy),
        ]
        areas = np.array([f[2] for f in faces])
        choice = rng.choice(6, size=count, p=areas / areas.sum())
        half = np.array([sx, sy, sz]) / 2.0
        pts = rng.uniform(-half, half, size=(count, 3))
        normals = np.zeros((count, 3))
        for face_idx, (axis, sign, _) in enumerate(faces):
            mask = choice == face_idx
            pts[mask, axis] = sign * half[axis]
            normals[mask, axis] = sign
        return pts, normals
    raise AssertionError(placement.kind)


def generate_scene(
    spec: SceneSpec, seed: int, scene_id: str = "scene"
) -> tuple[PointCloud, list[GroundTruthInstance]]:
    """Sample every placement and return the combined cloud plus ground truth.

    Deterministic for a fixed seed. Each placement draws
    round(density * area) surface samples; culling then removes samples
    whose outward normal faces away from the viewpoint.
    """
    rng = np.random.default_rng(int(seed))
    viewpoint = np.asarray(spec.viewpoint, dtype=np.float64)
    clouds = []
    truth = []
    for index, placement in enumerate(spec.placements):
        count = max(1, int(round(placement.density * _surface_area(placement))))
        local_pts, local_normals = _sample_local(placement, count, rng)
        pts = placement.pose.apply(local_pts)
        if placement.cull:
            normals = local_normals @ placement.pose.rotation_matrix.T
            facing = np.sum(normals * (viewpoint - pts), axis=1) > 0.0
            pts = pts[facing]
        if placement.noise_sigma > 0 and len(pts) > 0:
            rays = pts - viewpoint
            rays /= np.linalg.norm(rays, axis=1, keepdims=True)
            pts = pts + rays * rng.normal(0.0, placement.noise_sigma, size=(len(pts), 1))
        if len(pts) > 0:
            clouds.append(pts)
        if placement.instance_of is not None:
            truth.append(
                GroundTruthInstance(
                    landmark_name=placement.instance_of,
                    pose=placement.pose,
                    instance_id=f"{scene_id}:{index}",
                )
            )
    if clouds:
        cloud = PointCloud(np.vstack(clouds))
    else:
        cloud = PointCloud.empty()
    return cloud, truth
