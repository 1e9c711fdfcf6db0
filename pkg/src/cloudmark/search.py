"""Landmark search: seeded ICP candidates, the bidirectional mean-distance
error metric with empty-space margins, non-max suppression, and thresholding.

A landmark is a captured point-cloud patch plus a surrounding box. The box
boundary encodes margins that are expected to stay empty: scene points that
intrude into the box far from any landmark point drive the error up, which
is what lets a small patch with margins reject look-alike geometry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import OrientedBox, PointCloud, RigidTransform, centroid, crop_to_box
from .registration import IcpParams, icp_align_many
from .spatial import (
    AxisAlignedBounds,
    SeededRng,
    SpatialIndex,
    build_index,
    crop_to_workspace,
    sample_points,
    voxel_downsample,
)

__all__ = [
    "Landmark",
    "Candidate",
    "Match",
    "SearchParams",
    "DEFAULT_WORKSPACE",
    "candidate_error",
    "non_max_suppression",
    "find_landmark",
    "transfer_pose",
    "capture_landmark",
]

# Approximates a dual-arm reach volume in front of the robot base; override
# through SearchParams for other rigs.
DEFAULT_WORKSPACE = AxisAlignedBounds(
    np.array([0.2, -0.8, 0.0]), np.array([1.2, 0.8, 1.6])
)


@dataclass(frozen=True)
class Landmark:
    """A captured patch: cloud points plus the box that was drawn around them.

    The cloud is stored in the capture scene's world frame, not re-centered,
    so a match transform maps capture frame directly into the new scene.
    """

    cloud: PointCloud
    box: OrientedBox
    name: str = "landmark"
    scene_id: str = ""
    created_at: str = ""

    def __post_init__(self):
        if len(self.cloud) == 0:
            raise ValueError("landmark cloud must be non-empty")
        if not bool(np.all(self.box.contains_mask(self.cloud.points))):
            raise ValueError("landmark cloud has points outside its box")

    def cloud_centroid(self) -> np.ndarray:
        return centroid(self.cloud)


@dataclass(frozen=True)
class Candidate:
    """A rigidly placed copy of a landmark with its error score.

    `transform` maps the capture frame into the scene frame and applies to
    both the cloud and the box. `centroid` is the transformed cloud's mean,
    used for non-max suppression distances and match-to-truth distances.
    """

    landmark: Landmark
    transform: RigidTransform
    seed_point: np.ndarray
    centroid: np.ndarray
    error: float = math.inf

    def cloud_in_scene(self) -> PointCloud:
        return self.landmark.cloud.transformed(self.transform)

    def box_in_scene(self) -> OrientedBox:
        return self.landmark.box.transformed(self.transform)


@dataclass(frozen=True)
class Match(Candidate):
    """A candidate that survived suppression and the error threshold."""

    rank: int = 0


@dataclass(frozen=True)
class SearchParams:
    """Knobs for find_landmark; the defaults are the tuned operating point."""

    workspace: AxisAlignedBounds = field(default_factory=lambda: DEFAULT_WORKSPACE)
    voxel_leaf: float = 0.005
    sample_fraction: float = 0.05
    sample_max: int = 1000
    nms_radius: float = 0.03
    error_threshold: float = 0.0055
    icp: IcpParams = field(default_factory=IcpParams)
    seed: int = 0

    def __post_init__(self):
        if not (self.voxel_leaf > 0):
            raise ValueError("non-positive leaf size")
        if not (0.0 < self.sample_fraction <= 1.0):
            raise ValueError("sample_fraction must be in (0, 1]")
        if self.sample_max < 1:
            raise ValueError("sample_max must be positive")
        if not (self.nms_radius > 0):
            raise ValueError("nms_radius must be positive")
        if not (self.error_threshold > 0):
            raise ValueError("error_threshold must be positive")


def candidate_error(
    candidate: Candidate,
    scene: SpatialIndex,
    candidate_index: SpatialIndex | None = None,
) -> float:
    """Bidirectional mean distance between the placed candidate and the scene.

    Forward pass: every scene point inside the candidate's box contributes
    its distance to the nearest candidate point, marking that candidate
    point visited. Reverse pass: every candidate point never visited
    contributes its distance to the nearest point of the full scene (not
    the box crop), so a candidate hanging off the edge of observed geometry
    still pays for its unsupported points. The result is the sum divided by
    the number of contributing terms; an empty crop leaves every candidate
    point unvisited, so the denominator is never zero.
    """
    cand_cloud = candidate.cloud_in_scene()
    if len(cand_cloud) == 0:
        raise ValueError("candidate cloud is empty")
    if len(scene) == 0:
        raise ValueError("scene index is empty")
    if candidate_index is None:
        candidate_index = build_index(cand_cloud)

    box = candidate.box_in_scene()
    # coarse ball filter around the box, then the exact containment test;
    # fsum keeps the total independent of accumulation order
    near_ids = scene.ids_within(
        box.pose.translation, 0.5 * float(np.linalg.norm(box.size)) + 1e-12
    )
    near = scene.cloud.points[near_ids]
    cropped = near[box.contains_mask(near)]

    terms = []
    visited = set()
    if len(cropped) > 0:
        ids, dists = candidate_index.nearest_many(cropped)
        terms.extend(dists.tolist())
        visited.update(int(i) for i in ids)

    unvisited = [i for i in range(len(cand_cloud)) if i not in visited]
    if unvisited:
        _, dists = scene.nearest_many(cand_cloud.points[unvisited])
        terms.extend(dists.tolist())

    return math.fsum(terms) / (len(cropped) + len(unvisited))


def non_max_suppression(candidates: list[Candidate], radius: float) -> list[Candidate]:
    """Keep only candidates that are the best within their own radius.

    A candidate survives iff no other candidate within `radius` (measured
    between transformed-cloud centroids) has strictly lower error, or equal
    error with a lower input index. Output is sorted by ascending error
    (ties by input index), so the rule and the ordering are deterministic.
    """
    if not candidates:
        return []
    centers = np.array([c.centroid for c in candidates])
    errors = np.array([c.error for c in candidates])
    n = len(candidates)
    diff = centers[:, None, :] - centers[None, :, :]
    within = np.sqrt(np.sum(diff * diff, axis=2)) <= radius
    keep = []
    for i in range(n):
        dominated = False
        for j in range(n):
            if j == i or not within[i, j]:
                continue
            if errors[j] < errors[i] or (errors[j] == errors[i] and j < i):
                dominated = True
                break
        if not dominated:
            keep.append(i)
    keep.sort(key=lambda i: (errors[i], i))
    return [candidates[i] for i in keep]


def find_landmark(
    scene: PointCloud, landmark: Landmark, params: SearchParams
) -> list[Match]:
    """Locate instances of `landmark` in `scene`.

    Pipeline: crop the scene to the workspace, voxel-downsample it, draw a
    seeded random sample of scene points, and at each sample place a copy
    of the landmark with its cloud centroid on the sample, refine with ICP,
    and score it. Candidates then pass through non-max suppression and a
    strict error threshold. The result is deterministic for a fixed
    params.seed regardless of evaluation order.
    """
    cropped = crop_to_workspace(scene, params.workspace)
    if len(cropped) == 0:
        raise ValueError("scene empty after cropping")
    downsampled = voxel_downsample(cropped, params.voxel_leaf)
    scene_index = build_index(downsampled)

    rng = SeededRng(params.seed)
    seeds = sample_points(downsampled, params.sample_fraction, params.sample_max, rng)

    capture_centroid = landmark.cloud_centroid()
    inits = [
        RigidTransform.from_translation(seed_point - capture_centroid)
        for seed_point in seeds
    ]
    aligned = icp_align_many(landmark.cloud, scene_index, inits, params.icp)
    candidates = []
    for seed_point, icp in zip(seeds, aligned):
        placed = Candidate(
            landmark=landmark,
            transform=icp.transform,
            seed_point=seed_point,
            centroid=icp.transform.apply(landmark.cloud.points).mean(axis=0),
        )
        # non-converged candidates are still scored; the threshold is the
        # arbiter of whether an alignment is good enough
        error = candidate_error(placed, scene_index)
        candidates.append(replace(placed, error=error))

    survivors = non_max_suppression(candidates, params.nms_radius)
    matches = [
        Match(
            landmark=c.landmark,
            transform=c.transform,
            seed_point=c.seed_point,
            centroid=c.centroid,
            error=c.error,
            rank=rank,
        )
        for rank, c in enumerate(
            (c for c in survivors if c.error < params.error_threshold), start=1
        )
    ]
    return matches


def transfer_pose(demo_pose: RigidTransform, match: Match) -> RigidTransform:
    """Re-anchor a pose demonstrated relative to the landmark's capture frame
    into the frame of the matched instance."""
    return match.transform.compose(demo_pose)


def capture_landmark(
    scene: PointCloud,
    box: OrientedBox,
    name: str,
    scene_id: str = "",
    created_at: str = "",
) -> Landmark:
    """Record the subset of `scene` inside `box` as a new landmark."""
    patch = crop_to_box(scene, box)
    if len(patch) == 0:
        raise ValueError("box contains no points")
    return Landmark(
        cloud=patch, box=box, name=name, scene_id=scene_id, created_at=created_at
    )
