"""Rigid point-to-point ICP used to refine seeded landmark candidates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import PointCloud, RigidTransform
from .spatial import SpatialIndex

__all__ = [
    "IcpParams",
    "IcpResult",
    "estimate_rigid_transform",
    "icp_align",
    "icp_align_many",
]

# Second singular value of the cross-covariance below this (relative to the
# largest) means the pairing is collinear and the rotation is not unique.
_DEGENERACY_RTOL = 1e-9


@dataclass(frozen=True)
class IcpParams:
    """Controls for icp_align.

    Defaults assume seeds start at most a few centimeters from the true
    pose, so the correspondence gate is kept tight (10x the default voxel
    leaf) to suppress pull from nearby distractor geometry.
    """

    max_iterations: int = 30
    correspondence_max_distance: float = 0.05
    translation_epsilon: float = 1e-4
    rotation_epsilon: float = 1e-3
    mse_relative_epsilon: float = 1e-6

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")
        for name in (
            "correspondence_max_distance",
            "translation_epsilon",
            "rotation_epsilon",
            "mse_relative_epsilon",
        ):
            if not (getattr(self, name) > 0):
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class IcpResult:
    """Outcome of one alignment.

    `transform` maps the original source cloud into the scene (the seed
    offset folded in). `mse_steps` records (before, after) mean squared
    correspondence distance around each iteration's least-squares solve,
    both measured on that iteration's gated correspondence set.
    """

    transform: RigidTransform
    iterations_used: int
    final_mse: float
    converged: bool
    mse_steps: tuple = field(default=())


def _kabsch(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Raw (rotation, translation) minimizing sum ||R @ src_i + t - dst_i||^2."""
    src_mean = src.mean(axis=0)
    dst_mean = dst.mean(axis=0)
    h = (src - src_mean).T @ (dst - dst_mean)
    u, s, vt = np.linalg.svd(h)
    if s[1] <= _DEGENERACY_RTOL * max(s[0], np.finfo(np.float64).tiny):
        raise ValueError("degenerate correspondence set")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rotation = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    translation = dst_mean - rotation @ src_mean
    return rotation, translation


def estimate_rigid_transform(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Least-squares rigid alignment of paired points (Kabsch/Horn).

    Returns the T minimizing sum ||T @ src_i - dst_i||^2. Reflections are
    disallowed: the smallest singular direction's sign is corrected so the
    rotation determinant is +1.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.ndim != 2 or src.shape != dst.shape or src.shape[1] != 3:
        raise ValueError("src and dst must be matching (N, 3) arrays")
    if src.shape[0] < 3:
        raise ValueError("degenerate correspondence set")
    rotation, translation = _kabsch(src, dst)
    return RigidTransform.from_matrix(rotation, translation)


def _rotation_angle(r: np.ndarray) -> float:
    cos = (float(np.trace(r)) - 1.0) / 2.0
    return math.acos(min(1.0, max(-1.0, cos)))


def icp_align(
    source: PointCloud,
    scene: SpatialIndex,
    init: RigidTransform,
    params: IcpParams,
) -> IcpResult:
    """Iteratively align `source` to the indexed scene starting from `init`.

    Each iteration pairs the transformed source with its nearest scene
    points inside the correspondence gate, solves the least-squares rigid
    fit on those pairs, and folds the increment into the running transform.
    Stops on max_iterations, on a small enough increment (translation and
    rotation), or on a small relative MSE change. If fewer than 3 gated
    correspondences remain (or the pairing is degenerate), the last valid
    transform is returned with converged=False.
    """
    if len(source) < 3:
        raise ValueError("ICP source needs at least 3 points")
    if len(scene) == 0:
        raise ValueError("ICP scene index is empty")

    # hot loop keeps the pose as (R, t); quaternion form is rebuilt at exit
    rot = init.rotation_matrix
    trans = init.translation
    src = source.points
    scene_pts = scene.cloud.points
    gate = params.correspondence_max_distance
    mse_steps = []
    prev_mse = None
    converged = False
    iterations = 0

    def result(final_mse, ok):
        return IcpResult(
            RigidTransform.from_matrix(rot, trans),
            iterations,
            final_mse,
            ok,
            tuple(mse_steps),
        )

    for iterations in range(1, params.max_iterations + 1):
        moved = src @ rot.T + trans
        ids, dists = scene.nearest_within(moved, gate)
        keep = ids >= 0
        if np.count_nonzero(keep) < 3:
            return result(float("inf"), False)
        matched = moved[keep]
        targets = scene_pts[ids[keep]]
        mse_before = float(np.mean(dists[keep] ** 2))
        try:
            d_rot, d_trans = _kabsch(matched, targets)
        except ValueError:
            return result(mse_before, False)
        rot = d_rot @ rot
        trans = d_rot @ trans + d_trans

        residual = matched @ d_rot.T + d_trans - targets
        mse_after = float(np.mean(np.sum(residual * residual, axis=1)))
        mse_steps.append((mse_before, mse_after))

        small_step = (
            float(np.linalg.norm(d_trans)) < params.translation_epsilon
            and _rotation_angle(d_rot) < params.rotation_epsilon
        )
        small_change = (
            prev_mse is not None
            and abs(prev_mse - mse_after) < params.mse_relative_epsilon * max(prev_mse, 1e-300)
        )
        prev_mse = mse_after
        if small_step or small_change:
            converged = True
            break

    return result(prev_mse, converged)


def icp_align_many(
    source: PointCloud,
    scene: SpatialIndex,
    inits: list,
    params: IcpParams,
) -> list:
    """Align one source against the scene from many initial poses at once.

    Follows the same per-candidate iteration and stopping rules as
    icp_align, but runs every still-active candidate through a single
    batched correspondence query and a batched least-squares solve per
    sweep. Each candidate's outcome is independent of the others, so the
    result list is deterministic regardless of how candidates are batched.
    """
    if len(source) < 3:
        raise ValueError("ICP source needs at least 3 points")
    if len(scene) == 0:
        raise ValueError("ICP scene index is empty")
    n_cand = len(inits)
    if n_cand == 0:
        return []

    src = source.points
    n_pts = len(src)
    scene_pts = scene.cloud.points
    gate = params.correspondence_max_distance

    rot = np.stack([t.rotation_matrix for t in inits])
    trans = np.stack([t.translation for t in inits])
    active = np.ones(n_cand, dtype=bool)
    converged = np.zeros(n_cand, dtype=bool)
    iterations = np.zeros(n_cand, dtype=np.int64)
    final_mse = np.full(n_cand, np.inf)
    prev_mse = np.full(n_cand, np.nan)

    for sweep in range(1, params.max_iterations + 1):
        idx = np.nonzero(active)[0]
        if len(idx) == 0:
            break
        iterations[idx] = sweep
        moved = np.matmul(src, rot[idx].transpose(0, 2, 1)) + trans[idx][:, None, :]
        ids, dists = scene.nearest_within(moved.reshape(-1, 3), gate)
        ids = ids.reshape(len(idx), n_pts)
        dists = dists.reshape(len(idx), n_pts)
        valid = ids >= 0
        counts = valid.sum(axis=1)

        starved = counts < 3
        if np.any(starved):
            active[idx[starved]] = False
            final_mse[idx[starved]] = np.inf
        solve = np.nonzero(~starved)[0]
        if len(solve) == 0:
            continue
        cand = idx[solve]
        weights = valid[solve].astype(np.float64)[:, :, None]
        counts_f = counts[solve].astype(np.float64)[:, None]
        targets = scene_pts[np.clip(ids[solve], 0, None)]
        moved_s = moved[solve]
        mse_before = np.sum(np.where(valid[solve], dists[solve] ** 2, 0.0), axis=1) / counts[solve]

        m_mean = np.sum(moved_s * weights, axis=1) / counts_f
        t_mean = np.sum(targets * weights, axis=1) / counts_f
        m_centered = (moved_s - m_mean[:, None, :]) * weights
        t_centered = (targets - t_mean[:, None, :]) * weights
        h = np.matmul(m_centered.transpose(0, 2, 1), t_centered)
        u, s, vt = np.linalg.svd(h)
        degenerate = s[:, 1] <= _DEGENERACY_RTOL * np.maximum(
            s[:, 0], np.finfo(np.float64).tiny
        )
        if np.any(degenerate):
            bad = cand[degenerate]
            final_mse[bad] = mse_before[degenerate]
            active[bad] = False
            keep = ~degenerate
            cand, solve = cand[keep], solve[keep]
            if len(cand) == 0:
                continue
            u, vt = u[keep], vt[keep]
            m_mean, t_mean = m_mean[keep], t_mean[keep]
            moved_s, targets = moved_s[keep], targets[keep]
            weights, counts_f = weights[keep], counts_f[keep]
            mse_before = mse_before[keep]

        v = vt.transpose(0, 2, 1).copy()
        signs = np.sign(np.linalg.det(v @ u.transpose(0, 2, 1)))
        v[:, :, 2] *= signs[:, None]
        d_rot = v @ u.transpose(0, 2, 1)
        d_trans = t_mean - np.einsum("aij,aj->ai", d_rot, m_mean)

        rot[cand] = d_rot @ rot[cand]
        trans[cand] = np.einsum("aij,aj->ai", d_rot, trans[cand]) + d_trans

        residual = (
            np.matmul(moved_s, d_rot.transpose(0, 2, 1))
            + d_trans[:, None, :]
            - targets
        ) * weights
        mse_after = np.sum(residual * residual, axis=(1, 2)) / counts_f[:, 0]
        final_mse[cand] = mse_after

        trace = d_rot[:, 0, 0] + d_rot[:, 1, 1] + d_rot[:, 2, 2]
        angles = np.arccos(np.clip((trace - 1.0) / 2.0, -1.0, 1.0))
        small_step = (
            np.linalg.norm(d_trans, axis=1) < params.translation_epsilon
        ) & (angles < params.rotation_epsilon)
        with np.errstate(invalid="ignore"):
            small_change = np.abs(prev_mse[cand] - mse_after) < (
                params.mse_relative_epsilon * np.maximum(prev_mse[cand], 1e-300)
            )
        small_change &= ~np.isnan(prev_mse[cand])
        prev_mse[cand] = mse_after
        stop = small_step | small_change
        if np.any(stop):
            stopped = cand[stop]
            converged[stopped] = True
            active[stopped] = False

    results = []
    for a in range(n_cand):
        results.append(
            IcpResult(
                RigidTransform.from_matrix(rot[a], trans[a]),
                int(iterations[a]),
                float(final_mse[a]),
                bool(converged[a]),
                (),
            )
        )
    return results
