import math

import numpy as np
import pytest
from scipy.optimize import minimize

from cloudmark.geometry import PointCloud, RigidTransform
from cloudmark.registration import (
    IcpParams,
    estimate_rigid_transform,
    icp_align,
    icp_align_many,
)
from cloudmark.spatial import build_index
from cloudmark.synth import Placement, SceneSpec, generate_scene
from conftest import cloud_of, random_rigid_transform


def rotvec_to_matrix(v):
    angle = np.linalg.norm(v)
    if angle < 1e-12:
        return np.eye(3)
    axis = v / angle
    k = np.array(
        [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
    )
    return np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)


def brute_force_fit(src, dst):
    """Quaternion/rotation-vector brute force: coarse grid then refinement.

    The translation is closed-form for a fixed rotation, so the search is
    3-dimensional.
    """

    def cost_of_rotvec(v):
        r = rotvec_to_matrix(v)
        t = dst.mean(axis=0) - r @ src.mean(axis=0)
        res = src @ r.T + t - dst
        return float(np.sum(res * res))

    best_v, best_c = np.zeros(3), cost_of_rotvec(np.zeros(3))
    lin = np.linspace(-math.pi, math.pi, 11)
    for vx in lin:
        for vy in lin:
            for vz in lin:
                v = np.array([vx, vy, vz])
                if np.linalg.norm(v) > math.pi:
                    continue
                c = cost_of_rotvec(v)
                if c < best_c:
                    best_v, best_c = v, c
    refined = minimize(cost_of_rotvec, best_v, method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-18, "maxiter": 4000})
    r = rotvec_to_matrix(refined.x)
    t = dst.mean(axis=0) - r @ src.mean(axis=0)
    return r, t, float(refined.fun)


class TestEstimateRigidTransform:
    def test_identical_sets_give_identity(self, rng):
        src = rng.uniform(-1, 1, (10, 3))
        t = estimate_rigid_transform(src, src)
        assert t.rotation_angle() < 1e-9
        assert np.linalg.norm(t.translation) < 1e-9

    def test_pure_translation(self, rng):
        src = rng.uniform(-1, 1, (8, 3))
        t = estimate_rigid_transform(src, src + np.array([0, 0, 0.1]))
        assert t.rotation_angle() < 1e-9
        assert np.allclose(t.translation, (0, 0, 0.1), atol=1e-12)

    def test_recovers_30_degree_rotation(self):
        src = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0.3, 0.2, 1.0]])
        want = RigidTransform.from_axis_angle((0, 0, 1), math.radians(30))
        got = estimate_rigid_transform(src, want.apply(src))
        assert got.inverse().compose(want).rotation_angle() < 1e-6

    def test_rejects_reflection(self, rng):
        # mirrored target points must still produce a proper rotation
        src = rng.uniform(-1, 1, (20, 3))
        dst = src * np.array([1, 1, -1])
        t = estimate_rigid_transform(src, dst)
        assert np.linalg.det(t.rotation_matrix) > 0

    def test_too_few_points(self):
        with pytest.raises(ValueError, match="degenerate correspondence set"):
            estimate_rigid_transform(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_collinear_points_degenerate(self):
        src = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]], dtype=float)
        with pytest.raises(ValueError, match="degenerate correspondence set"):
            estimate_rigid_transform(src, src + 0.1)

    def test_matches_brute_force_minimizer_on_4_points(self, rng):
        for _ in range(5):
            src = rng.uniform(-0.5, 0.5, (4, 3))
            truth = random_rigid_transform(rng, max_translation=0.3)
            dst = truth.apply(src) + rng.normal(0, 0.01, (4, 3))
            fit = estimate_rigid_transform(src, dst)
            r_bf, t_bf, c_bf = brute_force_fit(src, dst)
            res = src @ fit.rotation_matrix.T + fit.translation - dst
            c_fit = float(np.sum(res * res))
            assert c_fit <= c_bf + 1e-9
            delta = fit.rotation_matrix @ r_bf.T
            angle = math.acos(min(1.0, max(-1.0, (np.trace(delta) - 1) / 2)))
            assert angle < 1e-6
            assert np.linalg.norm(fit.translation - t_bf) < 1e-6

    def test_least_squares_optimality_vs_perturbations(self, rng):
        src = rng.uniform(-1, 1, (12, 3))
        truth = random_rigid_transform(rng)
        dst = truth.apply(src) + rng.normal(0, 0.02, (12, 3))
        fit = estimate_rigid_transform(src, dst)
        base = float(np.sum((fit.apply(src) - dst) ** 2))
        for _ in range(50):
            wiggle = random_rigid_transform(rng, max_translation=0.01)
            q = wiggle.quaternion * np.array([1, 0.01, 0.01, 0.01])
            q /= np.linalg.norm(q)
            tweaked = RigidTransform(q, fit.translation + rng.normal(0, 0.005, 3)).compose(
                RigidTransform(fit.quaternion, np.zeros(3))
            )
            cost = float(np.sum((tweaked.apply(src) - dst) ** 2))
            assert base <= cost + 1e-12


def surface_cloud(kind, seed, n_target):
    dims = {"box": (0.12, 0.08, 0.1), "sphere": (0.06,), "cylinder": (0.05, 0.12)}[kind]
    area = {
        "box": 2 * (0.12 * 0.08 + 0.08 * 0.1 + 0.12 * 0.1),
        "sphere": 4 * math.pi * 0.06**2,
        "cylinder": 2 * math.pi * 0.05 * 0.12,
    }[kind]
    placement = Placement(
        kind, RigidTransform.from_translation((0.6, 0, 0.8)), dims,
        density=n_target / area, cull=False,
    )
    cloud, _ = generate_scene(SceneSpec((placement,)), seed)
    return cloud


class TestIcpAlign:
    def test_already_aligned(self, rng):
        pts = rng.uniform(-0.2, 0.2, (300, 3))
        scene = build_index(cloud_of(pts))
        result = icp_align(cloud_of(pts), scene, RigidTransform.identity(), IcpParams())
        assert result.converged
        assert result.transform.rotation_angle() < 1e-9
        assert result.final_mse < 1e-12

    def test_recovers_small_translation(self, rng):
        pts = rng.uniform(-0.2, 0.2, (400, 3))
        scene = build_index(cloud_of(pts + np.array([0.01, 0.005, 0.0])))
        result = icp_align(cloud_of(pts), scene, RigidTransform.identity(), IcpParams())
        assert result.converged
        assert np.linalg.norm(result.transform.translation - (0.01, 0.005, 0.0)) < 1e-4

    def test_starved_gate_returns_init_unconverged(self, rng):
        pts = rng.uniform(-0.1, 0.1, (100, 3))
        scene = build_index(cloud_of(pts))
        init = RigidTransform.from_translation((5, 5, 5))
        result = icp_align(cloud_of(pts), scene, init, IcpParams())
        assert not result.converged
        assert result.transform.is_close(init, tol=1e-12)
        assert result.final_mse == math.inf

    def test_rejects_tiny_source(self, rng):
        scene = build_index(cloud_of(rng.uniform(0, 1, (10, 3))))
        with pytest.raises(ValueError):
            icp_align(cloud_of([[0, 0, 0]]), scene, RigidTransform.identity(), IcpParams())

    def test_mse_steps_non_increasing_within_iteration(self, rng):
        pts = rng.uniform(-0.2, 0.2, (500, 3))
        perturb = RigidTransform.from_axis_angle((0, 0, 1), math.radians(8), (0.015, -0.01, 0.005))
        scene = build_index(cloud_of(perturb.apply(pts)))
        result = icp_align(cloud_of(pts), scene, RigidTransform.identity(), IcpParams())
        assert result.converged
        assert len(result.mse_steps) == result.iterations_used
        for before, after in result.mse_steps:
            assert after <= before + 1e-12

    @pytest.mark.parametrize("kind", ["box", "sphere", "cylinder"])
    def test_transform_recovery_per_shape(self, kind, rng):
        cloud = surface_cloud(kind, seed=3, n_target=500)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        perturb = RigidTransform.from_axis_angle(
            axis, math.radians(10), rng.uniform(-0.02, 0.02, 3)
        )
        scene = build_index(cloud.transformed(perturb))
        result = icp_align(cloud, scene, RigidTransform.identity(), IcpParams())
        delta = result.transform.compose(perturb.inverse())
        assert delta.rotation_angle() < math.radians(0.5)
        assert np.linalg.norm(result.transform.translation - perturb.translation) < 1e-3 + 0.02

    def test_rotation_stays_orthonormal(self, rng):
        cloud = surface_cloud("box", seed=9, n_target=400)
        perturb = RigidTransform.from_axis_angle((0.1, 0.2, 1), 0.15, (0.01, 0.01, -0.01))
        scene = build_index(cloud.transformed(perturb))
        result = icp_align(cloud, scene, RigidTransform.identity(), IcpParams())
        r = result.transform.rotation_matrix
        assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-9
        assert np.linalg.det(r) > 0


class TestIcpAlignMany:
    def test_matches_sequential(self, rng):
        pts = rng.uniform(-0.2, 0.2, (300, 3))
        scene = build_index(cloud_of(pts))
        source = cloud_of(pts[:150] + rng.normal(0, 0.001, (150, 3)))
        inits = [
            RigidTransform.from_translation(rng.normal(0, 0.01, 3)) for _ in range(10)
        ]
        inits.append(RigidTransform.from_translation((9, 9, 9)))  # starved
        batch = icp_align_many(source, scene, inits, IcpParams())
        for init, got in zip(inits, batch):
            want = icp_align(source, scene, init, IcpParams())
            assert got.converged == want.converged
            assert got.iterations_used == want.iterations_used
            delta = got.transform.inverse().compose(want.transform)
            assert delta.rotation_angle() < 1e-9
            assert np.linalg.norm(delta.translation) < 1e-9
            if math.isfinite(want.final_mse):
                assert abs(got.final_mse - want.final_mse) <= 1e-12 + 1e-6 * want.final_mse
            else:
                assert got.final_mse == want.final_mse

    def test_empty_init_list(self, rng):
        scene = build_index(cloud_of(rng.uniform(0, 1, (50, 3))))
        assert icp_align_many(cloud_of(rng.uniform(0, 1, (10, 3))), scene, [], IcpParams()) == []
