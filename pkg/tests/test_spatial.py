import numpy as np
import pytest

from cloudmark.geometry import PointCloud, point_distance
from cloudmark.spatial import (
    AxisAlignedBounds,
    SeededRng,
    build_index,
    crop_to_workspace,
    sample_points,
    voxel_downsample,
)
from conftest import cloud_of


def linear_scan_nearest(points, q):
    """Brute-force oracle: lowest-ID point at minimal distance."""
    best_i, best_d = 0, point_distance(points[0], q)
    for i in range(1, len(points)):
        d = point_distance(points[i], q)
        if d < best_d:
            best_i, best_d = i, d
    return best_i, best_d


class TestSpatialIndex:
    def test_empty_index(self):
        index = build_index(PointCloud.empty())
        assert len(index) == 0
        with pytest.raises(ValueError, match="empty index"):
            index.nearest((0, 0, 0))

    def test_single_point(self):
        index = build_index(cloud_of([[0, 0, 0]]))
        result = index.nearest((1, 0, 0))
        assert result.id == 0 and result.distance == 1.0

    def test_two_points(self):
        index = build_index(cloud_of([[0, 0, 0], [2, 0, 0]]))
        result = index.nearest((0.9, 0, 0))
        assert result.id == 0
        assert abs(result.distance - 0.9) < 1e-15

    def test_tie_breaks_to_lowest_id(self):
        index = build_index(cloud_of([[0, 0, 0], [2, 0, 0]]))
        result = index.nearest((1, 0, 0))
        assert result.id == 0 and result.distance == 1.0

    def test_matches_linear_scan_random(self, rng):
        pts = rng.uniform(-1, 1, (1000, 3))
        index = build_index(cloud_of(pts))
        for q in rng.uniform(-1.2, 1.2, (100, 3)):
            got = index.nearest(q)
            want_i, want_d = linear_scan_nearest(pts, q)
            assert got.id == want_i
            assert got.distance == want_d

    def test_matches_linear_scan_on_grid_ties(self):
        # regular grid data provokes exact distance ties
        axis = np.arange(5) * 0.1
        pts = np.array([[x, y, z] for x in axis for y in axis for z in axis])
        index = build_index(cloud_of(pts))
        queries = np.concatenate([pts + 0.05, pts[:20]])
        ids, dists = index.nearest_many(queries)
        for q, got_i, got_d in zip(queries, ids, dists):
            want_i, want_d = linear_scan_nearest(pts, q)
            assert got_i == want_i
            assert got_d == want_d

    def test_nearest_many_matches_linear_scan_up_to_5000(self, rng):
        pts = rng.uniform(-1, 1, (5000, 3))
        index = build_index(cloud_of(pts))
        queries = rng.uniform(-1, 1, (200, 3))
        ids, dists = index.nearest_many(queries)
        for q, got_i, got_d in zip(queries, ids, dists):
            want_i, want_d = linear_scan_nearest(pts, q)
            assert got_i == want_i and got_d == want_d

    def test_gated_query_matches_brute_force(self, rng):
        pts = rng.uniform(-0.5, 0.5, (800, 3))
        index = build_index(cloud_of(pts))
        queries = rng.uniform(-0.6, 0.6, (300, 3))
        gate = 0.07
        ids, dists = index.nearest_within(queries, gate)
        for q, got_i, got_d in zip(queries, ids, dists):
            want_i, want_d = linear_scan_nearest(pts, q)
            if want_d <= gate:
                assert got_i == want_i
                assert got_d == want_d
            else:
                assert got_i == -1 and got_d == np.inf

    def test_gated_query_grid_and_tree_agree(self, rng):
        # tiny gate forces the k-d tree fallback; compare against the grid
        pts = rng.uniform(0, 0.005, (400, 3))
        queries = rng.uniform(0, 0.005, (100, 3))
        coarse = build_index(cloud_of(pts))
        ids_a, d_a = coarse.nearest_within(queries, 0.002)
        fine = build_index(cloud_of(pts * 1000))  # same topology, grid path
        ids_b, d_b = fine.nearest_within(queries * 1000, 2.0)
        assert np.array_equal(ids_a >= 0, ids_b >= 0)


class TestVoxelDownsample:
    def test_empty(self):
        assert len(voxel_downsample(PointCloud.empty(), 0.005)) == 0

    def test_merges_same_voxel(self):
        cloud = cloud_of([[0.001, 0, 0], [0.003, 0, 0]])
        out = voxel_downsample(cloud, 0.005)
        assert len(out) == 1
        assert np.allclose(out.points[0], (0.002, 0, 0), atol=1e-18)

    def test_keeps_distinct_voxels(self):
        cloud = cloud_of([[0.001, 0, 0], [0.006, 0, 0]])
        out = voxel_downsample(cloud, 0.005)
        assert len(out) == 2
        assert np.array_equal(out.points, cloud.points)

    def test_rejects_nonpositive_leaf(self):
        with pytest.raises(ValueError, match="non-positive leaf"):
            voxel_downsample(cloud_of([[0, 0, 0]]), 0.0)

    def test_matches_dict_oracle(self, rng):
        pts = rng.uniform(-0.3, 0.3, (500, 3))
        leaf = 0.05
        out = voxel_downsample(cloud_of(pts), leaf)

        groups = {}
        for p in pts:
            key = tuple(np.floor(p / leaf).astype(int))
            groups.setdefault(key, []).append(p)
        want = np.array([np.mean(groups[k], axis=0) for k in sorted(groups)])
        assert out.points.shape == want.shape
        assert np.allclose(out.points, want, atol=1e-12)

    def test_output_points_stay_in_their_voxel(self, rng):
        pts = rng.uniform(-1, 1, (400, 3))
        leaf = 0.07
        out = voxel_downsample(cloud_of(pts), leaf)
        assert len(out) <= 400
        in_coords = {tuple(c) for c in np.floor(pts / leaf).astype(int)}
        out_coords = {tuple(c) for c in np.floor(out.points / leaf).astype(int)}
        assert out_coords == in_coords

    def test_repeat_downsample_keeps_occupancy(self, rng):
        pts = rng.uniform(-1, 1, (400, 3))
        leaf = 0.07
        once = voxel_downsample(cloud_of(pts), leaf)
        twice = voxel_downsample(once, leaf)
        occ = lambda c: {tuple(v) for v in np.floor(c.points / leaf).astype(int)}
        assert occ(once) == occ(twice)

    def test_order_independent(self, rng):
        pts = rng.uniform(-0.2, 0.2, (200, 3))
        a = voxel_downsample(cloud_of(pts), 0.03)
        b = voxel_downsample(cloud_of(pts[::-1]), 0.03)
        assert np.allclose(a.points, b.points, atol=1e-15)

    def test_negative_coordinates_anchor_at_origin(self):
        cloud = cloud_of([[-0.001, 0, 0], [0.001, 0, 0]])
        out = voxel_downsample(cloud, 0.005)
        # origin-anchored grid separates the two sides of zero
        assert len(out) == 2


class TestSamplePoints:
    def test_five_percent_of_100(self):
        cloud = cloud_of(np.random.default_rng(0).uniform(0, 1, (100, 3)))
        picked = sample_points(cloud, 0.05, 1000, SeededRng(1))
        assert len(picked) == 5

    def test_cap_applies(self):
        cloud = cloud_of(np.random.default_rng(0).uniform(0, 1, (40000, 3)))
        picked = sample_points(cloud, 0.05, 1000, SeededRng(1))
        assert len(picked) == 1000

    def test_full_fraction_returns_all(self):
        pts = np.random.default_rng(0).uniform(0, 1, (10, 3))
        picked = sample_points(cloud_of(pts), 1.0, 1000, SeededRng(1))
        assert len(picked) == 10
        assert {tuple(p) for p in picked} == {tuple(p) for p in pts}

    def test_same_seed_same_sequence(self):
        cloud = cloud_of(np.random.default_rng(3).uniform(0, 1, (500, 3)))
        a = sample_points(cloud, 0.1, 1000, SeededRng(42))
        b = sample_points(cloud, 0.1, 1000, SeededRng(42))
        assert np.array_equal(a, b)

    def test_distinct_and_members(self, rng):
        pts = rng.uniform(0, 1, (200, 3))
        picked = sample_points(cloud_of(pts), 0.5, 1000, SeededRng(7))
        rows = {tuple(p) for p in pts}
        seen = [tuple(p) for p in picked]
        assert len(seen) == len(set(seen)) == 100
        assert all(s in rows for s in seen)

    def test_empty_cloud_errors(self):
        with pytest.raises(ValueError, match="cannot sample from empty scene"):
            sample_points(PointCloud.empty(), 0.05, 10, SeededRng(0))


class TestWorkspaceCrop:
    def test_infinite_bounds_keep_all(self, rng):
        cloud = cloud_of(rng.uniform(-5, 5, (50, 3)))
        region = AxisAlignedBounds(np.full(3, -np.inf), np.full(3, np.inf))
        assert crop_to_workspace(cloud, region) == cloud

    def test_empty_cloud(self):
        region = AxisAlignedBounds(np.zeros(3), np.ones(3))
        assert len(crop_to_workspace(PointCloud.empty(), region)) == 0

    def test_default_region_drops_far_point(self):
        region = AxisAlignedBounds(
            np.array([0.2, -0.8, 0.0]), np.array([1.2, 0.8, 1.6])
        )
        cloud = cloud_of([[0.5, 0, 0.5], [2, 0, 0]])
        out = crop_to_workspace(cloud, region)
        assert np.array_equal(out.points, np.array([[0.5, 0, 0.5]]))

    def test_idempotent(self, rng):
        region = AxisAlignedBounds(np.array([-0.5, -0.5, -0.5]), np.array([0.5, 0.5, 0.5]))
        cloud = cloud_of(rng.uniform(-1, 1, (100, 3)))
        once = crop_to_workspace(cloud, region)
        assert crop_to_workspace(once, region) == once

    def test_inverted_region_errors(self):
        with pytest.raises(ValueError, match="inverted region"):
            AxisAlignedBounds(np.array([1.0, 0, 0]), np.array([0.0, 1, 1]))


class TestSeededRng:
    def test_same_seed_same_draws(self):
        a = SeededRng(123).generator.uniform(size=10)
        b = SeededRng(123).generator.uniform(size=10)
        assert np.array_equal(a, b)

    def test_child_streams_differ(self):
        base = SeededRng(5)
        assert not np.array_equal(
            base.child(1).generator.uniform(size=5),
            base.child(2).generator.uniform(size=5),
        )
