"""Scene preparation: nearest-neighbor index, voxel downsampling, sampling, crops."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import numba
from numba import njit, prange
from scipy.spatial import cKDTree

# the bundled TBB is too old for numba; pick the OpenMP layer up front
numba.config.THREADING_LAYER = "omp"

from .geometry import PointCloud, point_distance

__all__ = [
    "SpatialIndex",
    "SeededRng",
    "AxisAlignedBounds",
    "NearestResult",
    "build_index",
    "voxel_downsample",
    "sample_points",
    "crop_to_workspace",
]


class NearestResult(NamedTuple):
    point: np.ndarray
    id: int
    distance: float


# grid cells are a quarter of the gate; points within the gate then lie
# within this many cells of the query on every axis
_GRID_RINGS = 4


@njit(cache=True, parallel=True)
def _grid_gated_nearest(
    queries, sorted_points, order, cell_start, grid_min, dims, cell, gate_sq,
    coarse_occupied, coarse_dims,
):  # pragma: no cover - exercised via nearest_within
    """Exact nearest neighbor within the gate over a uniform grid.

    Points come pre-sorted by cell so each cell scan is a sequential slice.
    A coarse occupancy lattice (cell edge = gate) proves misses with 27
    lookups; otherwise rings of fine cells expand outward until the best
    hit beats the lower bound of the next unscanned ring. Ties resolve to
    the lowest point ID. Each query is independent, so results do not
    depend on the number of worker threads.
    """
    n = queries.shape[0]
    nx, ny, nz = dims[0], dims[1], dims[2]
    cnx, cny, cnz = coarse_dims[0], coarse_dims[1], coarse_dims[2]
    ids = np.full(n, -1, dtype=np.int64)
    dists = np.full(n, np.inf, dtype=np.float64)
    for qi in prange(n):
        qx, qy, qz = queries[qi, 0], queries[qi, 1], queries[qi, 2]
        cx = int(np.floor((qx - grid_min[0]) / cell))
        cy = int(np.floor((qy - grid_min[1]) / cell))
        cz = int(np.floor((qz - grid_min[2]) / cell))

        # any point within the gate lies in the 3x3x3 coarse neighborhood
        ccx, ccy, ccz = cx // _GRID_RINGS, cy // _GRID_RINGS, cz // _GRID_RINGS
        occupied = False
        for ix in range(max(0, ccx - 1), min(cnx, ccx + 2)):
            for iy in range(max(0, ccy - 1), min(cny, ccy + 2)):
                for iz in range(max(0, ccz - 1), min(cnz, ccz + 2)):
                    if coarse_occupied[(ix * cny + iy) * cnz + iz]:
                        occupied = True
        if not occupied:
            continue

        best_sq = np.inf
        best_slot = -1
        for ring in range(_GRID_RINGS + 1):
            if best_slot >= 0 and ring > 0:
                # points in unscanned rings are farther than (ring-1) cells
                bound = (ring - 1) * cell
                if best_sq <= bound * bound:
                    break
            x0, x1 = max(0, cx - ring), min(nx - 1, cx + ring)
            y0, y1 = max(0, cy - ring), min(ny - 1, cy + ring)
            z0, z1 = max(0, cz - ring), min(nz - 1, cz + ring)
            for ix in range(x0, x1 + 1):
                rx = ix - cx if ix >= cx else cx - ix
                for iy in range(y0, y1 + 1):
                    ry = iy - cy if iy >= cy else cy - iy
                    base = (ix * ny + iy) * nz
                    for iz in range(z0, z1 + 1):
                        rz = iz - cz if iz >= cz else cz - iz
                        if max(rx, max(ry, rz)) != ring:
                            continue
                        key = base + iz
                        for slot in range(cell_start[key], cell_start[key + 1]):
                            dx = qx - sorted_points[slot, 0]
                            dy = qy - sorted_points[slot, 1]
                            dz = qz - sorted_points[slot, 2]
                            d_sq = dx * dx + dy * dy + dz * dz
                            if d_sq > gate_sq or d_sq > best_sq:
                                continue
                            if d_sq < best_sq:
                                best_sq = d_sq
                                best_slot = slot
                            elif order[slot] < order[best_slot]:
                                best_slot = slot
        if best_slot >= 0:
            ids[qi] = order[best_slot]
            dists[qi] = np.sqrt(best_sq)
    return ids, dists


class _GatedGrid:
    """Uniform hash grid supporting exact nearest-within-gate queries."""

    def __init__(self, points: np.ndarray, gate: float) -> None:
        self.gate = float(gate)
        self.cell = self.gate / _GRID_RINGS
        self.grid_min = points.min(axis=0)
        coords = np.floor((points - self.grid_min) / self.cell).astype(np.int64)
        self.dims = coords.max(axis=0) + 1
        nx, ny, nz = (int(d) for d in self.dims)
        keys = (coords[:, 0] * ny + coords[:, 1]) * nz + coords[:, 2]
        self.order = np.argsort(keys, kind="stable").astype(np.int64)
        self.sorted_points = np.ascontiguousarray(points[self.order])
        self.cell_start = np.zeros(nx * ny * nz + 1, dtype=np.int64)
        np.cumsum(np.bincount(keys, minlength=nx * ny * nz), out=self.cell_start[1:])
        coarse = coords // _GRID_RINGS
        self.coarse_dims = coarse.max(axis=0) + 1
        cnx, cny, cnz = (int(d) for d in self.coarse_dims)
        coarse_keys = (coarse[:, 0] * cny + coarse[:, 1]) * cnz + coarse[:, 2]
        self.coarse_occupied = np.zeros(cnx * cny * cnz, dtype=np.bool_)
        self.coarse_occupied[coarse_keys] = True

    @staticmethod
    def build(points: np.ndarray, gate: float):
        """Build a grid unless the gate is so fine the grid would be huge."""
        extent = points.max(axis=0) - points.min(axis=0)
        cells = np.prod(np.floor(extent / (gate / _GRID_RINGS)) + 1.0)
        if cells > max(8_000_000.0, 256.0 * len(points)):
            return None
        return _GatedGrid(points, gate)

    def query(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _grid_gated_nearest(
            np.ascontiguousarray(queries),
            self.sorted_points,
            self.order,
            self.cell_start,
            self.grid_min,
            self.dims,
            self.cell,
            self.gate * self.gate,
            self.coarse_occupied,
            self.coarse_dims,
        )


class SeededRng:
    """Deterministic random source: the same 64-bit seed yields the same
    draw sequence on every platform and run (PCG64)."""

    __slots__ = ("seed", "generator")

    def __init__(self, seed: int) -> None:
        self.seed = int(seed)
        self.generator = np.random.default_rng(self.seed)

    def child(self, ordinal: int) -> "SeededRng":
        """Derive an independent stream for parallel consumer `ordinal`."""
        return SeededRng(self.seed + ordinal)


class SpatialIndex:
    """Immutable k-d tree over a PointCloud snapshot.

    Point storage order provides stable IDs; exact-distance ties resolve to
    the lowest ID. Distances returned to callers are recomputed with
    `point_distance` so results are bit-identical to a linear scan.
    """

    def __init__(self, cloud: PointCloud) -> None:
        self.cloud = cloud
        self._tree = cKDTree(cloud.points) if len(cloud) > 0 else None
        self._grids: dict[float, _GatedGrid | None] = {}

    def __len__(self) -> int:
        return len(self.cloud)

    def nearest(self, q) -> NearestResult:
        """Globally nearest indexed point to q; ties break to the lowest ID."""
        if self._tree is None:
            raise ValueError("nearest-neighbor query on empty index")
        q = np.asarray(q, dtype=np.float64)
        ids, dists = self.nearest_many(q.reshape(1, 3))
        i = int(ids[0])
        return NearestResult(self.cloud.points[i], i, float(dists[0]))

    def nearest_many(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized nearest lookup for an (N, 3) query stack.

        Returns (ids, distances) with exact lowest-ID tie-breaking, so the
        answer matches a brute-force scan even on gridded data. Queries
        with a neighbor inside an already-built gate grid are answered by
        the grid (its result is the global nearest in that case); the rest
        go to the k-d tree.
        """
        if self._tree is None:
            raise ValueError("nearest-neighbor query on empty index")
        queries = np.asarray(queries, dtype=np.float64)
        ids = np.full(len(queries), -1, dtype=np.int64)
        unresolved = np.arange(len(queries))
        grid = next((g for g in self._grids.values() if g is not None), None)
        if grid is not None:
            grid_ids, _ = grid.query(queries)
            hits = grid_ids >= 0
            ids[hits] = grid_ids[hits]
            unresolved = np.nonzero(~hits)[0]
        if len(unresolved) > 0:
            ids[unresolved] = self._tree_nearest(queries[unresolved])
        # distances of record: same IEEE operation order as point_distance
        delta = queries - self.cloud.points[ids]
        return ids, np.sqrt(np.sum(delta * delta, axis=-1))

    def _tree_nearest(self, queries: np.ndarray) -> np.ndarray:
        k = min(2, len(self.cloud))
        dists, idx = self._tree.query(queries, k=k)
        if k == 1:
            return np.zeros(len(queries), dtype=np.int64)
        ids = idx[:, 0].astype(np.int64)
        # a second neighbor at (almost) the same distance means the tree's
        # pick may not be the lowest ID; re-check those queries exactly
        margin = 1e-12 + 1e-9 * dists[:, 0]
        suspect = np.nonzero(dists[:, 1] - dists[:, 0] <= margin)[0]
        for qi in suspect:
            ids[qi] = self._resolve_tie(queries[qi], float(dists[qi, 0]))
        return ids

    def _resolve_tie(self, q: np.ndarray, approx_dist: float) -> int:
        radius = approx_dist * (1.0 + 1e-9) + 1e-12
        candidates = sorted(self._tree.query_ball_point(q, radius))
        best_id = candidates[0]
        best_d = point_distance(q, self.cloud.points[best_id])
        for cid in candidates[1:]:
            d = point_distance(q, self.cloud.points[cid])
            if d < best_d:
                best_d, best_id = d, cid
        return int(best_id)

    def nearest_within(self, queries: np.ndarray, max_distance: float) -> tuple[np.ndarray, np.ndarray]:
        """Nearest neighbors gated at `max_distance` (inclusive).

        Returns (ids, distances) with id -1 and distance inf where nothing
        lies within the gate; ties resolve to the lowest ID. Served by a
        uniform grid with cell edge = gate, which is exact for gated
        lookups and much faster than tree traversal in ICP's inner loop.
        """
        if self._tree is None:
            raise ValueError("nearest-neighbor query on empty index")
        queries = np.asarray(queries, dtype=np.float64)
        if max_distance not in self._grids:
            self._grids[max_distance] = _GatedGrid.build(self.cloud.points, max_distance)
        grid = self._grids[max_distance]
        if grid is not None:
            return grid.query(queries)
        dists, idx = self._tree.query(queries, distance_upper_bound=max_distance)
        missing = ~np.isfinite(dists)
        ids = idx.astype(np.int64)
        ids[missing] = -1
        return ids, dists

    def ids_within(self, center, radius: float) -> np.ndarray:
        """Sorted IDs of indexed points within `radius` of `center`."""
        if self._tree is None:
            raise ValueError("nearest-neighbor query on empty index")
        ids = self._tree.query_ball_point(np.asarray(center, dtype=np.float64), radius)
        return np.sort(np.asarray(ids, dtype=np.int64))


def build_index(cloud: PointCloud) -> SpatialIndex:
    return SpatialIndex(cloud)


def voxel_downsample(cloud: PointCloud, leaf: float) -> PointCloud:
    """Collapse each occupied voxel to the centroid of its member points.

    The grid is axis-aligned with cube edge `leaf`, anchored at the world
    origin. Output order is ascending lexicographic voxel coordinate, which
    makes the result deterministic and independent of input order.
    """
    if not (leaf > 0):
        raise ValueError("non-positive leaf size")
    if len(cloud) == 0:
        return PointCloud.empty()
    coords = np.floor(cloud.points / leaf).astype(np.int64)
    order = np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0]))
    coords = coords[order]
    pts = cloud.points[order]
    boundary = np.any(np.diff(coords, axis=0) != 0, axis=1)
    starts = np.concatenate([[0], np.nonzero(boundary)[0] + 1])
    sums = np.add.reduceat(pts, starts, axis=0)
    counts = np.diff(np.concatenate([starts, [len(pts)]]))
    return PointCloud(sums / counts[:, None])


def sample_points(
    cloud: PointCloud, fraction: float, max_count: int, rng: SeededRng
) -> np.ndarray:
    """Draw distinct points uniformly without replacement.

    Sample size is min(ceil(fraction * |cloud|), max_count, |cloud|).
    Returns an (k, 3) array of the sampled points.
    """
    if len(cloud) == 0:
        raise ValueError("cannot sample from empty scene")
    if not (0.0 < fraction <= 1.0):
        raise ValueError("sample fraction must be in (0, 1]")
    if max_count < 1:
        raise ValueError("sample cap must be positive")
    n = len(cloud)
    k = min(math.ceil(fraction * n), max_count, n)
    chosen = rng.generator.choice(n, size=k, replace=False)
    return cloud.points[chosen]


@dataclass(frozen=True)
class AxisAlignedBounds:
    """Closed axis-aligned region given by min/max corners."""

    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.minimum, dtype=np.float64)
        hi = np.asarray(self.maximum, dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,):
            raise ValueError("bounds corners must be 3-vectors")
        if np.any(lo > hi):
            raise ValueError("inverted region: min exceeds max")
        lo, hi = lo.copy(), hi.copy()
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "minimum", lo)
        object.__setattr__(self, "maximum", hi)

    def contains_mask(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return np.all((p >= self.minimum) & (p <= self.maximum), axis=-1)


def crop_to_workspace(cloud: PointCloud, region: AxisAlignedBounds) -> PointCloud:
    """Points inside the closed region, input order preserved."""
    if len(cloud) == 0:
        return PointCloud.empty()
    return PointCloud(cloud.points[region.contains_mask(cloud.points)])
