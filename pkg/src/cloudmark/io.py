"""Persistence: PCD and ASCII PLY point clouds, landmark JSON, params JSON.

Writers emit a canonical byte stream (fixed header order, LF endings,
shortest round-trip float text) so golden files stay stable, and every
loader validates the full set of type invariants before returning.
"""

from __future__ import annotations

import json
import math
from typing import NamedTuple

import numpy as np

from .geometry import OrientedBox, PointCloud, RigidTransform
from .registration import IcpParams
from .search import Landmark, SearchParams
from .spatial import AxisAlignedBounds

__all__ = [
    "ParseError",
    "SchemaError",
    "LoadedCloud",
    "LANDMARK_SCHEMA_VERSION",
    "read_point_cloud",
    "write_point_cloud",
    "save_landmark",
    "load_landmark",
    "load_params",
    "params_to_dict",
    "transform_to_dict",
    "transform_from_dict",
]

LANDMARK_SCHEMA_VERSION = 1


class ParseError(ValueError):
    """Malformed cloud file; message includes a byte offset when known."""


class SchemaError(ValueError):
    """A JSON document that parses but violates the schema; names the field."""


class LoadedCloud(NamedTuple):
    cloud: PointCloud
    dropped_count: int  # non-finite (sensor no-return) points removed


def _fail(message: str, offset: int | None = None):
    if offset is not None:
        raise ParseError(f"{message} (byte offset {offset})")
    raise ParseError(message)


# --- PCD ---------------------------------------------------------------

_PCD_HEADER_KEYS = (
    "VERSION",
    "FIELDS",
    "SIZE",
    "TYPE",
    "COUNT",
    "WIDTH",
    "HEIGHT",
    "VIEWPOINT",
    "POINTS",
    "DATA",
)


def _parse_pcd_header(data: bytes):
    header: dict[str, list[str]] = {}
    offset = 0
    while True:
        end = data.find(b"\n", offset)
        if end < 0:
            _fail("truncated PCD header", offset)
        line = data[offset:end].decode("ascii", errors="replace").strip()
        line_offset = offset
        offset = end + 1
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        key = parts[0].upper()
        if key not in _PCD_HEADER_KEYS:
            _fail(f"unexpected PCD header entry {parts[0]!r}", line_offset)
        header[key] = parts[1:]
        if key == "DATA":
            return header, offset


def _pcd_layout(header):
    fields = header.get("FIELDS")
    if not fields:
        _fail("PCD header missing FIELDS")
    n = len(fields)
    sizes = [int(v) for v in header.get("SIZE", [])]
    types = [v.upper() for v in header.get("TYPE", [])]
    counts = [int(v) for v in header.get("COUNT", ["1"] * n)]
    if not (len(sizes) == len(types) == len(counts) == n):
        _fail("PCD SIZE/TYPE/COUNT do not match FIELDS")
    try:
        points = int(header["POINTS"][0])
    except (KeyError, IndexError, ValueError):
        _fail("PCD header missing POINTS count")
    layout = {}
    token_index = 0
    byte_offset = 0
    for name, size, typ, count in zip(fields, sizes, types, counts):
        layout[name.lower()] = (token_index, byte_offset, size, typ, count)
        token_index += count
        byte_offset += size * count
    for axis in ("x", "y", "z"):
        if axis not in layout:
            _fail(f"PCD FIELDS lack {axis!r}")
        _, _, size, typ, count = layout[axis]
        if typ != "F" or size != 4 or count != 1:
            _fail(f"unsupported layout for field {axis!r}: need a single 4-byte float")
    stride = byte_offset
    tokens_per_point = token_index
    return layout, points, stride, tokens_per_point


def _read_pcd(data: bytes) -> LoadedCloud:
    header, body_offset = _parse_pcd_header(data)
    layout, n_points, stride, tokens_per_point = _pcd_layout(header)
    mode = header["DATA"][0].lower() if header["DATA"] else ""
    cols = [layout[axis][0] for axis in ("x", "y", "z")]

    if mode == "ascii":
        text = data[body_offset:].decode("ascii", errors="replace")
        rows = [ln for ln in text.split("\n") if ln.strip()]
        if len(rows) < n_points:
            _fail(f"expected {n_points} data rows, found {len(rows)}", body_offset)
        values = np.empty((n_points, 3), dtype=np.float64)
        for i in range(n_points):
            tokens = rows[i].split()
            if len(tokens) != tokens_per_point:
                _fail(f"row {i} has {len(tokens)} tokens, expected {tokens_per_point}")
            try:
                for j, col in enumerate(cols):
                    values[i, j] = float(tokens[col])
            except ValueError:
                _fail(f"row {i} has a non-numeric coordinate")
    elif mode == "binary":
        body = data[body_offset:]
        needed = n_points * stride
        if len(body) < needed:
            _fail(
                f"binary PCD body truncated: need {needed} bytes, have {len(body)}",
                body_offset + len(body),
            )
        raw = np.frombuffer(body[:needed], dtype=np.uint8).reshape(n_points, stride)
        values = np.empty((n_points, 3), dtype=np.float64)
        for j, axis in enumerate(("x", "y", "z")):
            _, off, _, _, _ = layout[axis]
            values[:, j] = raw[:, off : off + 4].copy().view("<f4")[:, 0]
    else:
        _fail(f"unsupported PCD DATA mode {mode!r}")

    finite = np.all(np.isfinite(values), axis=1)
    return LoadedCloud(PointCloud(values[finite]), int(np.sum(~finite)))


def _f32_text(value: float) -> str:
    return str(np.float32(value))


def _write_pcd(cloud: PointCloud, binary: bool) -> bytes:
    n = len(cloud)
    header = (
        "# .PCD v0.7 - Point Cloud Data file format\n"
        "VERSION 0.7\n"
        "FIELDS x y z\n"
        "SIZE 4 4 4\n"
        "TYPE F F F\n"
        "COUNT 1 1 1\n"
        f"WIDTH {n}\n"
        "HEIGHT 1\n"
        "VIEWPOINT 0 0 0 1 0 0 0\n"
        f"POINTS {n}\n"
        f"DATA {'binary' if binary else 'ascii'}\n"
    ).encode("ascii")
    as_f32 = cloud.points.astype("<f4")
    if binary:
        return header + as_f32.tobytes()
    rows = "".join(
        f"{_f32_text(p[0])} {_f32_text(p[1])} {_f32_text(p[2])}\n" for p in as_f32
    )
    return header + rows.encode("ascii")


# --- PLY (ASCII) --------------------------------------------------------


def _read_ply(data: bytes) -> LoadedCloud:
    text = data.decode("ascii", errors="replace")
    lines = text.split("\n")
    if not lines or lines[0].strip() != "ply":
        _fail("not a PLY file: missing 'ply' magic", 0)
    n_vertices = None
    properties: list[str] = []
    in_vertex_element = False
    body_start = None
    for i, line in enumerate(lines[1:], start=1):
        token = line.strip()
        if token.startswith("comment") or not token:
            continue
        if token.startswith("format"):
            if "ascii" not in token:
                _fail("only ASCII PLY is supported")
            continue
        if token.startswith("element"):
            parts = token.split()
            in_vertex_element = len(parts) == 3 and parts[1] == "vertex"
            if in_vertex_element:
                n_vertices = int(parts[2])
            continue
        if token.startswith("property"):
            if in_vertex_element:
                parts = token.split()
                properties.append(parts[-1])
            continue
        if token == "end_header":
            body_start = i + 1
            break
        _fail(f"unexpected PLY header line {token!r}")
    if body_start is None or n_vertices is None:
        _fail("PLY header missing vertex element or end_header")
    cols = {}
    for axis in ("x", "y", "z"):
        if axis not in properties:
            _fail(f"PLY vertex element lacks property {axis!r}")
        cols[axis] = properties.index(axis)

    rows = [ln for ln in lines[body_start:] if ln.strip()]
    if len(rows) < n_vertices:
        _fail(f"expected {n_vertices} vertex rows, found {len(rows)}")
    values = np.empty((n_vertices, 3), dtype=np.float64)
    for i in range(n_vertices):
        tokens = rows[i].split()
        if len(tokens) < len(properties):
            _fail(f"vertex row {i} has {len(tokens)} values, expected {len(properties)}")
        try:
            for j, axis in enumerate(("x", "y", "z")):
                values[i, j] = float(tokens[cols[axis]])
        except ValueError:
            _fail(f"vertex row {i} has a non-numeric coordinate")
    finite = np.all(np.isfinite(values), axis=1)
    return LoadedCloud(PointCloud(values[finite]), int(np.sum(~finite)))


def _write_ply(cloud: PointCloud) -> bytes:
    n = len(cloud)
    header = (
        "ply\n"
        "format ascii 1.0\n"
        f"element vertex {n}\n"
        "property double x\n"
        "property double y\n"
        "property double z\n"
        "end_header\n"
    )
    rows = "".join(
        f"{p[0]!r} {p[1]!r} {p[2]!r}\n".replace("'", "") for p in cloud.points.tolist()
    )
    return (header + rows).encode("ascii")


def read_point_cloud(data: bytes, fmt: str) -> LoadedCloud:
    """Parse PCD v0.7 (ASCII or binary) or ASCII PLY bytes.

    Extra fields are ignored; points with non-finite coordinates (the
    depth-sensor no-return convention) are dropped and counted.
    """
    fmt = fmt.lower()
    if fmt == "pcd":
        return _read_pcd(data)
    if fmt == "ply":
        return _read_ply(data)
    raise ValueError(f"unsupported cloud format {fmt!r} (use 'pcd' or 'ply')")


def write_point_cloud(cloud: PointCloud, fmt: str, binary: bool = False) -> bytes:
    """Serialize a cloud; PCD stores float32 x/y/z, PLY stores float64."""
    fmt = fmt.lower()
    if fmt == "pcd":
        return _write_pcd(cloud, binary)
    if fmt == "ply":
        if binary:
            raise ValueError("binary PLY is not supported")
        return _write_ply(cloud)
    raise ValueError(f"unsupported cloud format {fmt!r} (use 'pcd' or 'ply')")


def read_point_cloud_file(path) -> LoadedCloud:
    """Read a cloud from disk, inferring the format from the extension."""
    path = str(path)
    fmt = path.rsplit(".", 1)[-1].lower()
    with open(path, "rb") as fh:
        return read_point_cloud(fh.read(), fmt)


# --- landmark JSON --------------------------------------------------------


def _require(doc: dict, key: str, kind, where: str):
    if key not in doc:
        raise SchemaError(f"{where}.{key}: missing required field")
    value = doc[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"{where}.{key}: expected a number")
        return float(value)
    if not isinstance(value, kind):
        raise SchemaError(f"{where}.{key}: expected {kind.__name__}")
    return value


def _number_list(value, length: int, where: str) -> list[float]:
    if not isinstance(value, list) or len(value) != length:
        raise SchemaError(f"{where}: expected a list of {length} numbers")
    out = []
    for i, v in enumerate(value):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise SchemaError(f"{where}[{i}]: expected a number")
        out.append(float(v))
    return out


def save_landmark(landmark: Landmark) -> bytes:
    doc = {
        "schema_version": LANDMARK_SCHEMA_VERSION,
        "name": landmark.name,
        "box": {
            "center": landmark.box.pose.translation.tolist(),
            "size": landmark.box.size.tolist(),
            "orientation": landmark.box.pose.quaternion.tolist(),
        },
        "points": landmark.cloud.points.tolist(),
        "capture_metadata": {
            "scene_id": landmark.scene_id,
            "created_at": landmark.created_at,
        },
    }
    return (json.dumps(doc, indent=2) + "\n").encode("utf-8")


def load_landmark(data: bytes) -> Landmark:
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"landmark file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("landmark: expected a JSON object")

    version = _require(doc, "schema_version", int, "landmark")
    if version != LANDMARK_SCHEMA_VERSION:
        raise SchemaError(f"landmark.schema_version: unsupported version {version}")
    name = _require(doc, "name", str, "landmark")
    box_doc = _require(doc, "box", dict, "landmark")
    center = _number_list(box_doc.get("center"), 3, "landmark.box.center")
    size = _number_list(box_doc.get("size"), 3, "landmark.box.size")
    orientation = _number_list(box_doc.get("orientation"), 4, "landmark.box.orientation")
    if any(s <= 0 for s in size):
        raise SchemaError("landmark.box.size: box extent must be positive")
    norm = math.sqrt(sum(v * v for v in orientation))
    if abs(norm - 1.0) > 1e-6:
        raise SchemaError("landmark.box.orientation: quaternion is not unit length")

    points_doc = doc.get("points")
    if not isinstance(points_doc, list) or not points_doc:
        raise SchemaError("landmark.points: expected a non-empty list")
    points = np.array(
        [_number_list(p, 3, f"landmark.points[{i}]") for i, p in enumerate(points_doc)]
    )

    meta = _require(doc, "capture_metadata", dict, "landmark")
    scene_id = _require(meta, "scene_id", str, "landmark.capture_metadata")
    created_at = _require(meta, "created_at", str, "landmark.capture_metadata")

    box = OrientedBox(
        RigidTransform(np.array(orientation), np.array(center)), np.array(size)
    )
    outside = ~box.contains_mask(points)
    if np.any(outside):
        first = int(np.nonzero(outside)[0][0])
        raise SchemaError(f"landmark.points[{first}]: point outside the box")
    return Landmark(
        cloud=PointCloud(points),
        box=box,
        name=name,
        scene_id=scene_id,
        created_at=created_at,
    )


# --- params JSON ----------------------------------------------------------

_PARAM_KEYS = {
    "workspace",
    "voxel_leaf",
    "sample_fraction",
    "sample_max",
    "nms_radius",
    "error_threshold",
    "icp",
    "seed",
}
_ICP_KEYS = {
    "max_iterations",
    "correspondence_max_distance",
    "translation_epsilon",
    "rotation_epsilon",
    "mse_relative_epsilon",
}


def _check_keys(doc: dict, allowed: set, where: str):
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise SchemaError(f"{where}: unknown key {unknown[0]!r}")


def _positive(doc: dict, key: str, default, where: str) -> float:
    if key not in doc:
        return default
    value = _require(doc, key, float, where)
    if not (value > 0) or not math.isfinite(value):
        raise SchemaError(f"{where}.{key}: must be a positive finite number")
    return value


def load_params(data: bytes) -> SearchParams:
    """Parse a params document; absent keys take the built-in defaults."""
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"params file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("params: expected a JSON object")
    _check_keys(doc, _PARAM_KEYS, "params")

    defaults = SearchParams()
    workspace = defaults.workspace
    if "workspace" in doc:
        ws = _require(doc, "workspace", dict, "params")
        _check_keys(ws, {"min", "max"}, "params.workspace")
        lo = _number_list(ws.get("min"), 3, "params.workspace.min")
        hi = _number_list(ws.get("max"), 3, "params.workspace.max")
        if any(a > b for a, b in zip(lo, hi)):
            raise SchemaError("params.workspace: min exceeds max")
        workspace = AxisAlignedBounds(np.array(lo), np.array(hi))

    icp = defaults.icp
    if "icp" in doc:
        icp_doc = _require(doc, "icp", dict, "params")
        _check_keys(icp_doc, _ICP_KEYS, "params.icp")
        max_iterations = icp_doc.get("max_iterations", icp.max_iterations)
        if isinstance(max_iterations, bool) or not isinstance(max_iterations, int) or max_iterations < 1:
            raise SchemaError("params.icp.max_iterations: must be a positive integer")
        icp = IcpParams(
            max_iterations=max_iterations,
            correspondence_max_distance=_positive(
                icp_doc, "correspondence_max_distance", icp.correspondence_max_distance, "params.icp"
            ),
            translation_epsilon=_positive(
                icp_doc, "translation_epsilon", icp.translation_epsilon, "params.icp"
            ),
            rotation_epsilon=_positive(
                icp_doc, "rotation_epsilon", icp.rotation_epsilon, "params.icp"
            ),
            mse_relative_epsilon=_positive(
                icp_doc, "mse_relative_epsilon", icp.mse_relative_epsilon, "params.icp"
            ),
        )

    sample_fraction = defaults.sample_fraction
    if "sample_fraction" in doc:
        sample_fraction = _require(doc, "sample_fraction", float, "params")
        if not (0.0 < sample_fraction <= 1.0):
            raise SchemaError("params.sample_fraction: must be in (0, 1]")

    sample_max = defaults.sample_max
    if "sample_max" in doc:
        sample_max = doc["sample_max"]
        if isinstance(sample_max, bool) or not isinstance(sample_max, int) or sample_max < 1:
            raise SchemaError("params.sample_max: must be a positive integer")

    seed = defaults.seed
    if "seed" in doc:
        seed = doc["seed"]
        if isinstance(seed, bool) or not isinstance(seed, int):
            raise SchemaError("params.seed: must be an integer")

    return SearchParams(
        workspace=workspace,
        voxel_leaf=_positive(doc, "voxel_leaf", defaults.voxel_leaf, "params"),
        sample_fraction=sample_fraction,
        sample_max=sample_max,
        nms_radius=_positive(doc, "nms_radius", defaults.nms_radius, "params"),
        error_threshold=_positive(doc, "error_threshold", defaults.error_threshold, "params"),
        icp=icp,
        seed=seed,
    )


def transform_to_dict(transform: RigidTransform) -> dict:
    return {
        "rotation": transform.quaternion.tolist(),
        "translation": transform.translation.tolist(),
    }


def match_to_dict(match) -> dict:
    """JSON view of a search match, used by both the CLI and the server."""
    return {
        "rank": match.rank,
        "error": match.error,
        "transform": transform_to_dict(match.transform),
        "seed_point": match.seed_point.tolist(),
        "centroid": match.centroid.tolist(),
    }


def transform_from_dict(doc: dict, where: str = "pose") -> RigidTransform:
    if not isinstance(doc, dict):
        raise SchemaError(f"{where}: expected an object")
    _check_keys(doc, {"rotation", "translation"}, where)
    translation = _number_list(doc.get("translation", [0.0, 0.0, 0.0]), 3, f"{where}.translation")
    rotation = _number_list(doc.get("rotation", [1.0, 0.0, 0.0, 0.0]), 4, f"{where}.rotation")
    norm = math.sqrt(sum(v * v for v in rotation))
    if abs(norm - 1.0) > 1e-6:
        raise SchemaError(f"{where}.rotation: quaternion is not unit length")
    return RigidTransform(np.array(rotation), np.array(translation))


def params_to_dict(params: SearchParams) -> dict:
    """Plain-JSON view of params; load_params(json.dumps(...)) round-trips."""
    return {
        "workspace": {
            "min": params.workspace.minimum.tolist(),
            "max": params.workspace.maximum.tolist(),
        },
        "voxel_leaf": params.voxel_leaf,
        "sample_fraction": params.sample_fraction,
        "sample_max": params.sample_max,
        "nms_radius": params.nms_radius,
        "error_threshold": params.error_threshold,
        "icp": {
            "max_iterations": params.icp.max_iterations,
            "correspondence_max_distance": params.icp.correspondence_max_distance,
            "translation_epsilon": params.icp.translation_epsilon,
            "rotation_epsilon": params.icp.rotation_epsilon,
            "mse_relative_epsilon": params.icp.mse_relative_epsilon,
        },
        "seed": params.seed,
    }
