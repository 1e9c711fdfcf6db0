"""HTTP/JSON service backing the browser capture interface.

The loaded scene is immutable for the lifetime of the server; landmark
saves are serialized behind a lock and persisted to the landmark
directory, so concurrent searches read consistent snapshots.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import replace
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .geometry import OrientedBox, PointCloud, RigidTransform, crop_to_box
from .io import load_landmark, load_params, match_to_dict, save_landmark
from .search import Landmark, capture_landmark, find_landmark
from .spatial import voxel_downsample

__all__ = ["ServeState", "create_app"]

DEFAULT_LEAF = 0.005


class ApiError(Exception):
    def __init__(self, status: int, message: str) -> None:
        super().__init__(message)
        self.status = status
        self.message = message


class BoxSpec(BaseModel):
    center: list[float]
    size: list[float]
    orientation: list[float] | None = None

    def to_box(self) -> OrientedBox:
        if len(self.center) != 3 or len(self.size) != 3:
            raise ApiError(400, "box center and size must be 3-vectors")
        quat = self.orientation if self.orientation is not None else [1.0, 0.0, 0.0, 0.0]
        if len(quat) != 4:
            raise ApiError(400, "box orientation must be a quaternion [w, x, y, z]")
        try:
            return OrientedBox(
                RigidTransform(np.array(quat), np.array(self.center)),
                np.array(self.size),
            )
        except ValueError as exc:
            raise ApiError(400, str(exc)) from exc


class CaptureRequest(BaseModel):
    name: str
    box: BoxSpec


class SearchRequest(BaseModel):
    landmark_name: str
    seed: int | None = None
    params: dict | None = None


class ServeState:
    """Scene snapshot plus the landmark store and recent search results."""

    def __init__(self, scene: PointCloud, landmark_dir: Path) -> None:
        self.scene = scene
        self.landmark_dir = Path(landmark_dir)
        self.landmark_dir.mkdir(parents=True, exist_ok=True)
        self.landmarks: dict[str, Landmark] = {}
        self.results: dict[str, list] = {}
        self._write_lock = threading.Lock()
        self._downsample_cache: dict[float, PointCloud] = {}
        for path in sorted(self.landmark_dir.glob("*.landmark.json")):
            landmark = load_landmark(path.read_bytes())
            self.landmarks[landmark.name] = landmark

    def downsampled(self, leaf: float) -> PointCloud:
        cached = self._downsample_cache.get(leaf)
        if cached is None:
            cached = voxel_downsample(self.scene, leaf)
            self._downsample_cache[leaf] = cached
        return cached

    def save(self, landmark: Landmark) -> None:
        with self._write_lock:
            if landmark.name in self.landmarks:
                raise ApiError(400, f"landmark {landmark.name!r} already exists")
            path = self.landmark_dir / f"{landmark.name}.landmark.json"
            path.write_bytes(save_landmark(landmark))
            self.landmarks[landmark.name] = landmark


def _landmark_summary(landmark: Landmark) -> dict:
    return {
        "name": landmark.name,
        "num_points": len(landmark.cloud),
        "box": {
            "center": landmark.box.pose.translation.tolist(),
            "size": landmark.box.size.tolist(),
            "orientation": landmark.box.pose.quaternion.tolist(),
        },
    }


def _parse_box_query(text: str) -> OrientedBox:
    parts = [p for p in text.split(",") if p.strip() != ""]
    if len(parts) not in (6, 10):
        raise ApiError(400, "box query needs cx,cy,cz,sx,sy,sz[,qw,qx,qy,qz]")
    try:
        values = [float(p) for p in parts]
    except ValueError as exc:
        raise ApiError(400, f"box query has a non-numeric component: {exc}") from exc
    quat = values[6:10] if len(values) == 10 else [1.0, 0.0, 0.0, 0.0]
    try:
        return OrientedBox(
            RigidTransform(np.array(quat), np.array(values[0:3])), np.array(values[3:6])
        )
    except ValueError as exc:
        raise ApiError(400, str(exc)) from exc


def create_app(state: ServeState, ui_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="cloudmark", docs_url=None, redoc_url=None)

    @app.exception_handler(ApiError)
    async def _api_error(_req: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content={"error": exc.message})

    @app.exception_handler(RequestValidationError)
    async def _validation_error(_req: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": str(exc.errors())})

    @app.exception_handler(Exception)
    async def _internal_error(_req: Request, exc: Exception):
        return JSONResponse(status_code=500, content={"error": str(exc)})

    @app.get("/api/scene")
    def get_scene(leaf: float = DEFAULT_LEAF):
        if not leaf > 0:
            raise ApiError(400, "non-positive leaf size")
        cloud = state.downsampled(leaf)
        return {
            "count": len(cloud),
            "leaf": leaf,
            "points": cloud.points.round(5).tolist(),
        }

    @app.get("/api/landmarks")
    def list_landmarks():
        return {
            "landmarks": [
                _landmark_summary(state.landmarks[name])
                for name in sorted(state.landmarks)
            ]
        }

    @app.post("/api/landmarks")
    def create_landmark(request: CaptureRequest):
        if not request.name or any(c in request.name for c in "/\\"):
            raise ApiError(400, "landmark name must be a plain non-empty string")
        box = request.box.to_box()
        try:
            landmark = capture_landmark(
                state.scene, box, request.name, scene_id="served-scene"
            )
        except ValueError as exc:
            raise ApiError(400, str(exc)) from exc
        state.save(landmark)
        return _landmark_summary(landmark)

    @app.get("/api/landmarks/{name}/preview")
    def preview(name: str, box: str):
        oriented = _parse_box_query(box)
        patch = crop_to_box(state.scene, oriented)
        return {
            "name": name,
            "count": len(patch),
            "points": patch.points.round(5).tolist(),
        }

    @app.post("/api/search")
    def search(request: SearchRequest):
        landmark = state.landmarks.get(request.landmark_name)
        if landmark is None:
            raise ApiError(404, f"unknown landmark {request.landmark_name!r}")
        try:
            params = load_params(json.dumps(request.params or {}).encode("utf-8"))
        except ValueError as exc:
            raise ApiError(400, str(exc)) from exc
        if request.seed is not None:
            params = replace(params, seed=request.seed)
        try:
            matches = find_landmark(state.scene, landmark, params)
        except ValueError as exc:
            raise ApiError(400, str(exc)) from exc
        request_id = str(uuid.uuid4())
        state.results[request_id] = matches
        return {
            "request_id": request_id,
            "landmark": landmark.name,
            "matches": [match_to_dict(m) for m in matches],
        }

    if ui_dir is not None:
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
