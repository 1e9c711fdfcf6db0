"""Precision/recall evaluation of landmark detections against ground truth.

Three scoring assumptions are supported:
  all_pairs     every landmark is searched in every scene and all resulting
                detections are scored
  in_context    only detections for declared scene/landmark context pairs
                are scored (mirrors knowing what to look for where)
  one_instance  as in_context, but a scene's demand for a landmark type is
                satisfied by any single true positive; surplus correct
                detections are not penalized

A detection is a true positive when an unconsumed ground-truth instance of
the same landmark lies within the match radius of the detection's
transformed-cloud centroid; assignment is greedy by ascending error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import RigidTransform, centroid
from .io import (
    SchemaError,
    load_landmark,
    save_landmark,
    transform_from_dict,
    transform_to_dict,
)
from .search import Landmark, SearchParams, find_landmark
from .synth import GroundTruthInstance, Placement, SceneSpec, generate_scene

__all__ = [
    "MODES",
    "Tally",
    "ModeReport",
    "EvalReport",
    "CapturedLandmark",
    "BenchmarkScene",
    "BenchmarkSuite",
    "BenchmarkResult",
    "evaluate",
    "run_benchmark",
    "report_to_dict",
    "report_to_table",
    "suite_to_files",
    "suite_from_file",
]

MODES = ("all_pairs", "in_context", "one_instance")

DEFAULT_MATCH_RADIUS = 0.03


@dataclass
class Tally:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def add(self, other: "Tally") -> None:
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn


@dataclass(frozen=True)
class ModeReport:
    precision: float
    recall: float
    per_scene: dict

    @staticmethod
    def from_tallies(per_scene: dict) -> "ModeReport":
        total = Tally()
        for tally in per_scene.values():
            total.add(tally)
        # empty-set conventions: no detections -> precision 1, no truth -> recall 1
        precision = total.tp / (total.tp + total.fp) if (total.tp + total.fp) else 1.0
        recall = total.tp / (total.tp + total.fn) if (total.tp + total.fn) else 1.0
        return ModeReport(precision, recall, per_scene)


@dataclass(frozen=True)
class EvalReport:
    modes: dict  # mode name -> ModeReport


@dataclass(frozen=True)
class CapturedLandmark:
    """A landmark plus the world pose its canonical instance had at capture.

    The canonical pose lets ground-truth placement poses be converted into
    capture-frame-to-scene transforms, which is what detections report.
    """

    landmark: Landmark
    canonical_pose: RigidTransform

    @property
    def name(self) -> str:
        return self.landmark.name


@dataclass(frozen=True)
class BenchmarkScene:
    scene_id: str
    spec: SceneSpec
    context: tuple  # landmark names expected in this scene
    seed: int = 0


@dataclass(frozen=True)
class BenchmarkSuite:
    landmarks: tuple  # CapturedLandmark
    scenes: tuple  # BenchmarkScene
    match_radius: float = DEFAULT_MATCH_RADIUS


@dataclass(frozen=True)
class BenchmarkResult:
    report: EvalReport
    detections: dict  # (scene_id, landmark name) -> list of Match
    truth: dict  # scene_id -> list of GroundTruthInstance
    scene_clouds: dict  # scene_id -> PointCloud


def _truth_centroid(
    instance: GroundTruthInstance, captured: CapturedLandmark
) -> np.ndarray:
    to_scene = instance.pose.compose(captured.canonical_pose.inverse())
    return to_scene.apply(centroid(captured.landmark.cloud))


def _sorted_detections(matches: list) -> list:
    return sorted(
        matches,
        key=lambda m: (m.error, m.centroid[0], m.centroid[1], m.centroid[2]),
    )


def _assign_pair(
    matches: list, truth_centroids: list, match_radius: float
) -> tuple[int, int, int]:
    """Greedy one-to-one matching; returns (tp, fp, unmatched_truth)."""
    consumed = [False] * len(truth_centroids)
    tp = fp = 0
    for match in _sorted_detections(matches):
        best = None
        best_dist = match_radius
        for i, c in enumerate(truth_centroids):
            if consumed[i]:
                continue
            dist = float(np.linalg.norm(match.centroid - c))
            if dist <= best_dist:
                best, best_dist = i, dist
        if best is None:
            fp += 1
        else:
            consumed[best] = True
            tp += 1
    return tp, fp, consumed.count(False)


def evaluate(
    detections: dict,
    truth: dict,
    landmarks: dict,
    mode: str,
    match_radius: float = DEFAULT_MATCH_RADIUS,
    context: dict | None = None,
) -> ModeReport:
    """Score detections against ground truth under one assumption mode.

    detections maps (scene_id, landmark_name) to Match lists; truth maps
    scene_id to GroundTruthInstance lists; landmarks maps landmark name to
    CapturedLandmark. `context` (scene_id -> iterable of landmark names) is
    required for the in_context and one_instance modes.
    """
    if mode not in MODES:
        raise ValueError(f"unknown evaluation mode {mode!r}")
    if mode != "all_pairs" and context is None:
        raise ValueError(f"mode {mode!r} requires a context table")
    for scene_id, name in detections:
        if scene_id not in truth:
            raise ValueError(f"detections reference unknown scene {scene_id!r}")
        if name not in landmarks:
            raise ValueError(f"detections reference unknown landmark {name!r}")

    def in_scope(scene_id: str, name: str) -> bool:
        if mode == "all_pairs":
            return True
        return name in context.get(scene_id, ())

    per_scene = {scene_id: Tally() for scene_id in truth}
    pairs = set(detections)
    for scene_id, instances in truth.items():
        for inst in instances:
            if inst.landmark_name not in landmarks:
                raise ValueError(
                    f"ground truth references unknown landmark {inst.landmark_name!r}"
                )
            pairs.add((scene_id, inst.landmark_name))

    for scene_id, name in sorted(pairs):
        if not in_scope(scene_id, name):
            continue
        matches = detections.get((scene_id, name), [])
        captured = landmarks[name]
        centroids = [
            _truth_centroid(inst, captured)
            for inst in truth[scene_id]
            if inst.landmark_name == name
        ]
        tp, fp, missed = _assign_pair(matches, centroids, match_radius)
        tally = per_scene[scene_id]
        if mode == "one_instance":
            demand = 1 if centroids else 0
            satisfied = 1 if tp > 0 else 0
            tally.tp += satisfied
            tally.fp += fp
            tally.fn += demand - satisfied
        else:
            tally.tp += tp
            tally.fp += fp
            tally.fn += missed
    return ModeReport.from_tallies(per_scene)


def run_benchmark(suite: BenchmarkSuite, params: SearchParams) -> BenchmarkResult:
    """Generate every scene, search every (scene, landmark) pair, and score
    the detections under all three assumption modes."""
    landmarks = {c.name: c for c in suite.landmarks}
    if len(landmarks) != len(suite.landmarks):
        raise ValueError("duplicate landmark names in suite")

    truth = {}
    scene_clouds = {}
    detections = {}
    context = {}
    for scene in suite.scenes:
        cloud, instances = generate_scene(scene.spec, scene.seed, scene.scene_id)
        truth[scene.scene_id] = instances
        scene_clouds[scene.scene_id] = cloud
        context[scene.scene_id] = tuple(scene.context)
        for name, captured in sorted(landmarks.items()):
            detections[(scene.scene_id, name)] = find_landmark(
                cloud, captured.landmark, params
            )

    modes = {
        mode: evaluate(
            detections, truth, landmarks, mode, suite.match_radius, context
        )
        for mode in MODES
    }
    return BenchmarkResult(
        report=EvalReport(modes=modes),
        detections=detections,
        truth=truth,
        scene_clouds=scene_clouds,
    )


def report_to_dict(report: EvalReport) -> dict:
    return {
        mode: {
            "precision": mode_report.precision,
            "recall": mode_report.recall,
            "per_scene": {
                scene_id: {"tp": t.tp, "fp": t.fp, "fn": t.fn}
                for scene_id, t in sorted(mode_report.per_scene.items())
            },
        }
        for mode, mode_report in report.modes.items()
    }


def suite_to_files(suite: BenchmarkSuite, directory) -> str:
    """Write a suite as a JSON description plus one landmark file per entry.

    Returns the path of the suite JSON. The layout round-trips through
    suite_from_file, which is what the eval command consumes.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    landmark_entries = []
    for captured in suite.landmarks:
        filename = f"{captured.name}.landmark.json"
        (directory / filename).write_bytes(save_landmark(captured.landmark))
        landmark_entries.append(
            {
                "name": captured.name,
                "file": filename,
                "canonical_pose": transform_to_dict(captured.canonical_pose),
            }
        )
    scene_entries = []
    for scene in suite.scenes:
        placements = []
        for p in scene.spec.placements:
            placements.append(
                {
                    "kind": p.kind,
                    "pose": transform_to_dict(p.pose),
                    "dimensions": list(p.dimensions),
                    "density": p.density,
                    "noise_sigma": p.noise_sigma,
                    "cull": p.cull,
                    "instance_of": p.instance_of,
                }
            )
        scene_entries.append(
            {
                "scene_id": scene.scene_id,
                "seed": scene.seed,
                "context": list(scene.context),
                "viewpoint": list(scene.spec.viewpoint),
                "placements": placements,
            }
        )
    doc = {
        "match_radius": suite.match_radius,
        "landmarks": landmark_entries,
        "scenes": scene_entries,
    }
    path = directory / "suite.json"
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return str(path)


def suite_from_file(path) -> BenchmarkSuite:
    """Load a suite JSON; landmark files resolve relative to the suite file."""
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise SchemaError("suite: expected a JSON object")
    base = path.parent

    landmarks = []
    for i, entry in enumerate(doc.get("landmarks", [])):
        where = f"suite.landmarks[{i}]"
        if not isinstance(entry, dict) or "file" not in entry:
            raise SchemaError(f"{where}: expected an object with a 'file' key")
        landmark = load_landmark((base / entry["file"]).read_bytes())
        pose = transform_from_dict(
            entry.get("canonical_pose", {}), f"{where}.canonical_pose"
        )
        landmarks.append(CapturedLandmark(landmark, pose))

    scenes = []
    for i, entry in enumerate(doc.get("scenes", [])):
        where = f"suite.scenes[{i}]"
        if not isinstance(entry, dict) or "scene_id" not in entry:
            raise SchemaError(f"{where}: expected an object with a 'scene_id' key")
        placements = []
        for j, p in enumerate(entry.get("placements", [])):
            pwhere = f"{where}.placements[{j}]"
            try:
                placements.append(
                    Placement(
                        kind=p["kind"],
                        pose=transform_from_dict(p.get("pose", {}), f"{pwhere}.pose"),
                        dimensions=tuple(p["dimensions"]),
                        density=float(p["density"]),
                        noise_sigma=float(p.get("noise_sigma", 0.0)),
                        cull=bool(p.get("cull", True)),
                        instance_of=p.get("instance_of"),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"{pwhere}: {exc}") from exc
        spec_kwargs = {"placements": tuple(placements)}
        if "viewpoint" in entry:
            spec_kwargs["viewpoint"] = tuple(entry["viewpoint"])
        scenes.append(
            BenchmarkScene(
                scene_id=entry["scene_id"],
                spec=SceneSpec(**spec_kwargs),
                context=tuple(entry.get("context", [])),
                seed=int(entry.get("seed", 0)),
            )
        )

    return BenchmarkSuite(
        landmarks=tuple(landmarks),
        scenes=tuple(scenes),
        match_radius=float(doc.get("match_radius", DEFAULT_MATCH_RADIUS)),
    )


_MODE_LABELS = {
    "all_pairs": "All landmarks searched in all scenes",
    "in_context": "Landmarks and scenes in context",
    "one_instance": "Only find one instance of landmark",
}


def report_to_table(report: EvalReport) -> str:
    """Aligned-column text rendering of the per-assumption scores."""
    rows = [("Assumption", "Precision", "Recall")]
    for mode in MODES:
        mode_report = report.modes[mode]
        rows.append(
            (
                _MODE_LABELS[mode],
                f"{100.0 * mode_report.precision:.2f}%",
                f"{100.0 * mode_report.recall:.2f}%",
            )
        )
    widths = [max(len(row[i]) for row in rows) for i in range(3)]
    lines = []
    for i, row in enumerate(rows):
        lines.append(
            "  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)).rstrip()
        )
        if i == 0:
            lines.append("-" * (sum(widths) + 4))
    return "\n".join(lines) + "\n"
