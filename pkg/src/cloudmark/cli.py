"""Command-line interface: capture, find, eval, serve.

Exit codes: 0 on success (including searches that find nothing, which is a
valid answer downstream automation relies on), 1 for data or I/O errors,
2 for usage errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .evaluation import (
    report_to_dict,
    report_to_table,
    run_benchmark,
    suite_from_file,
)
from .geometry import OrientedBox, PointCloud, RigidTransform
from .io import (
    load_landmark,
    load_params,
    match_to_dict,
    params_to_dict,
    read_point_cloud_file,
    save_landmark,
)
from .search import SearchParams, capture_landmark, find_landmark
from .suite import default_suite

__all__ = ["main"]


class DataError(Exception):
    """User-facing failure: message printed to stderr, exit code 1."""


def _parse_box(text: str) -> OrientedBox:
    parts = [p for p in text.split(",") if p.strip() != ""]
    if len(parts) not in (6, 10):
        raise DataError(
            "--box needs cx,cy,cz,sx,sy,sz with an optional qw,qx,qy,qz orientation"
        )
    try:
        values = [float(p) for p in parts]
    except ValueError as exc:
        raise DataError(f"--box has a non-numeric component: {exc}") from exc
    center, size = values[0:3], values[3:6]
    quat = values[6:10] if len(values) == 10 else [1.0, 0.0, 0.0, 0.0]
    try:
        return OrientedBox(
            RigidTransform(np.array(quat), np.array(center)), np.array(size)
        )
    except ValueError as exc:
        raise DataError(str(exc)) from exc


def _load_scene(path: str) -> PointCloud:
    try:
        loaded = read_point_cloud_file(path)
    except OSError as exc:
        raise DataError(f"cannot read scene {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"cannot parse scene {path}: {exc}") from exc
    if loaded.dropped_count:
        print(
            f"dropped {loaded.dropped_count} no-return points from {path}",
            file=sys.stderr,
        )
    return loaded.cloud


def _load_search_params(path: str | None, seed: int | None) -> SearchParams:
    if path is None:
        params = SearchParams()
    else:
        try:
            params = load_params(Path(path).read_bytes())
        except OSError as exc:
            raise DataError(f"cannot read params {path}: {exc}") from exc
        except ValueError as exc:
            raise DataError(f"bad params file {path}: {exc}") from exc
    if seed is not None:
        params = replace(params, seed=seed)
    return params


def _emit(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _cmd_capture(args) -> int:
    scene = _load_scene(args.scene)
    box = _parse_box(args.box)
    try:
        landmark = capture_landmark(
            scene,
            box,
            args.name,
            scene_id=args.scene,
            created_at=datetime.now(timezone.utc).isoformat(),
        )
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    Path(args.out).write_bytes(save_landmark(landmark))
    print(f"captured {len(landmark.cloud)} points into {args.out}", file=sys.stderr)
    return 0


def _find_report(scene_path: str, landmark_paths: list, params: SearchParams) -> dict:
    scene = _load_scene(scene_path)
    results = []
    for landmark_path in landmark_paths:
        try:
            landmark = load_landmark(Path(landmark_path).read_bytes())
        except OSError as exc:
            raise DataError(f"cannot read landmark {landmark_path}: {exc}") from exc
        except ValueError as exc:
            raise DataError(f"bad landmark file {landmark_path}: {exc}") from exc
        try:
            matches = find_landmark(scene, landmark, params)
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        results.append(
            {"landmark": landmark.name, "matches": [match_to_dict(m) for m in matches]}
        )
    return {"scene": scene_path, "params": params_to_dict(params), "results": results}


def _format_find_table(report: dict) -> str:
    lines = []
    for entry in report["results"]:
        matches = entry["matches"]
        lines.append(f"{entry['landmark']}: {len(matches)} match(es)")
        for m in matches:
            t = m["transform"]["translation"]
            lines.append(
                f"  #{m['rank']}  error={m['error']:.6f}  "
                f"at=({t[0]:.4f}, {t[1]:.4f}, {t[2]:.4f})"
            )
    return "\n".join(lines) + "\n"


def _cmd_find(args) -> int:
    params = _load_search_params(args.params, args.seed)
    report = _find_report(args.scene, args.landmark, params)
    if args.format == "json":
        _emit(json.dumps(report, indent=2) + "\n", args.out)
    else:
        _emit(_format_find_table(report), args.out)
    return 0


def _cmd_eval(args) -> int:
    params = _load_search_params(args.params, args.seed)
    if args.suite is None:
        suite = default_suite()
    else:
        try:
            suite = suite_from_file(args.suite)
        except OSError as exc:
            raise DataError(f"cannot read suite {args.suite}: {exc}") from exc
        except ValueError as exc:
            raise DataError(f"bad suite file {args.suite}: {exc}") from exc
    result = run_benchmark(suite, params)
    table = report_to_table(result.report)
    if args.out is not None:
        Path(args.out).write_text(
            json.dumps(report_to_dict(result.report), indent=2) + "\n",
            encoding="utf-8",
        )
    sys.stdout.write(table)
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .server import ServeState, create_app

    scene = _load_scene(args.scene)
    state = ServeState(scene, landmark_dir=Path(args.landmark_dir))
    app = create_app(state, ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cloudmark",
        description="Capture point-cloud landmarks and localize them in new scenes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    capture = sub.add_parser("capture", help="crop a scene to a box and save a landmark")
    capture.add_argument("--scene", required=True, help="scene cloud (.pcd or .ply)")
    capture.add_argument(
        "--box", required=True, help="cx,cy,cz,sx,sy,sz[,qw,qx,qy,qz] in meters"
    )
    capture.add_argument("--name", required=True)
    capture.add_argument("--out", required=True, help="landmark JSON output path")
    capture.set_defaults(func=_cmd_capture)

    find = sub.add_parser("find", help="search a scene for saved landmarks")
    find.add_argument("--scene", required=True)
    find.add_argument(
        "--landmark", required=True, action="append", help="repeatable landmark path"
    )
    find.add_argument("--params", default=None, help="params JSON (defaults if omitted)")
    find.add_argument("--seed", type=int, default=None)
    find.add_argument("--out", default=None, help="output path ('-' for stdout)")
    find.add_argument("--format", choices=("json", "table"), default="json")
    find.set_defaults(func=_cmd_find)

    evaluate = sub.add_parser("eval", help="run the synthetic benchmark suite")
    evaluate.add_argument(
        "--suite", default=None, help="suite JSON (built-in suite if omitted)"
    )
    evaluate.add_argument("--params", default=None)
    evaluate.add_argument("--seed", type=int, default=None)
    evaluate.add_argument("--out", default=None, help="report JSON output path")
    evaluate.set_defaults(func=_cmd_eval)

    serve = sub.add_parser("serve", help="serve the capture/search HTTP API")
    serve.add_argument("--scene", required=True)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8765)
    serve.add_argument("--landmark-dir", default="landmarks")
    serve.add_argument("--ui-dir", default=None, help="static frontend directory")
    serve.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
