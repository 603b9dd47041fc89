"""JSONL artifact helpers: canonical encoding and provenance headers.

Every data file starts with one ``{"_header": {...}}`` line carrying the
tool version, a digest of the producing config and the seed. Nothing
time-dependent goes into a header, so identical configs give identical bytes.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from typing import Any, Iterable, Optional

from . import __version__
from .errors import SchemaError
from .scene import Pose, Trajectory

HEADER_KEY = "_header"


def _to_jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_to_jsonable(obj), sort_keys=True, separators=(",", ":"))


def config_digest(config) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()[:16]


def make_header(kind: str, seed: Optional[int], config: Any, **extra) -> dict:
    head = {"kind": kind, "tool": "s3forge", "version": __version__,
            "seed": seed, "config": _to_jsonable(config), "config_digest": config_digest(config)}
    head.update(extra)
    return head


def dump_jsonl(rows: Iterable[Any], header: Optional[dict] = None) -> bytes:
    lines = []
    if header is not None:
        lines.append(canonical_json({HEADER_KEY: header}))
    lines.extend(canonical_json(r) for r in rows)
    return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""


def load_jsonl(data: bytes | str) -> tuple[Optional[dict], list[dict]]:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    header = None
    rows = []
    for n, line in enumerate(data.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"line {n}: invalid JSON: {exc}") from exc
        if isinstance(obj, dict) and HEADER_KEY in obj:
            header = obj[HEADER_KEY]
            continue
        rows.append(obj)
    return header, rows


# --------------------------------------------------------------------------
# trajectories


def trajectory_to_jsonl(traj: Trajectory, header: Optional[dict] = None) -> bytes:
    head = dict(header or {})
    head.update({"trajectory_id": traj.id, "scene_id": traj.scene_id, "fps": traj.fps,
                 "keypoint_marks": list(traj.keypoint_marks)})
    rows = ({"t": p.t, "x": p.x, "y": p.y, "z": p.z, "yaw": p.yaw, "label": lab}
            for p, lab in zip(traj.poses, traj.labels))
    return dump_jsonl(rows, head)


def trajectory_from_jsonl(data: bytes | str) -> Trajectory:
    header, rows = load_jsonl(data)
    if header is None:
        raise SchemaError("trajectory file lacks a header line")
    poses, labels = [], []
    for i, r in enumerate(rows):
        try:
            poses.append(Pose(float(r["x"]), float(r["y"]), float(r["z"]), float(r["yaw"]), float(r["t"])))
            labels.append(str(r["label"]))
        except KeyError as exc:
            raise SchemaError(f"pose {i}: missing field {exc}") from exc
    try:
        return Trajectory(id=header["trajectory_id"], scene_id=header["scene_id"], fps=int(header["fps"]),
                          poses=poses, labels=labels, keypoint_marks=list(header.get("keypoint_marks", [])))
    except KeyError as exc:
        raise SchemaError(f"trajectory header missing {exc}") from exc
