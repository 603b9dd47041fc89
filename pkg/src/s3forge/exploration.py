"""Egocentric action space, strict JSON action parsing, collision-aware execution
and synthesis of insufficient-observation episodes."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .artifacts import canonical_json, dump_jsonl, load_jsonl, make_header
from .errors import ParseError, RangeError, SchemaError
from .planner import obstacle_clearance
from .qa import QAPair, display_name, qa_from_dict
from .scene import CameraIntrinsics, Pose, Scene, Trajectory
from .seeds import py_rng
from .visibility import VisibilityModel, VisibilityTable, VisParams

MOVE_FORWARD, MOVE_LEFT, MOVE_RIGHT = "move_forward", "move_left", "move_right"
ROTATE_LEFT_45, ROTATE_RIGHT_45 = "rotate_left_45", "rotate_right_45"
SCAN_FORWARD_90, SWEEP_360 = "scan_forward_90", "sweep_360"
TRANSLATIONS = (MOVE_FORWARD, MOVE_LEFT, MOVE_RIGHT)
ROTATIONS = (ROTATE_LEFT_45, ROTATE_RIGHT_45, SCAN_FORWARD_90, SWEEP_360)
ACTION_KINDS = TRANSLATIONS + ROTATIONS
# in-place yaw phases per rotation action, degrees
_ROTATION_PHASES = {ROTATE_LEFT_45: (45.0,), ROTATE_RIGHT_45: (-45.0,), SCAN_FORWARD_90: (-45.0, 90.0),
                    SWEEP_360: (360.0,)}
_STRAFE = {MOVE_FORWARD: 0.0, MOVE_LEFT: math.pi / 2, MOVE_RIGHT: -math.pi / 2}
MAX_DISTANCE = 5.0


@dataclass(frozen=True)
class Action:
    kind: str
    distance_m: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ACTION_KINDS:
            raise SchemaError(f"unknown action {self.kind!r}")
        if self.kind in TRANSLATIONS:
            if self.distance_m is None:
                raise SchemaError(f"{self.kind} needs distance_m")
            if not (math.isfinite(self.distance_m) and 0.0 < self.distance_m <= MAX_DISTANCE):
                raise RangeError(f"distance_m {self.distance_m} outside (0, {MAX_DISTANCE}]")
        elif self.distance_m is not None:
            raise SchemaError(f"{self.kind} takes no distance_m")

    def to_dict(self) -> dict:
        d = {"action": self.kind}
        if self.distance_m is not None:
            d["distance_m"] = self.distance_m
        return d


def serialize_action(a: Action) -> str:
    return canonical_json(a.to_dict())


def parse_action(text: str) -> Action:
    """Strict parse of ``{"action": kind, "distance_m": number?}``."""
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, TypeError) as exc:
        raise ParseError(f"not JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("action must be a JSON object")
    extra = set(doc) - {"action", "distance_m"}
    if extra:
        raise SchemaError(f"unexpected fields {sorted(extra)}")
    if "action" not in doc:
        raise SchemaError("missing field 'action'")
    kind = doc["action"]
    if not isinstance(kind, str) or kind not in ACTION_KINDS:
        raise SchemaError(f"unknown action {kind!r}")
    dist = doc.get("distance_m")
    if "distance_m" in doc and (isinstance(dist, bool) or not isinstance(dist, (int, float))):
        raise SchemaError("distance_m must be a number")
    return Action(kind, None if dist is None else float(dist))


def try_parse_action(text: str) -> Optional[Action]:
    try:
        return parse_action(text)
    except (ParseError, SchemaError, RangeError):
        return None


@dataclass(frozen=True)
class ExploreConfig:
    fps: int = 24
    v_max: float = 1.0
    sweep_rate: float = 60.0
    clearance: float = 0.25
    eps: float = 0.05
    tau_occ: float = 0.05
    max_target_dist: float = 6.0
    distances: tuple[float, ...] = (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
    seed: int = 0
    frame_stride: int = 12
    min_start_s: float = 5.0
    max_episodes: int = 12
    max_attempts: int = 48
    march_step: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.tau_occ < 1.0:
            raise ValueError("tau_occ must lie in (0, 1)")
        if self.v_max <= 0 or self.sweep_rate <= 0 or self.fps < 1:
            raise ValueError("rates must be positive")


def action_space(config: ExploreConfig) -> list[Action]:
    """Fixed enumeration: rotations first, then each distance as forward/left/right."""
    acts = [Action(k) for k in ROTATIONS]
    for d in config.distances:
        acts.extend(Action(k, d) for k in TRANSLATIONS)
    return acts


def free_distance(scene: Scene, start: Sequence[float], heading: float, limit: float,
                  config: ExploreConfig) -> tuple[float, bool]:
    """Distance travelable along ``heading`` keeping exact clearance, and whether it was clamped."""
    ux, uy = math.cos(heading), math.sin(heading)
    n = int(math.ceil(limit / config.march_step))
    s = np.minimum(np.arange(1, n + 1) * config.march_step, limit)
    pts = np.column_stack([start[0] + s * ux, start[1] + s * uy])
    ok = obstacle_clearance(scene, pts) >= config.clearance
    if ok.all():
        return limit, False
    k = int(np.argmin(ok))
    lo = float(s[k - 1]) if k > 0 else 0.0
    hi = float(s[k])
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        p = np.array([[start[0] + mid * ux, start[1] + mid * uy]])
        if obstacle_clearance(scene, p)[0] >= config.clearance:
            lo = mid
        else:
            hi = mid
    return max(0.0, lo - config.eps), True


def execute(scene: Scene, grid, pose: Pose, action: Action, config: ExploreConfig) -> tuple[list[Pose], bool]:
    """Poses produced by ``action`` from ``pose`` (start pose excluded) and the clamp flag."""
    dt = 1.0 / config.fps
    out: list[Pose] = []
    if action.kind in TRANSLATIONS:
        heading = pose.yaw + _STRAFE[action.kind]
        dist, clamped = free_distance(scene, pose.xy, heading, action.distance_m, config)
        if dist <= 0.0:
            return [], True
        n = int(math.ceil(dist / config.v_max * config.fps - 1e-9))
        ux, uy = math.cos(heading), math.sin(heading)
        for k in range(1, n + 1):
            s = min(k * dt * config.v_max, dist)
            out.append(Pose(pose.x + s * ux, pose.y + s * uy, pose.z, pose.yaw, pose.t + k * dt))
        return out, clamped
    yaw = pose.yaw
    rate = math.radians(config.sweep_rate)
    k = 0
    for phase in _ROTATION_PHASES[action.kind]:
        delta = math.radians(phase)
        n = int(math.ceil(abs(delta) / rate * config.fps - 1e-9))
        sign = 1.0 if delta > 0 else -1.0
        for j in range(1, n + 1):
            k += 1
            out.append(Pose(pose.x, pose.y, pose.z, yaw + sign * min(j * dt * rate, abs(delta)), pose.t + k * dt))
        yaw += delta
    return out, False


@dataclass
class Episode:
    id: str
    qa: QAPair
    t_start: float
    pose: Pose
    gt_action: Action
    target_id: str
    tau: dict
    post_frames: list[Pose] = field(default_factory=list)
    clamped: bool = False

    def to_dict(self) -> dict:
        p = self.pose
        return {"id": self.id, "qa": self.qa.to_dict(), "t_start": self.t_start,
                "pose": {"x": p.x, "y": p.y, "z": p.z, "yaw": p.yaw, "t": p.t},
                "gt_action": self.gt_action.to_dict(), "target_id": self.target_id, "tau": dict(self.tau),
                "n_post_frames": len(self.post_frames), "clamped": self.clamped}


def episode_from_dict(d: dict) -> Episode:
    try:
        p = d["pose"]
        a = d["gt_action"]
        return Episode(id=d["id"], qa=qa_from_dict(d["qa"]), t_start=float(d["t_start"]),
                       pose=Pose(p["x"], p["y"], p["z"], p["yaw"], p["t"]),
                       gt_action=Action(a["action"], a.get("distance_m")), target_id=d["target_id"],
                       tau=dict(d["tau"]), clamped=bool(d.get("clamped", False)))
    except KeyError as exc:
        raise SchemaError(f"episode record missing {exc}") from exc


def _target_ok(model: VisibilityModel, i: int, poses: Sequence[Pose]) -> bool:
    p = model.params
    for pose in poses:
        frac, px = model.object_visibility(pose, i)
        if frac >= p.tau_vis and px >= p.min_px:
            return True
    return False


def recovering_action(scene: Scene, grid, pose: Pose, model: VisibilityModel, i: int, config: ExploreConfig,
                      actions: Optional[Sequence[Action]] = None):
    """First action in enumeration order after which object ``i`` is visible, as (action, poses, clamped)."""
    for act in actions if actions is not None else action_space(config):
        poses, clamped = execute(scene, grid, pose, act, config)
        if poses and _target_ok(model, i, poses):
            return act, poses, clamped
    return None


def synthesize_episodes(scene: Scene, trajectory: Trajectory, table: VisibilityTable, config: ExploreConfig,
                        intrinsics: Optional[CameraIntrinsics] = None, grid=None) -> list[Episode]:
    """Episodes where a seen, nearby target is (almost) invisible and one action recovers it."""
    intrinsics = intrinsics or CameraIntrinsics()
    params = table.params
    model = VisibilityModel(scene, intrinsics, params)
    rng = py_rng(config.seed, "episodes", scene.id, trajectory.id)
    objs = {o.id: o for o in scene.objects}
    fps = trajectory.fps
    actions = action_space(config)
    out: list[Episode] = []
    attempts = 0
    lo = int(math.ceil(config.min_start_s * fps))
    for f in range(lo, len(trajectory.poses), config.frame_stride):
        if len(out) >= config.max_episodes or attempts >= config.max_attempts:
            break
        pose = trajectory.poses[f]
        seen = [oid for oid in table.object_ids
                if table.first_appearance(oid) is not None and table.first_appearance(oid) < f]
        cats = {}
        for oid in seen:
            cats[objs[oid].category] = cats.get(objs[oid].category, 0) + 1
        cands = []
        for oid in seen:
            o = objs[oid]
            if cats[o.category] != 1 or table.record(f, oid)[0] >= config.tau_occ:
                continue
            if math.dist(pose.position, o.box.center) > config.max_target_dist:
                continue
            cands.append(oid)
        if not cands:
            continue
        oid = cands[rng.randrange(len(cands))]
        i = model.index_of(oid)
        attempts += 1
        found = recovering_action(scene, grid, pose, model, i, config, actions)
        if found is None:
            continue
        act, poses, clamped = found
        o = objs[oid]
        name = display_name(o.category)
        t = f / fps
        if rng.random() < 0.5:
            end = poses[-1]
            qa = QAPair(id="", scene_id=scene.id, trajectory_id=trajectory.id, timestamp_s=t,
                        task="cam_obj_distance", format="NUM",
                        question=f"What is the distance between the camera and the {name}?",
                        answer=float(math.dist(end.position, o.box.center)), unit="m", refs=[oid],
                        gen_seed=config.seed, meta={"frame": f, "entities": [name], "post_action": True})
        else:
            qa = QAPair(id="", scene_id=scene.id, trajectory_id=trajectory.id, timestamp_s=t, task="attribute",
                        format="NUM", question=f"What is the length of the {name}'s longest edge?",
                        answer=2.0 * max(o.box.half_extents), unit="m", refs=[oid], gen_seed=config.seed,
                        meta={"frame": f, "entities": [name], "post_action": True})
        eid = f"{trajectory.id}-e{len(out):03d}"
        qa.id = eid + "-qa"
        qa.meta["episode_id"] = eid
        out.append(Episode(eid, qa, t, pose, act, oid, {"occ": config.tau_occ, "vis": params.tau_vis},
                           poses, clamped))
    return out


def verify(episode: Episode, scene: Scene, grid, config: ExploreConfig,
           intrinsics: Optional[CameraIntrinsics] = None, params: Optional[VisParams] = None) -> bool:
    """Re-execute the ground-truth action and check both visibility thresholds."""
    intrinsics = intrinsics or CameraIntrinsics()
    params = params or VisParams(tau_vis=episode.tau["vis"])
    model = VisibilityModel(scene, intrinsics, params)
    i = model.index_of(episode.target_id)
    before, _ = model.object_visibility(episode.pose, i)
    if before >= episode.tau["occ"]:
        return False
    poses, _ = execute(scene, grid, episode.pose, episode.gt_action, config)
    return bool(poses) and _target_ok(model, i, poses)


def episodes_to_jsonl(episodes: Sequence[Episode], config: ExploreConfig, extra: Optional[dict] = None) -> bytes:
    return dump_jsonl((e.to_dict() for e in episodes), make_header("episodes", config.seed, config, **(extra or {})))


def episodes_from_jsonl(data: bytes | str) -> tuple[dict, list[Episode]]:
    header, rows = load_jsonl(data)
    return header or {}, [episode_from_dict(r) for r in rows]
