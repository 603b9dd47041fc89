"""Timestamped QA generation over a scene, its trajectory and visibility table.

Every object a question mentions must have been seen strictly before the
question timestamp. "Seen before t" means its first visible frame is lower
than the frame index of t.
"""
from __future__ import annotations

import itertools
import logging
import math
import random
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np

from .artifacts import dump_jsonl, load_jsonl, make_header
from .errors import AuditError, InsufficientDuration, SchemaError
from .nav import rasterize
from .scene import (CATEGORY_TEMPLATES, IDLE, MOVING, SWEEPING, Scene, SceneObject, Trajectory, locate_room,
                    points_in_polygon, polygon_area, wrap_angle)
from .seeds import py_rng
from .visibility import VisibilityTable

log = logging.getLogger(__name__)

NUM, MC = "NUM", "MC"

TASK_FORMATS = {
    "camera_displacement": NUM,
    "current_room_area": NUM,
    "cam_obj_distance": NUM,
    "identification_closest": MC,
    "camera_motion_target": MC,
    "attribute": NUM,
    "spatial_distance": NUM,
    "area": NUM,
    "count": NUM,
    "sequence": MC,
    "spatial_proximity": MC,
    "relative_orientation": MC,
    "sequence_identification": MC,
    "tem_spatial_distance_ref": NUM,
    "tem_cam_obj_distance_ref": NUM,
    "tem_horizontal_direction": MC,
}
TASKS = tuple(TASK_FORMATS)

CHRONOLOGICAL, SPATIAL_SUPERLATIVE, CAMERA_MOTION = "CHRONOLOGICAL", "SPATIAL_SUPERLATIVE", "CAMERA_MOTION"
# chain kind -> (turn-1 task, turn-2 task)
CHAIN_TASKS = {
    CHRONOLOGICAL: ("sequence_identification", "tem_horizontal_direction"),
    SPATIAL_SUPERLATIVE: ("identification_closest", "tem_spatial_distance_ref"),
    CAMERA_MOTION: ("camera_motion_target", "tem_cam_obj_distance_ref"),
}
ORIENTATIONS = ("Left", "Right", "Back")
DIRECTIONS = ("Front-Left", "Front-Right", "Back-Left", "Back-Right")
LETTERS = "ABCDEFGH"


def display_name(category: str) -> str:
    return category.replace("_", " ")


def horizontal_direction(beta_rad: float) -> str:
    """Quadrant of a relative bearing; boundaries belong to the class listed first counter-clockwise."""
    b = math.degrees(wrap_angle(beta_rad))
    if b <= -180.0:
        b += 360.0
    if 0.0 < b <= 90.0:
        return "Front-Left"
    if 90.0 < b <= 180.0:
        return "Back-Left"
    if -90.0 < b <= 0.0:
        return "Front-Right"
    return "Back-Right"


def relative_orientation(a, b, c, back_angle_deg: float = 135.0) -> Optional[str]:
    """Where C lies for an observer at A facing B (xy only); None when degenerate."""
    fx, fy = b[0] - a[0], b[1] - a[1]
    cx, cy = c[0] - a[0], c[1] - a[1]
    nf, nc = math.hypot(fx, fy), math.hypot(cx, cy)
    if nf < 1e-9 or nc < 1e-9:
        return None
    cosang = max(-1.0, min(1.0, (fx * cx + fy * cy) / (nf * nc)))
    if math.degrees(math.acos(cosang)) > back_angle_deg:
        return "Back"
    cross = (fx / nf) * cy - (fy / nf) * cx
    if abs(cross) < 1e-9:
        return None
    return "Left" if cross > 0 else "Right"


@dataclass(frozen=True)
class GenConfig:
    area_visit_threshold: float = 0.3
    back_angle_deg: float = 135.0
    displacement_windows_s: tuple[int, ...] = (1, 2, 3)
    n_choices: int = 4
    chain_advance_s: float = 5.0
    min_displacement_m: float = 0.2
    d_visit: float = 2.0
    quota: int = 2
    quotas: Optional[dict] = None
    seed: int = 0
    n_timestamps: int = 96
    min_timestamp_s: float = 5.0
    moving_speed: float = 0.1
    closest_margin: float = 0.3
    motion_window_s: float = 3.0
    motion_min_drop: float = 0.3
    motion_margin: float = 0.2
    proximity_margin: float = 0.3
    min_pair_distance: float = 0.1
    visit_cell_size: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.area_visit_threshold <= 1.0:
            raise ValueError("area_visit_threshold must lie in (0, 1]")
        if not 90.0 <= self.back_angle_deg < 180.0:
            raise ValueError("back_angle_deg must lie in [90, 180)")
        if not self.displacement_windows_s or any(not 1 <= w <= 3 for w in self.displacement_windows_s):
            raise ValueError("displacement windows must lie in [1, 3] s")
        if self.n_choices < 2:
            raise ValueError("n_choices must be >= 2")
        if self.quota < 0:
            raise ValueError("quota must be >= 0")
        for task in (self.quotas or {}):
            if task not in TASK_FORMATS:
                raise ValueError(f"unknown task {task!r} in quotas")

    def quota_for(self, task: str) -> int:
        if self.quotas and task in self.quotas:
            return int(self.quotas[task])
        return self.quota


@dataclass
class QAPair:
    id: str
    scene_id: str
    trajectory_id: str
    timestamp_s: float
    task: str
    format: str
    question: str
    answer: float | int
    unit: str = ""
    choices: list[str] = field(default_factory=list)
    refs: list[str] = field(default_factory=list)
    chain_id: Optional[str] = None
    turn_idx: int = 0
    gen_seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def answer_text(self) -> str:
        if self.format == MC:
            return self.choices[int(self.answer)]
        return f"{self.answer:g}"

    @property
    def entities(self) -> list[str]:
        return list(self.meta.get("entities", []))

    def to_dict(self) -> dict:
        return asdict(self)


def qa_from_dict(d: dict) -> QAPair:
    try:
        return QAPair(**d)
    except TypeError as exc:
        raise SchemaError(f"bad QA record: {exc}") from exc


class QAContext:
    """Scene, trajectory and table plus the derived lookups the generators share."""

    def __init__(self, scene: Scene, trajectory: Trajectory, table: VisibilityTable, config: GenConfig,
                 rng: Optional[random.Random] = None):
        self.scene = scene
        self.trajectory = trajectory
        self.table = table
        self.config = config
        self.rng = rng or py_rng(config.seed, "qa", scene.id, trajectory.id)
        self.objects = sorted(scene.objects, key=lambda o: o.id)
        self.by_id = {o.id: o for o in self.objects}
        self.positions = trajectory.positions()
        self.fps = trajectory.fps

    def frame(self, t: float) -> int:
        return min(int(round(t * self.fps)), len(self.trajectory.poses) - 1)

    def time(self, frame: int) -> float:
        return frame / self.fps

    def seen(self, frame: int) -> list[SceneObject]:
        out = []
        for o in self.objects:
            fa = self.table.first_appearance(o.id)
            if fa is not None and fa < frame:
                out.append(o)
        return out

    def unique_seen(self, frame: int) -> list[SceneObject]:
        seen = self.seen(frame)
        counts = {}
        for o in seen:
            counts[o.category] = counts.get(o.category, 0) + 1
        return [o for o in seen if counts[o.category] == 1]

    def visible_unique(self, frame: int) -> list[SceneObject]:
        return [o for o in self.unique_seen(frame) if self.table.is_visible(frame, o.id)]

    def cam_dist(self, frame: int, obj: SceneObject) -> float:
        return float(np.linalg.norm(self.positions[frame] - np.asarray(obj.box.center)))

    def speed(self, frame: int) -> float:
        if frame == 0:
            return 0.0
        return float(np.linalg.norm(self.positions[frame] - self.positions[frame - 1])) * self.fps

    @cached_property
    def vocabulary(self) -> list[str]:
        return sorted(set(CATEGORY_TEMPLATES) | {o.category for o in self.objects})

    @cached_property
    def visit_cells(self):
        """(room index per free cell, first frame each cell came within d_visit of the camera)."""
        grid = rasterize(self.scene, self.config.visit_cell_size, 0.0)
        centers = grid.cell_centers().reshape(-1, 2)
        free = ~grid.blocked.ravel()
        centers = centers[free]
        room_of = np.full(len(centers), -1)
        rooms = sorted(self.scene.rooms, key=lambda r: r.id)
        for k, room in enumerate(rooms):
            inside = points_in_polygon(centers, room.polygon) & (room_of < 0)
            room_of[inside] = k
        first = np.full(len(centers), np.iinfo(np.int64).max, dtype=np.int64)
        xy = self.positions[:, :2]
        keep = np.ones(len(xy), dtype=bool)
        keep[1:] = np.any(xy[1:] != xy[:-1], axis=1)
        frames = np.flatnonzero(keep)
        d2 = self.config.d_visit ** 2
        for chunk in np.array_split(frames, max(1, len(frames) // 256)):
            diff = centers[None, :, :] - xy[chunk][:, None, :]
            near = (diff ** 2).sum(axis=2) <= d2
            hit = near.any(axis=0)
            if hit.any():
                idx = np.argmax(near, axis=0)
                first = np.where(hit, np.minimum(first, chunk[idx]), first)
        return rooms, room_of, first


# --------------------------------------------------------------------------
# helpers


def _mc(ctx: QAContext, correct: str, distractors: Sequence[str]) -> tuple[list[str], int]:
    """Insert the correct choice at a uniformly drawn position."""
    choices = list(distractors)
    ctx.rng.shuffle(choices)
    pos = ctx.rng.randrange(len(choices) + 1)
    choices.insert(pos, correct)
    return choices, pos


def _pair(ctx: QAContext, frame: int, task: str, question: str, answer, unit: str = "", choices=None,
          refs=None, meta=None) -> QAPair:
    meta = dict(meta or {})
    meta.setdefault("frame", frame)
    return QAPair(id="", scene_id=ctx.scene.id, trajectory_id=ctx.trajectory.id, timestamp_s=ctx.time(frame),
                  task=task, format=TASK_FORMATS[task], question=question, answer=answer, unit=unit,
                  choices=list(choices or []), refs=list(refs or []), gen_seed=ctx.config.seed, meta=meta)


def _the(o: SceneObject) -> str:
    return display_name(o.category)


# --------------------------------------------------------------------------
# timestamps


def sample_timestamps(ctx: QAContext, n: int) -> list[float]:
    """Frame-aligned times in [min_timestamp_s, duration], spread over segment labels."""
    traj = ctx.trajectory
    if traj.duration <= ctx.config.min_timestamp_s:
        raise InsufficientDuration(f"trajectory lasts {traj.duration:.2f} s")
    lo = int(math.ceil(ctx.config.min_timestamp_s * ctx.fps - 1e-9))
    pools = {lab: [] for lab in (MOVING, SWEEPING, IDLE)}
    for f in range(lo, len(traj.poses)):
        pools.setdefault(traj.labels[f], []).append(f)
    labels = [lab for lab, pool in pools.items() if pool]
    rng = py_rng(ctx.config.seed, "timestamps", ctx.scene.id, traj.id)
    chosen = set()
    total = sum(len(p) for p in pools.values())
    k = 0
    while len(chosen) < min(n, total):
        pool = pools[labels[k % len(labels)]]
        k += 1
        avail = [f for f in pool if f not in chosen]
        if not avail:
            avail = [f for lab in labels for f in pools[lab] if f not in chosen]
        chosen.add(avail[rng.randrange(len(avail))])
    return [f / ctx.fps for f in sorted(chosen)]


# --------------------------------------------------------------------------
# single-turn generators


def gen_count(ctx: QAContext, t: float) -> Optional[QAPair]:
    f = ctx.frame(t)
    seen = ctx.seen(f)
    if not seen:
        return None
    groups: dict[str, list[str]] = {}
    for o in seen:
        groups.setdefault(o.category, []).append(o.id)
    multi = sorted(c for c, ids in groups.items() if len(ids) > 1)
    cat = ctx.rng.choice(multi or sorted(groups))
    name = display_name(cat)
    return _pair(ctx, f, "count", f"How many {name}s are visible so far?", len(groups[cat]), "count",
                 refs=groups[cat], meta={"category": cat, "entities": [name]})


def gen_attribute(ctx: QAContext, t: float) -> Optional[QAPair]:
    f = ctx.frame(t)
    cand = ctx.unique_seen(f)
    if not cand:
        return None
    o = ctx.rng.choice(cand)
    return _pair(ctx, f, "attribute", f"What is the length of the {_the(o)}'s longest edge?",
                 2.0 * max(o.box.half_extents), "m", refs=[o.id], meta={"entities": [_the(o)]})


def gen_sequence(ctx: QAContext, t: float, identification: bool = False) -> Optional[QAPair]:
    f = ctx.frame(t)
    cand = ctx.unique_seen(f)
    fa = {o.id: ctx.table.first_appearance(o.id) for o in cand}
    counts = {}
    for v in fa.values():
        counts[v] = counts.get(v, 0) + 1
    cand = [o for o in cand if counts[fa[o.id]] == 1]
    if len(cand) < 3:
        return None
    trio = ctx.rng.sample(cand, 3)
    order = sorted(trio, key=lambda o: fa[o.id])
    names = [_the(o) for o in trio]
    if identification:
        choices = [_the(o) for o in trio]
        ctx.rng.shuffle(choices)
        answer = choices.index(_the(order[0]))
        q = "Which of the following objects appeared first? " + ", ".join(choices[:-1]) + f" or {choices[-1]}?"
        return _pair(ctx, f, "sequence_identification", q, answer, choices=choices, refs=[o.id for o in trio],
                     meta={"entities": names, "target": order[0].id})
    correct = tuple(o.id for o in order)
    others = [p for p in itertools.permutations(correct) if p != correct]
    chosen = ctx.rng.sample(others, min(ctx.config.n_choices - 1, len(others)))
    text = {p: " -> ".join(display_name(ctx.by_id[i].category) for i in p) for p in [correct] + chosen}
    choices, answer = _mc(ctx, text[correct], [text[p] for p in chosen])
    inv = {v: list(k) for k, v in text.items()}
    listed = ", ".join(names)
    return _pair(ctx, f, "sequence", f"Identify the correct chronological order of the {listed}.", answer,
                 choices=choices, refs=[o.id for o in trio],
                 meta={"entities": names, "choice_orders": [inv[c] for c in choices]})


def gen_spatial_distance(ctx: QAContext, t: float) -> Optional[QAPair]:
    f = ctx.frame(t)
    cand = ctx.unique_seen(f)
    pairs = []
    for a, b in itertools.combinations(cand, 2):
        if a.room_id != b.room_id:
            continue
        d = math.dist(a.box.center, b.box.center)
        if d >= ctx.config.min_pair_distance:
            pairs.append((a, b, d))
    if not pairs:
        return None
    a, b, d = ctx.rng.choice(pairs)
    if ctx.rng.random() < 0.5:
        a, b = b, a
    return _pair(ctx, f, "spatial_distance", f"What is the distance between the {_the(a)} and the {_the(b)}?",
                 d, "m", refs=[a.id, b.id], meta={"entities": [_the(a), _the(b)]})


def visit_ratios(ctx: QAContext, frame: int) -> dict[str, float]:
    rooms, room_of, first = ctx.visit_cells
    out = {}
    for k, room in enumerate(rooms):
        mine = room_of == k
        n = int(mine.sum())
        if n:
            out[room.id] = float((first[mine] < frame).sum()) / n
    return out


def gen_area_visited(ctx: QAContext, t: float) -> Optional[QAPair]:
    f = ctx.frame(t)
    steps = np.linalg.norm(np.diff(ctx.positions[:f], axis=0), axis=1) if f > 1 else np.zeros(0)
    if steps.sum() < ctx.config.min_displacement_m:
        return None
    ratios = visit_ratios(ctx, f)
    visited = sorted(r for r, v in ratios.items() if v >= ctx.config.area_visit_threshold)
    if not visited:
        return None
    total = sum(polygon_area(ctx.scene.room(r).polygon) for r in visited)
    return _pair(ctx, f, "area", "What is the total area of the rooms visited so far?", total, "m2",
                 meta={"visited_rooms": visited})


def gen_spatial_proximity(ctx: QAContext, t: float) -> Optional[QAPair]:
    f = ctx.frame(t)
    seen = ctx.seen(f)
    anchors = ctx.unique_seen(f)
    if len(seen) < 2 or not anchors:
        return None
    anchor = ctx.rng.choice(anchors)
    others = [o for o in seen if o.id != anchor.id]
    dist = {o.id: math.dist(o.box.center, anchor.box.center) for o in others}
    best = min(others, key=lambda o: (dist[o.id], o.id))
    d_best = dist[best.id]
    nearest_by_cat = {}
    for o in others:
        nearest_by_cat[o.category] = min(nearest_by_cat.get(o.category, math.inf), dist[o.id])
    pool = [c for c in ctx.vocabulary if c not in (best.category, anchor.category)
            and nearest_by_cat.get(c, math.inf) > d_best + ctx.config.proximity_margin]
    k = ctx.config.n_choices - 1
    if len(pool) < k:
        return None
    distractors = [display_name(c) for c in ctx.rng.sample(pool, k)]
    choices, answer = _mc(ctx, display_name(best.category), distractors)
    return _pair(ctx, f, "spatial_proximity",
                 f"Which object category is spatially closest to the {_the(anchor)}?", answer, choices=choices,
                 refs=[anchor.id, best.id], meta={"entities": [_the(anchor)], "anchor": anchor.id})


def gen_relative_orientation(ctx: QAContext, t: float) -> Optional[QAPair]:
    f = ctx.frame(t)
    cand = ctx.unique_seen(f)
    by_room: dict[str, list[SceneObject]] = {}
    for o in cand:
        by_room.setdefault(o.room_id, []).append(o)
    triples = [p for room in sorted(by_room) for p in itertools.permutations(by_room[room], 3)]
    if not triples:
        return None
    ctx.rng.shuffle(triples)
    for a, b, c in triples[:64]:
        label = relative_orientation(a.box.center, b.box.center, c.box.center, ctx.config.back_angle_deg)
        if label is None:
            continue
        choices = list(ORIENTATIONS)
        ctx.rng.shuffle(choices)
        q = (f"If you stand at the {_the(a)} facing the {_the(b)}, in which direction is the {_the(c)} located?")
        return _pair(ctx, f, "relative_orientation", q, choices.index(label), choices=choices,
                     refs=[a.id, b.id, c.id], meta={"entities": [_the(a), _the(b), _the(c)]})
    return None


def gen_camera_displacement(ctx: QAContext, t: float) -> Optional[QAPair]:
    f = ctx.frame(t)
    if ctx.trajectory.labels[f] != MOVING or ctx.speed(f) <= ctx.config.moving_speed:
        return None
    w = ctx.rng.choice(list(ctx.config.displacement_windows_s))
    f0 = f - int(round(w * ctx.fps))
    if f0 < 0:
        return None
    d = float(np.linalg.norm(ctx.positions[f] - ctx.positions[f0]))
    if d < ctx.config.min_displacement_m:
        return None
    return _pair(ctx, f, "camera_displacement", f"How far did the camera move from the past {w} seconds?", d, "m",
                 meta={"window_s": w})


def gen_cam_obj_distance(ctx: QAContext, t: float) -> Optional[QAPair]:
    f = ctx.frame(t)
    if ctx.trajectory.labels[f] not in (MOVING, SWEEPING):
        return None
    cand = ctx.visible_unique(f)
    if not cand:
        return None
    o = ctx.rng.choice(cand)
    return _pair(ctx, f, "cam_obj_distance", f"What is the distance between the camera and the {_the(o)}?",
                 ctx.cam_dist(f, o), "m", refs=[o.id], meta={"entities": [_the(o)]})


def gen_identification_closest(ctx: QAContext, t: float, attempts: int = 4) -> Optional[QAPair]:
    f = ctx.frame(t)
    cand = ctx.visible_unique(f)
    if len(cand) < 2:
        return None
    for _ in range(attempts):
        k = ctx.rng.randint(2, min(4, len(cand)))
        picks = ctx.rng.sample(cand, k)
        d = sorted((ctx.cam_dist(f, o), o.id) for o in picks)
        if d[1][0] - d[0][0] < ctx.config.closest_margin:
            continue
        choices = [_the(o) for o in picks]
        best = ctx.by_id[d[0][1]]
        return _pair(ctx, f, "identification_closest", "Which object is currently spatially closest to the camera?",
                     choices.index(_the(best)), choices=choices, refs=[o.id for o in picks],
                     meta={"entities": [], "target": best.id, "choice_ids": [o.id for o in picks]})
    return None


def gen_current_room_area(ctx: QAContext, t: float) -> Optional[QAPair]:
    f = ctx.frame(t)
    rid = locate_room(ctx.scene, tuple(ctx.positions[f, :2]))
    if rid is None:
        return None
    return _pair(ctx, f, "current_room_area", "What is the total area of the current room?",
                 polygon_area(ctx.scene.room(rid).polygon), "m2", meta={"room_id": rid})


def gen_camera_motion_target(ctx: QAContext, t: float) -> Optional[QAPair]:
    f = ctx.frame(t)
    f0 = f - int(round(ctx.config.motion_window_s * ctx.fps))
    if f0 < 0:
        return None
    cand = [o for o in ctx.visible_unique(f) if ctx.table.is_visible(f0, o.id)]
    if len(cand) < 2:
        return None
    delta = {o.id: ctx.cam_dist(f, o) - ctx.cam_dist(f0, o) for o in cand}
    ranked = sorted(cand, key=lambda o: (delta[o.id], o.id))
    best, runner = ranked[0], ranked[1]
    if delta[best.id] >= -ctx.config.motion_min_drop or delta[runner.id] - delta[best.id] < ctx.config.motion_margin:
        return None
    rest = ctx.rng.sample(ranked[1:], min(ctx.config.n_choices - 1, len(ranked) - 1))
    choices, answer = _mc(ctx, _the(best), [_the(o) for o in rest])
    ids = {(_the(o)): o.id for o in [best] + rest}
    return _pair(ctx, f, "camera_motion_target", "Which object did the camera approach the most?", answer,
                 choices=choices, refs=[best.id] + [o.id for o in rest],
                 meta={"entities": [], "target": best.id, "choice_ids": [ids[c] for c in choices],
                       "window_s": ctx.config.motion_window_s})


SINGLE_TURN = {
    "camera_displacement": gen_camera_displacement,
    "current_room_area": gen_current_room_area,
    "cam_obj_distance": gen_cam_obj_distance,
    "identification_closest": gen_identification_closest,
    "camera_motion_target": gen_camera_motion_target,
    "attribute": gen_attribute,
    "spatial_distance": gen_spatial_distance,
    "area": gen_area_visited,
    "count": gen_count,
    "sequence": lambda ctx, t: gen_sequence(ctx, t, False),
    "spatial_proximity": gen_spatial_proximity,
    "relative_orientation": gen_relative_orientation,
    "sequence_identification": lambda ctx, t: gen_sequence(ctx, t, True),
}


# --------------------------------------------------------------------------
# two-turn chains


def gen_chain(ctx: QAContext, t: float, kind: str) -> Optional[list[QAPair]]:
    t1_task, t2_task = CHAIN_TASKS[kind]
    q1 = SINGLE_TURN[t1_task](ctx, t)
    if q1 is None:
        return None
    f = q1.meta["frame"]
    f2 = f + int(round(ctx.config.chain_advance_s * ctx.fps))
    if f2 >= len(ctx.trajectory.poses):
        return None
    target = ctx.by_id[q1.meta["target"]]
    cam = ctx.positions[f2]
    if kind == CHRONOLOGICAL:
        az = math.atan2(target.box.center[1] - cam[1], target.box.center[0] - cam[0])
        label = horizontal_direction(az - ctx.trajectory.poses[f2].yaw)
        choices = list(DIRECTIONS)
        ctx.rng.shuffle(choices)
        q2 = _pair(ctx, f2, t2_task,
                   "Is that object located to the Front-Left, Front-Right, Back-Left or Back-Right?",
                   choices.index(label), choices=choices, refs=[target.id], meta={"target": target.id})
    elif kind == SPATIAL_SUPERLATIVE:
        used = set(q1.refs)
        cand = [o for o in ctx.unique_seen(f2) if o.room_id == target.room_id and o.id != target.id
                and math.dist(o.box.center, target.box.center) >= ctx.config.min_pair_distance]
        fresh = [o for o in cand if o.id not in used]
        cand = fresh or cand
        if not cand:
            return None
        ref = ctx.rng.choice(cand)
        q2 = _pair(ctx, f2, t2_task, f"What is the distance from that object to the {_the(ref)}?",
                   math.dist(target.box.center, ref.box.center), "m", refs=[target.id, ref.id],
                   meta={"target": target.id, "reference": ref.id, "entities": [_the(ref)]})
    else:
        q2 = _pair(ctx, f2, t2_task, "How far (in meters) is the camera from it now?", ctx.cam_dist(f2, target),
                   "m", refs=[target.id], meta={"target": target.id})
    return [q1, q2]


# --------------------------------------------------------------------------
# full set


def audit(pairs: Sequence[QAPair], table: VisibilityTable, fps: int) -> None:
    """Raise AuditError on any grounding or answer-shape violation."""
    for p in pairs:
        frame = int(round(p.timestamp_s * fps))
        for ref in p.refs:
            fa = table.first_appearance(ref)
            if fa is None or fa >= frame:
                raise AuditError(f"{p.id}: {ref} first seen at {fa}, question at frame {frame}")
        if p.format == MC:
            if not isinstance(p.answer, int) or not 0 <= p.answer < len(p.choices):
                raise AuditError(f"{p.id}: MC answer {p.answer!r} outside choices")
        elif not math.isfinite(float(p.answer)):
            raise AuditError(f"{p.id}: non-finite answer")


def generate_all(ctx: QAContext, quotas: Optional[dict] = None) -> list[QAPair]:
    """Fill per-task quotas over sampled timestamps; chains are drawn first."""
    quota = {task: (quotas or {}).get(task, ctx.config.quota_for(task)) for task in TASKS}
    if all(q == 0 for q in quota.values()):
        return []
    try:
        times = sample_timestamps(ctx, ctx.config.n_timestamps)
    except InsufficientDuration:
        log.warning("trajectory %s too short for questions", ctx.trajectory.id)
        return []
    count = {task: 0 for task in TASKS}
    seen_keys = set()
    out: list[QAPair] = []

    def key(p):
        return (p.task, tuple(p.refs), p.timestamp_s)

    n_chain = 0
    for kind in (CHRONOLOGICAL, SPATIAL_SUPERLATIVE, CAMERA_MOTION):
        t1_task, t2_task = CHAIN_TASKS[kind]
        order = list(times)
        ctx.rng.shuffle(order)
        for t in order:
            if count[t2_task] >= quota[t2_task] or count[t1_task] >= quota[t1_task]:
                break
            chain = gen_chain(ctx, t, kind)
            if chain is None or any(key(p) in seen_keys for p in chain):
                continue
            cid = f"{ctx.trajectory.id}-c{n_chain:03d}"
            n_chain += 1
            for turn, p in enumerate(chain, 1):
                p.chain_id, p.turn_idx = cid, turn
                seen_keys.add(key(p))
                count[p.task] += 1
                out.append(p)
    for task, gen in SINGLE_TURN.items():
        order = list(times)
        ctx.rng.shuffle(order)
        for t in order:
            if count[task] >= quota[task]:
                break
            p = gen(ctx, t)
            if p is None or key(p) in seen_keys:
                continue
            seen_keys.add(key(p))
            count[task] += 1
            out.append(p)
    out.sort(key=lambda p: (p.timestamp_s, p.turn_idx, p.task, p.refs))
    for i, p in enumerate(out):
        p.id = f"{ctx.trajectory.id}-q{i:04d}"
    audit(out, ctx.table, ctx.fps)
    return out


def qa_to_jsonl(pairs: Sequence[QAPair], config: GenConfig, extra: Optional[dict] = None) -> bytes:
    header = make_header("qa", config.seed, config, **(extra or {}))
    return dump_jsonl((p.to_dict() for p in pairs), header)


def qa_from_jsonl(data: bytes | str) -> tuple[dict, list[QAPair]]:
    header, rows = load_jsonl(data)
    return header or {}, [qa_from_dict(r) for r in rows]
