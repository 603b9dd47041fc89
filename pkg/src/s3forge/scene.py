"""Scene and trajectory data model, schema ingestion and toy-scene synthesis.

World frame is right-handed with z up; yaw is measured counter-clockwise
from +x. Lengths are meters, angles radians.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import CapacityError, GeometryError, SchemaError, UnknownReferenceError
from .seeds import py_rng

WALL_THICKNESS = 0.1
MOVING, SWEEPING, IDLE = "MOVING", "SWEEPING", "IDLE"
SEGMENT_LABELS = (MOVING, SWEEPING, IDLE)

Point2 = tuple[float, float]
Point3 = tuple[float, float, float]


def wrap_angle(a: float) -> float:
    """Wrap to [-pi, pi)."""
    return (a + math.pi) % (2.0 * math.pi) - math.pi


# --------------------------------------------------------------------------
# polygons


def signed_area(polygon: Sequence[Point2]) -> float:
    n = len(polygon)
    s = 0.0
    for i in range(n):
        x0, y0 = polygon[i]
        x1, y1 = polygon[(i + 1) % n]
        s += x0 * y1 - x1 * y0
    return 0.5 * s


def polygon_area(polygon: Sequence[Point2]) -> float:
    """Shoelace area; orientation-independent, so CW input gives the same value."""
    if len(polygon) < 3:
        raise GeometryError(f"polygon needs >= 3 vertices, got {len(polygon)}")
    return abs(signed_area(polygon))


def polygon_centroid(polygon: Sequence[Point2]) -> Point2:
    a = signed_area(polygon)
    n = len(polygon)
    if abs(a) < 1e-12:
        xs, ys = zip(*polygon)
        return (sum(xs) / n, sum(ys) / n)
    cx = cy = 0.0
    for i in range(n):
        x0, y0 = polygon[i]
        x1, y1 = polygon[(i + 1) % n]
        f = x0 * y1 - x1 * y0
        cx += (x0 + x1) * f
        cy += (y0 + y1) * f
    return (cx / (6.0 * a), cy / (6.0 * a))


def _orient(a, b, c) -> float:
    return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])


def _on_segment(a, b, p, eps=1e-9) -> bool:
    if abs(_orient(a, b, p)) > eps * max(1.0, math.dist(a, b)):
        return False
    return (min(a[0], b[0]) - eps <= p[0] <= max(a[0], b[0]) + eps
            and min(a[1], b[1]) - eps <= p[1] <= max(a[1], b[1]) + eps)


def segments_intersect(a, b, c, d) -> bool:
    o1, o2 = _orient(a, b, c), _orient(a, b, d)
    o3, o4 = _orient(c, d, a), _orient(c, d, b)
    if ((o1 > 0) != (o2 > 0)) and ((o3 > 0) != (o4 > 0)) and o1 != 0 and o2 != 0 and o3 != 0 and o4 != 0:
        return True
    return (_on_segment(a, b, c) or _on_segment(a, b, d)
            or _on_segment(c, d, a) or _on_segment(c, d, b))


def is_simple(polygon: Sequence[Point2]) -> bool:
    n = len(polygon)
    for i in range(n):
        a, b = polygon[i], polygon[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or j == (i + 1) % n:
                continue
            c, d = polygon[j], polygon[(j + 1) % n]
            if segments_intersect(a, b, c, d):
                return False
    return True


def point_in_polygon(p: Point2, polygon: Sequence[Point2], eps: float = 1e-9) -> bool:
    """Crossing-number test; points on the boundary count as inside."""
    n = len(polygon)
    inside = False
    px, py = p
    for i in range(n):
        a, b = polygon[i], polygon[(i + 1) % n]
        if _on_segment(a, b, p, eps):
            return True
        if (a[1] > py) != (b[1] > py):
            xc = a[0] + (py - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
            if px < xc:
                inside = not inside
    return inside


def points_in_polygon(pts: np.ndarray, polygon: Sequence[Point2], eps: float = 1e-9) -> np.ndarray:
    """Vectorized :func:`point_in_polygon` over an (N, 2) array."""
    pts = np.asarray(pts, dtype=float)
    px, py = pts[:, 0], pts[:, 1]
    poly = np.asarray(polygon, dtype=float)
    inside = np.zeros(len(pts), dtype=bool)
    boundary = np.zeros(len(pts), dtype=bool)
    for i in range(len(poly)):
        a, b = poly[i], poly[(i + 1) % len(poly)]
        e = b - a
        L2 = float(e @ e)
        t = np.clip(((px - a[0]) * e[0] + (py - a[1]) * e[1]) / L2, 0.0, 1.0)
        dx, dy = px - (a[0] + t * e[0]), py - (a[1] + t * e[1])
        boundary |= dx * dx + dy * dy <= eps * eps
        crosses = (a[1] > py) != (b[1] > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = a[0] + (py - a[1]) * e[0] / e[1]
        inside ^= crosses & (px < xc)
    return inside | boundary


# --------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class Room:
    id: str
    polygon: tuple[Point2, ...]
    ceiling_height: float
    name: str = ""

    @property
    def area(self) -> float:
        return polygon_area(self.polygon)


@dataclass(frozen=True)
class OrientedBox3:
    center: Point3
    half_extents: Point3
    yaw: float = 0.0

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
        local = signs * np.asarray(self.half_extents)
        return local @ self.rotation().T + np.asarray(self.center)

    def footprint(self) -> np.ndarray:
        """The four xy corners, counter-clockwise."""
        hx, hy = self.half_extents[0], self.half_extents[1]
        local = np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        R = np.array([[c, -s], [s, c]])
        return local @ R.T + np.asarray(self.center[:2])

    def distance_xy(self, p: Point2) -> float:
        """Distance from an xy point to the box footprint (0 inside)."""
        dx, dy = p[0] - self.center[0], p[1] - self.center[1]
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        lx, ly = c * dx + s * dy, -s * dx + c * dy
        ex = max(abs(lx) - self.half_extents[0], 0.0)
        ey = max(abs(ly) - self.half_extents[1], 0.0)
        return math.hypot(ex, ey)

    @property
    def max_edge(self) -> float:
        return 2.0 * max(self.half_extents)


@dataclass(frozen=True)
class SceneObject:
    id: str
    category: str
    box: OrientedBox3
    room_id: str


@dataclass(frozen=True)
class Scene:
    id: str
    rooms: tuple[Room, ...]
    objects: tuple[SceneObject, ...]
    extra_occluders: tuple[OrientedBox3, ...] = ()
    doors: tuple[tuple[Point2, Point2], ...] = ()
    walls: tuple[OrientedBox3, ...] = ()
    bounds: tuple[float, float, float, float, float, float] = (0, 0, 0, 0, 0, 0)

    @property
    def occluders(self) -> tuple[OrientedBox3, ...]:
        """Opaque volumes: derived walls followed by explicit occluders."""
        return self.walls + self.extra_occluders

    @property
    def obstacles(self) -> tuple[OrientedBox3, ...]:
        """Everything the camera must keep clear of: occluders plus object boxes."""
        return self.occluders + tuple(o.box for o in self.objects)

    def room(self, room_id: str) -> Room:
        for r in self.rooms:
            if r.id == room_id:
                return r
        raise UnknownReferenceError(room_id)

    def object(self, object_id: str) -> SceneObject:
        for o in self.objects:
            if o.id == object_id:
                return o
        raise UnknownReferenceError(object_id)


@dataclass(frozen=True)
class CameraIntrinsics:
    width_px: int = 768
    height_px: int = 768
    horizontal_fov: float = 90.0

    def __post_init__(self):
        if self.width_px <= 0 or self.height_px <= 0:
            raise GeometryError("image size must be positive")
        if not 10.0 < self.horizontal_fov < 170.0:
            raise GeometryError("horizontal_fov must lie in (10, 170) degrees")

    @property
    def focal_px(self) -> float:
        return 0.5 * self.width_px / math.tan(math.radians(self.horizontal_fov) / 2.0)

    @property
    def vertical_fov(self) -> float:
        return math.degrees(2.0 * math.atan(0.5 * self.height_px / self.focal_px))


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    z: float
    yaw: float
    t: float

    @property
    def xy(self) -> Point2:
        return (self.x, self.y)

    @property
    def position(self) -> Point3:
        return (self.x, self.y, self.z)


@dataclass
class Trajectory:
    id: str
    scene_id: str
    fps: int
    poses: list[Pose]
    labels: list[str]
    keypoint_marks: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def duration(self) -> float:
        return (len(self.poses) - 1) / self.fps

    def frame_at(self, t: float) -> int:
        return int(round(t * self.fps))

    def positions(self) -> np.ndarray:
        return np.array([p.position for p in self.poses], dtype=float)


# --------------------------------------------------------------------------
# walls, bounds, validation


def _subtract_intervals(length: float, cuts: list[tuple[float, float]]) -> list[tuple[float, float]]:
    pieces = [(0.0, length)]
    for lo, hi in sorted(cuts):
        nxt = []
        for a, b in pieces:
            if hi <= a or lo >= b:
                nxt.append((a, b))
                continue
            if lo > a:
                nxt.append((a, lo))
            if hi < b:
                nxt.append((hi, b))
        pieces = nxt
    return [(a, b) for a, b in pieces if b - a > 1e-6]


def derive_walls(rooms: Sequence[Room], doors: Sequence[tuple[Point2, Point2]]) -> tuple[OrientedBox3, ...]:
    """One thin box per polygon edge piece; door segments lying on an edge cut gaps.

    Edges shared by two rooms produce a single wall.
    """
    walls = []
    seen = set()
    for room in rooms:
        poly = room.polygon
        h = room.ceiling_height
        for i in range(len(poly)):
            a = np.asarray(poly[i], dtype=float)
            b = np.asarray(poly[(i + 1) % len(poly)], dtype=float)
            e = b - a
            L = float(np.hypot(*e))
            u = e / L
            cuts = []
            for d0, d1 in doors:
                d0, d1 = np.asarray(d0, float), np.asarray(d1, float)
                if abs(_orient(a, b, d0)) > 1e-6 * L or abs(_orient(a, b, d1)) > 1e-6 * L:
                    continue
                s0, s1 = sorted((float((d0 - a) @ u), float((d1 - a) @ u)))
                if s1 > 0 and s0 < L:
                    cuts.append((s0, s1))
            for s0, s1 in _subtract_intervals(L, cuts):
                p0, p1 = a + s0 * u, a + s1 * u
                key = tuple(sorted([tuple(np.round(p0, 6)), tuple(np.round(p1, 6))]))
                if key in seen:
                    continue
                seen.add(key)
                mid = 0.5 * (p0 + p1)
                yaw = wrap_angle(math.atan2(u[1], u[0]))
                walls.append(OrientedBox3(
                    center=(float(mid[0]), float(mid[1]), h / 2.0),
                    half_extents=((s1 - s0) / 2.0, WALL_THICKNESS / 2.0, h / 2.0),
                    yaw=yaw,
                ))
    return tuple(walls)


def compute_bounds(rooms: Sequence[Room]) -> tuple[float, float, float, float, float, float]:
    xs = [p[0] for r in rooms for p in r.polygon]
    ys = [p[1] for r in rooms for p in r.polygon]
    pad = WALL_THICKNESS / 2.0
    ztop = max(r.ceiling_height for r in rooms)
    return (min(xs) - pad, min(ys) - pad, 0.0, max(xs) + pad, max(ys) + pad, ztop)


def _normalize_polygon(room_id: str, polygon) -> tuple[Point2, ...]:
    pts = tuple((float(x), float(y)) for x, y in polygon)
    if len(pts) < 3:
        raise GeometryError(f"room {room_id}: polygon needs >= 3 vertices")
    if not all(math.isfinite(v) for p in pts for v in p):
        raise GeometryError(f"room {room_id}: non-finite vertex")
    if not is_simple(pts):
        raise GeometryError(f"room {room_id}: polygon is self-intersecting")
    a = signed_area(pts)
    if abs(a) < 1e-9:
        raise GeometryError(f"room {room_id}: zero-area polygon")
    if a < 0:
        pts = tuple(reversed(pts))
    return pts


def _box_inside_bounds(box: OrientedBox3, bounds, eps=1e-6) -> bool:
    c = box.corners()
    lo, hi = np.asarray(bounds[:3]), np.asarray(bounds[3:])
    return bool(np.all(c >= lo - eps) and np.all(c <= hi + eps))


def build_scene(scene_id: str, rooms: Sequence[Room], objects: Sequence[SceneObject],
                occluders: Sequence[OrientedBox3] = (), doors=()) -> Scene:
    """Validate components and derive walls and bounds."""
    if not rooms:
        raise SchemaError("scene needs at least one room")
    room_ids = [r.id for r in rooms]
    if len(set(room_ids)) != len(room_ids):
        raise SchemaError("duplicate room id")
    obj_ids = [o.id for o in objects]
    if len(set(obj_ids)) != len(obj_ids):
        raise SchemaError("duplicate object id")
    by_id = {r.id: r for r in rooms}
    for r in rooms:
        if not r.ceiling_height > 0:
            raise GeometryError(f"room {r.id}: ceiling_height must be positive")
    bounds = compute_bounds(rooms)
    for o in objects:
        if o.room_id not in by_id:
            raise UnknownReferenceError(f"object {o.id} references unknown room {o.room_id!r}")
        _check_box(o.box, f"object {o.id}")
        if not point_in_polygon(o.box.center[:2], by_id[o.room_id].polygon):
            raise GeometryError(f"object {o.id}: center outside room {o.room_id}")
        if not _box_inside_bounds(o.box, bounds):
            raise GeometryError(f"object {o.id}: box exceeds scene bounds")
    for i, b in enumerate(occluders):
        _check_box(b, f"occluder {i}")
    doors = tuple((tuple(map(float, a)), tuple(map(float, b))) for a, b in doors)
    walls = derive_walls(rooms, doors)
    return Scene(id=scene_id, rooms=tuple(rooms), objects=tuple(objects),
                 extra_occluders=tuple(occluders), doors=doors, walls=walls, bounds=bounds)


def _check_box(box: OrientedBox3, what: str) -> None:
    vals = list(box.center) + list(box.half_extents) + [box.yaw]
    if not all(math.isfinite(v) for v in vals):
        raise GeometryError(f"{what}: non-finite box parameter")
    if not all(h > 0 for h in box.half_extents):
        raise GeometryError(f"{what}: half_extents must be positive")


# --------------------------------------------------------------------------
# (de)serialization


def _require(d: dict, key: str, where: str):
    if not isinstance(d, dict) or key not in d:
        raise SchemaError(f"{where}: missing field {key!r}")
    return d[key]


def _vec(v, n: int, where: str) -> tuple:
    if not isinstance(v, (list, tuple)) or len(v) != n:
        raise SchemaError(f"{where}: expected {n} numbers")
    try:
        return tuple(float(x) for x in v)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where}: non-numeric entry") from exc


def _box_from_doc(d: dict, where: str) -> OrientedBox3:
    center = _vec(_require(d, "center", where), 3, where + ".center")
    half = _vec(_require(d, "half_extents", where), 3, where + ".half_extents")
    yaw = float(_require(d, "yaw", where))
    return OrientedBox3(center, half, wrap_angle(yaw))


def _box_to_doc(b: OrientedBox3) -> dict:
    return {"center": list(b.center), "half_extents": list(b.half_extents), "yaw": b.yaw}


def scene_from_dict(doc: dict) -> Scene:
    if not isinstance(doc, dict):
        raise SchemaError("scene document must be a JSON object")
    scene_id = str(_require(doc, "id", "scene"))
    rooms = []
    for i, rd in enumerate(_require(doc, "rooms", "scene")):
        where = f"rooms[{i}]"
        rid = str(_require(rd, "id", where))
        poly = _require(rd, "polygon", where)
        if not isinstance(poly, list):
            raise SchemaError(f"{where}.polygon must be a list")
        poly = [_vec(p, 2, f"{where}.polygon") for p in poly]
        rooms.append(Room(id=rid, polygon=_normalize_polygon(rid, poly),
                          ceiling_height=float(_require(rd, "ceiling_height", where)),
                          name=str(_require(rd, "name", where))))
    objects = []
    for i, od in enumerate(_require(doc, "objects", "scene")):
        where = f"objects[{i}]"
        objects.append(SceneObject(id=str(_require(od, "id", where)),
                                   category=str(_require(od, "category", where)),
                                   box=_box_from_doc(_require(od, "box", where), where + ".box"),
                                   room_id=str(_require(od, "room_id", where))))
    occ = [_box_from_doc(b, f"occluders[{i}]") for i, b in enumerate(_require(doc, "occluders", "scene"))]
    doors = [(_vec(d[0], 2, "doors"), _vec(d[1], 2, "doors")) for d in doc.get("doors", [])]
    return build_scene(scene_id, rooms, objects, occ, doors)


def scene_to_dict(scene: Scene) -> dict:
    return {
        "id": scene.id,
        "rooms": [{"id": r.id, "name": r.name, "ceiling_height": r.ceiling_height,
                   "polygon": [list(p) for p in r.polygon]} for r in scene.rooms],
        "objects": [{"id": o.id, "category": o.category, "room_id": o.room_id,
                     "box": _box_to_doc(o.box)} for o in scene.objects],
        "occluders": [_box_to_doc(b) for b in scene.extra_occluders],
        "doors": [[list(a), list(b)] for a, b in scene.doors],
    }


def load_scene(data: bytes | str) -> Scene:
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"scene document is not valid JSON: {exc}") from exc
    return scene_from_dict(doc)


def save_scene(scene: Scene, meta: Optional[dict] = None) -> bytes:
    doc = scene_to_dict(scene)
    if meta is not None:
        doc["meta"] = meta
    return (json.dumps(doc, sort_keys=True, indent=1) + "\n").encode("utf-8")


def locate_room(scene: Scene, p: Point2) -> Optional[str]:
    """Containing room id; ties on shared walls go to the smallest id."""
    hits = [r.id for r in scene.rooms if point_in_polygon(p, r.polygon)]
    return min(hits) if hits else None


# --------------------------------------------------------------------------
# toy scenes

CATEGORY_TEMPLATES: dict[str, tuple[float, float, float]] = {
    "chair": (0.25, 0.25, 0.45),
    "table": (0.6, 0.4, 0.38),
    "sofa": (0.9, 0.4, 0.4),
    "bed": (1.0, 0.8, 0.3),
    "lamp": (0.15, 0.15, 0.8),
    "plant": (0.2, 0.2, 0.5),
    "tv_stand": (0.6, 0.2, 0.3),
    "cabinet": (0.4, 0.25, 0.6),
    "bookshelf": (0.45, 0.18, 0.9),
    "desk": (0.6, 0.35, 0.38),
    "armchair": (0.4, 0.4, 0.45),
    "stool": (0.18, 0.18, 0.3),
    "refrigerator": (0.35, 0.35, 0.9),
    "washing_machine": (0.3, 0.3, 0.42),
    "trash_can": (0.15, 0.15, 0.3),
    "nightstand": (0.22, 0.2, 0.28),
}
ROOM_NAMES = ["living room", "kitchen", "bedroom", "study", "bathroom", "dining room", "office", "hallway"]

TOY_WALL_MARGIN = 0.35
TOY_OBJECT_GAP = 0.1
TOY_DOOR_KEEPOUT = 1.0
TOY_JITTER = 0.15
TOY_PLACEMENT_RETRIES = 1000
TOY_LAYOUT_RESTARTS = 8


def _rects_overlap(a: np.ndarray, b: np.ndarray, gap: float) -> bool:
    """Separating-axis test on two convex quads, each grown by ``gap``/2."""
    for poly in (a, b):
        for i in range(4):
            e = poly[(i + 1) % 4] - poly[i]
            n = np.array([-e[1], e[0]]) / np.hypot(*e)
            pa, pb = a @ n, b @ n
            if pa.max() + gap / 2 < pb.min() - gap / 2 or pb.max() + gap / 2 < pa.min() - gap / 2:
                return False
    return True


def gen_toy_scene(seed: int, n_rooms: int, n_objects: int,
                  room_size: Optional[tuple[float, float]] = None,
                  pillars: bool = True) -> Scene:
    """Deterministic grid of rectangular rooms joined by door gaps.

    Rooms are laid out row-major; each room opens to its left neighbour, and
    first-column rooms open to the room below them, forming a spanning tree.
    """
    if not 1 <= n_rooms <= 8:
        raise ValueError("n_rooms must be in [1, 8]")
    if not 1 <= n_objects <= 64:
        raise ValueError("n_objects must be in [1, 64]")
    rng = py_rng(seed, "toy_scene", n_rooms, n_objects)
    cols = math.ceil(math.sqrt(n_rooms))
    rows = math.ceil(n_rooms / cols)
    if room_size is not None:
        widths = [float(room_size[0])] * cols
        heights = [float(room_size[1])] * rows
    else:
        widths = [round(rng.uniform(3.5, 6.0), 1) for _ in range(cols)]
        heights = [round(rng.uniform(3.5, 5.5), 1) for _ in range(rows)]
    xs = [0.0]
    for w in widths:
        xs.append(round(xs[-1] + w, 6))
    ys = [0.0]
    for h in heights:
        ys.append(round(ys[-1] + h, 6))

    rooms = []
    cell_of = {}
    for k in range(n_rooms):
        r, c = divmod(k, cols)
        x0, x1, y0, y1 = xs[c], xs[c + 1], ys[r], ys[r + 1]
        rid = f"room{k}"
        rooms.append(Room(id=rid, polygon=((x0, y0), (x1, y0), (x1, y1), (x0, y1)),
                          ceiling_height=2.8, name=ROOM_NAMES[k % len(ROOM_NAMES)]))
        cell_of[(r, c)] = k

    doors = []
    for k in range(n_rooms):
        r, c = divmod(k, cols)
        if c > 0:
            x = xs[c]
            lo, hi = ys[r], ys[r + 1]
            y = round(rng.uniform(lo + 1.0, hi - 1.0), 2)
            doors.append(((x, round(y - 0.5, 6)), (x, round(y + 0.5, 6))))
        elif r > 0:
            y = ys[r]
            lo, hi = xs[c], xs[c + 1]
            x = round(rng.uniform(lo + 1.0, hi - 1.0), 2)
            doors.append(((round(x - 0.5, 6), y), (round(x + 0.5, 6), y)))
    door_centers = [((a[0] + b[0]) / 2, (a[1] + b[1]) / 2) for a, b in doors]

    placed: list[np.ndarray] = []

    def try_place(room: Room, half: tuple[float, float, float]) -> Optional[OrientedBox3]:
        (x0, y0), (x1, y1) = room.polygon[0], room.polygon[2]
        for _ in range(TOY_PLACEMENT_RETRIES):
            if rng.random() < 0.5:
                yaw = rng.choice((-math.pi, -math.pi / 2, 0.0, math.pi / 2))
            else:
                yaw = round(rng.uniform(-math.pi, math.pi), 3)
            cx = round(rng.uniform(x0 + TOY_WALL_MARGIN, x1 - TOY_WALL_MARGIN), 3)
            cy = round(rng.uniform(y0 + TOY_WALL_MARGIN, y1 - TOY_WALL_MARGIN), 3)
            box = OrientedBox3((cx, cy, half[2]), half, wrap_angle(yaw))
            fp = box.footprint()
            if (fp[:, 0].min() < x0 + TOY_WALL_MARGIN or fp[:, 0].max() > x1 - TOY_WALL_MARGIN
                    or fp[:, 1].min() < y0 + TOY_WALL_MARGIN or fp[:, 1].max() > y1 - TOY_WALL_MARGIN):
                continue
            if any(box.distance_xy(dc) < TOY_DOOR_KEEPOUT for dc in door_centers):
                continue
            if any(_rects_overlap(fp, other, TOY_OBJECT_GAP) for other in placed):
                continue
            placed.append(fp)
            return box
        return None

    occluders = []
    if pillars:
        for room in rooms:
            (x0, y0), (x1, y1) = room.polygon[0], room.polygon[2]
            if min(x1 - x0, y1 - y0) >= 4.5 and rng.random() < 0.5:
                box = try_place(room, (0.15, 0.15, room.ceiling_height / 2))
                if box is not None:
                    occluders.append(box)

    cats = list(CATEGORY_TEMPLATES)
    chosen = [rng.choice(cats) for _ in range(n_objects)]
    if n_objects >= 4 and len(set(chosen)) == n_objects:
        chosen[-1] = chosen[0]
    areas = [r.area for r in rooms]
    halves = []
    for cat in chosen:
        tx, ty, tz = CATEGORY_TEMPLATES[cat]
        halves.append(tuple(round(v * rng.uniform(1 - TOY_JITTER, 1 + TOY_JITTER), 3) for v in (tx, ty, tz)))
    homes = [rng.choices(rooms, weights=areas)[0] for _ in chosen]
    # big footprints first; ids keep the draw order
    placement = sorted(range(n_objects), key=lambda i: (-halves[i][0] * halves[i][1], i))
    fixed = list(placed)
    boxes: dict[int, tuple[OrientedBox3, Room]] = {}
    for _ in range(TOY_LAYOUT_RESTARTS):
        placed[:] = fixed
        boxes = {}
        for i in placement:
            room, half = homes[i], halves[i]
            box = try_place(room, half)
            if box is None:
                # other rooms may still have space
                for alt in sorted(rooms, key=lambda r: -r.area):
                    if alt is room:
                        continue
                    box = try_place(alt, half)
                    if box is not None:
                        room = alt
                        break
            if box is None:
                break
            boxes[i] = (box, room)
        if len(boxes) == n_objects:
            break
    else:
        missing = min(set(range(n_objects)) - set(boxes))
        raise CapacityError(f"could not place object {missing} ({chosen[missing]}) after bounded retries")
    objects = [SceneObject(id=f"{cat}_{i}", category=cat, box=boxes[i][0], room_id=boxes[i][1].id)
               for i, cat in enumerate(chosen)]
    return build_scene(f"toy-{seed}-{n_rooms}-{n_objects}", rooms, objects, occluders, doors)
