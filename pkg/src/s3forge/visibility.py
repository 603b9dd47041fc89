"""Per-frame object visibility: pinhole projection plus sampled occlusion rays.

Camera frame: z forward along the yaw heading, x to the right, y down.
Pitch is always zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .artifacts import dump_jsonl, load_jsonl
from .errors import SchemaError
from .scene import CameraIntrinsics, OrientedBox3, Pose, Scene, Trajectory

NEAR = 1e-6
# box edges as corner index pairs, corners ordered as in OrientedBox3.corners()
_EDGES = [(a, b) for a in range(8) for b in range(a + 1, 8) if bin(a ^ b).count("1") == 1]


@dataclass(frozen=True)
class VisParams:
    n_surface_samples: int = 26
    tau_vis: float = 0.2
    min_px: int = 100
    max_range: float = 12.0

    def __post_init__(self):
        if not 0.0 < self.tau_vis <= 1.0:
            raise ValueError("tau_vis must lie in (0, 1]")
        if self.n_surface_samples < 8:
            raise ValueError("n_surface_samples must be >= 8")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")


def surface_lattice(n: int) -> np.ndarray:
    """Points of the [-1, 1]^3 cube surface on an m-per-edge lattice.

    m is the smallest subdivision giving at least ``n`` points (6m^2 + 2);
    m = 2 is the 26-point set of corners, face centers and edge midpoints.
    """
    m = 1
    while 6 * m * m + 2 < n:
        m += 1
    ticks = np.linspace(-1.0, 1.0, m + 1)
    g = np.stack(np.meshgrid(ticks, ticks, ticks, indexing="ij"), axis=-1).reshape(-1, 3)
    on_surface = np.isclose(np.abs(g), 1.0).any(axis=1)
    return g[on_surface]


def camera_axes(yaw: float) -> np.ndarray:
    """Rows: right, down, forward in world coordinates."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[s, -c, 0.0], [0.0, 0.0, -1.0], [c, s, 0.0]])


def to_camera(points: np.ndarray, pose: Pose) -> np.ndarray:
    return (np.asarray(points, dtype=float) - np.asarray(pose.position)) @ camera_axes(pose.yaw).T


def project(box: OrientedBox3, pose: Pose, intrinsics: CameraIntrinsics) -> Optional[tuple[float, float, float, float]]:
    """Image bbox (u0, v0, u1, v1) of the box's corner projection, clipped to the image.

    Edges crossing the near plane are clipped there so partially-behind boxes
    still project sensibly. None when nothing lies in front or the bbox
    misses the image.
    """
    cam = to_camera(box.corners(), pose)
    front = cam[:, 2] > NEAR
    if not front.any():
        return None
    pts = [cam[front]]
    for a, b in _EDGES:
        if front[a] != front[b]:
            za, zb = cam[a, 2], cam[b, 2]
            t = (NEAR - za) / (zb - za)
            pts.append((cam[a] + t * (cam[b] - cam[a]))[None, :])
    p = np.vstack(pts)
    f = intrinsics.focal_px
    u = intrinsics.width_px / 2.0 + f * p[:, 0] / p[:, 2]
    v = intrinsics.height_px / 2.0 + f * p[:, 1] / p[:, 2]
    u0, u1 = max(u.min(), 0.0), min(u.max(), float(intrinsics.width_px))
    v0, v1 = max(v.min(), 0.0), min(v.max(), float(intrinsics.height_px))
    if u1 <= u0 or v1 <= v0:
        return None
    return (float(u0), float(v0), float(u1), float(v1))


def bbox_area(bbox) -> float:
    if bbox is None:
        return 0.0
    return (bbox[2] - bbox[0]) * (bbox[3] - bbox[1])


def _box_arrays(boxes: Sequence[OrientedBox3]):
    if not boxes:
        return np.zeros((0, 3)), np.zeros((0, 3, 3)), np.zeros((0, 3))
    centers = np.array([b.center for b in boxes], dtype=float)
    rots = np.array([b.rotation() for b in boxes])
    halves = np.array([b.half_extents for b in boxes], dtype=float)
    return centers, rots, halves


def segments_blocked(origin: np.ndarray, targets: np.ndarray, centers: np.ndarray, rots: np.ndarray,
                     halves: np.ndarray, ignore: Optional[np.ndarray] = None) -> np.ndarray:
    """Slab test of segments ``origin -> targets[i]`` against every box.

    Returns (S, O) hits; a hit needs a positive-length overlap of the
    segment parameter interval [0, 1] with the box slab interval.
    ``ignore`` is an optional (S, O) mask of pairs to skip.
    """
    S, O = len(targets), len(centers)
    if S == 0 or O == 0:
        return np.zeros((S, O), dtype=bool)
    o_loc = np.einsum("oji,oj->oi", rots, origin[None, :] - centers)        # (O, 3)
    d_loc = np.einsum("oji,sj->soi", rots, targets - origin[None, :])        # (S, O, 3)
    lo = -halves[None, :, :] - o_loc[None, :, :]
    hi = halves[None, :, :] - o_loc[None, :, :]
    parallel = np.abs(d_loc) < 1e-15
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = lo / d_loc
        t2 = hi / d_loc
    tnear = np.minimum(t1, t2)
    tfar = np.maximum(t1, t2)
    inside_slab = (lo <= 0.0) & (hi >= 0.0)
    tnear = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), tnear)
    tfar = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), tfar)
    t0 = np.maximum(tnear.max(axis=2), 0.0)
    t1_ = np.minimum(tfar.min(axis=2), 1.0)
    hit = t0 < t1_
    if ignore is not None:
        hit &= ~ignore
    return hit


def segment_box_hit(p: Sequence[float], q: Sequence[float], box: OrientedBox3) -> bool:
    c, R, h = _box_arrays([box])
    return bool(segments_blocked(np.asarray(p, dtype=float), np.asarray(q, dtype=float)[None, :], c, R, h)[0, 0])


def _in_view(cam: np.ndarray, intrinsics: CameraIntrinsics, max_range: float) -> np.ndarray:
    z = cam[:, 2]
    front = z > NEAR
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intrinsics.width_px / 2.0 + intrinsics.focal_px * cam[:, 0] / z
        v = intrinsics.height_px / 2.0 + intrinsics.focal_px * cam[:, 1] / z
    in_img = (u >= 0) & (u <= intrinsics.width_px) & (v >= 0) & (v <= intrinsics.height_px)
    in_range = np.linalg.norm(cam, axis=1) <= max_range
    return front & in_img & in_range


def box_samples(box: OrientedBox3, lattice: np.ndarray) -> np.ndarray:
    return (lattice * np.asarray(box.half_extents)) @ box.rotation().T + np.asarray(box.center)


def visible_fraction(box: OrientedBox3, pose: Pose, intrinsics: CameraIntrinsics,
                     occluders: Sequence[OrientedBox3], params: VisParams) -> float:
    """Share of surface samples in view, in range and not hidden by any occluder.

    ``occluders`` must not contain ``box`` itself (self-occlusion is ignored).
    """
    pts = box_samples(box, surface_lattice(params.n_surface_samples))
    ok = _in_view(to_camera(pts, pose), intrinsics, params.max_range)
    if ok.any() and occluders:
        c, R, h = _box_arrays(list(occluders))
        blocked = segments_blocked(np.asarray(pose.position, dtype=float), pts[ok], c, R, h).any(axis=1)
        ok[np.flatnonzero(ok)[blocked]] = False
    return float(ok.sum()) / len(pts)


class VisibilityModel:
    """Precomputed sample points and occluder arrays for one scene."""

    def __init__(self, scene: Scene, intrinsics: CameraIntrinsics, params: VisParams):
        self.scene = scene
        self.intrinsics = intrinsics
        self.params = params
        self.objects = sorted(scene.objects, key=lambda o: o.id)
        self.object_ids = [o.id for o in self.objects]
        lattice = surface_lattice(params.n_surface_samples)
        self.m = len(lattice)
        n = len(self.objects)
        self.samples = np.array([box_samples(o.box, lattice) for o in self.objects]).reshape(n * self.m, 3) \
            if n else np.zeros((0, 3))
        self.owner = np.repeat(np.arange(n), self.m)
        boxes = list(scene.occluders) + [o.box for o in self.objects]
        self.n_static = len(scene.occluders)
        self.centers, self.rots, self.halves = _box_arrays(boxes)
        self.obj_centers = np.array([o.box.center for o in self.objects], dtype=float).reshape(n, 3)

    def object_visibility(self, pose: Pose, i: int) -> tuple[float, int]:
        """(fraction, px) for object ``i`` only."""
        pts = self.samples[i * self.m:(i + 1) * self.m]
        ok = _in_view(to_camera(pts, pose), self.intrinsics, self.params.max_range)
        if not ok.any():
            return 0.0, 0
        ignore = np.zeros((int(ok.sum()), len(self.centers)), dtype=bool)
        ignore[:, self.n_static + i] = True
        blocked = segments_blocked(np.asarray(pose.position, dtype=float), pts[ok], self.centers, self.rots,
                                   self.halves, ignore).any(axis=1)
        frac = round(float((~blocked).sum()) / self.m, 6)
        if frac <= 0:
            return 0.0, 0
        return frac, max(1, int(round(bbox_area(project(self.objects[i].box, pose, self.intrinsics)))))

    def index_of(self, object_id: str) -> int:
        return self.object_ids.index(object_id)

    def evaluate(self, pose: Pose) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(fraction, px, dist) per object in id order; fractions rounded to 6 decimals."""
        n = len(self.objects)
        frac = np.zeros(n)
        px = np.zeros(n, dtype=np.int64)
        dist = np.full(n, np.nan)
        if n == 0:
            return frac, px, dist
        origin = np.asarray(pose.position, dtype=float)
        cand = _in_view(to_camera(self.samples, pose), self.intrinsics, self.params.max_range)
        idx = np.flatnonzero(cand)
        if len(idx):
            own = self.owner[idx]
            ignore = np.zeros((len(idx), len(self.centers)), dtype=bool)
            ignore[np.arange(len(idx)), self.n_static + own] = True
            blocked = segments_blocked(origin, self.samples[idx], self.centers, self.rots, self.halves,
                                       ignore).any(axis=1)
            counts = np.bincount(own[~blocked], minlength=n)
            frac = np.round(counts / self.m, 6)
        for i in np.flatnonzero(frac > 0):
            area = bbox_area(project(self.objects[i].box, pose, self.intrinsics))
            px[i] = max(1, int(round(area)))
            dist[i] = round(float(np.linalg.norm(self.obj_centers[i] - origin)), 6)
        return frac, px, dist


@dataclass
class VisibilityTable:
    """Dense (frame, object) arrays; objects in sorted id order."""
    scene_id: str
    trajectory_id: str
    object_ids: list[str]
    fraction: np.ndarray
    px: np.ndarray
    dist: np.ndarray
    params: VisParams

    def __post_init__(self):
        self._col = {oid: i for i, oid in enumerate(self.object_ids)}
        vis = self.visible_matrix()
        self._first = {}
        for i, oid in enumerate(self.object_ids):
            hits = np.flatnonzero(vis[:, i])
            self._first[oid] = int(hits[0]) if len(hits) else None

    @property
    def n_frames(self) -> int:
        return self.fraction.shape[0]

    def visible_matrix(self) -> np.ndarray:
        return (self.fraction >= self.params.tau_vis) & (self.px >= self.params.min_px)

    def record(self, frame: int, object_id: str) -> tuple[float, int, float]:
        i = self._col[object_id]
        return float(self.fraction[frame, i]), int(self.px[frame, i]), float(self.dist[frame, i])

    def is_visible(self, frame: int, object_id: str) -> bool:
        f, p, _ = self.record(frame, object_id)
        return f >= self.params.tau_vis and p >= self.params.min_px

    def first_appearance(self, object_id: str) -> Optional[int]:
        return self._first[object_id]

    def visible_objects(self, frame: int) -> list[str]:
        if not 0 <= frame < self.n_frames:
            raise IndexError(f"frame {frame} outside table of {self.n_frames}")
        row = (self.fraction[frame] >= self.params.tau_vis) & (self.px[frame] >= self.params.min_px)
        return [self.object_ids[i] for i in np.flatnonzero(row)]

    def rows(self):
        for f in range(self.n_frames):
            for i in np.flatnonzero(self.fraction[f] > 0):
                yield {"frame": f, "object_id": self.object_ids[i], "fraction": float(self.fraction[f, i]),
                       "px": int(self.px[f, i]), "dist": float(self.dist[f, i])}


def compute_table(scene: Scene, trajectory: Trajectory, intrinsics: CameraIntrinsics,
                  params: VisParams) -> VisibilityTable:
    model = VisibilityModel(scene, intrinsics, params)
    n = len(model.objects)
    F = len(trajectory.poses)
    frac = np.zeros((F, n))
    px = np.zeros((F, n), dtype=np.int64)
    dist = np.full((F, n), np.nan)
    for f, pose in enumerate(trajectory.poses):
        frac[f], px[f], dist[f] = model.evaluate(pose)
    return VisibilityTable(scene.id, trajectory.id, model.object_ids, frac, px, dist, params)


def visible_objects(table: VisibilityTable, frame: int, params: Optional[VisParams] = None) -> list[str]:
    if params is not None and params != table.params:
        table = VisibilityTable(table.scene_id, table.trajectory_id, table.object_ids, table.fraction,
                                table.px, table.dist, params)
    return table.visible_objects(frame)


def first_appearance(table: VisibilityTable, object_id: str) -> Optional[int]:
    return table.first_appearance(object_id)


def table_to_jsonl(table: VisibilityTable, header: Optional[dict] = None) -> bytes:
    head = dict(header or {})
    head.update({"scene_id": table.scene_id, "trajectory_id": table.trajectory_id, "n_frames": table.n_frames,
                 "object_ids": list(table.object_ids),
                 "vis_params": {"n_surface_samples": table.params.n_surface_samples,
                                "tau_vis": table.params.tau_vis, "min_px": table.params.min_px,
                                "max_range": table.params.max_range}})
    return dump_jsonl(table.rows(), head)


def table_from_jsonl(data: bytes | str) -> VisibilityTable:
    header, rows = load_jsonl(data)
    if header is None:
        raise SchemaError("visibility file lacks a header line")
    try:
        ids = list(header["object_ids"])
        F = int(header["n_frames"])
        params = VisParams(**header["vis_params"])
        col = {oid: i for i, oid in enumerate(ids)}
        frac = np.zeros((F, len(ids)))
        px = np.zeros((F, len(ids)), dtype=np.int64)
        dist = np.full((F, len(ids)), np.nan)
        for r in rows:
            f, i = int(r["frame"]), col[r["object_id"]]
            frac[f, i], px[f, i], dist[f, i] = float(r["fraction"]), int(r["px"]), float(r["dist"])
        return VisibilityTable(header["scene_id"], header["trajectory_id"], ids, frac, px, dist, params)
    except (KeyError, IndexError, TypeError) as exc:
        raise SchemaError(f"malformed visibility file: {exc}") from exc
