"""Keypoint sampling, coverage-greedy selection and timed trajectory synthesis."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import NoPath
from .nav import (SQRT2, OccupancyGrid, astar, box_footprint_distance, bspline_smooth, corner_keypoints,
                  max_inscribed_circle, nearest_free_cell, polyline_free, prune_path, rasterize)
from .scene import (IDLE, MOVING, SWEEPING, CameraIntrinsics, Point2, Pose, Scene, Trajectory,
                    points_in_polygon, wrap_angle)
from .seeds import py_rng

CORNER, CIRCLE_CENTER, OBJECT_TARGET = "CORNER", "CIRCLE_CENTER", "OBJECT_TARGET"
SWEEP_BY_KIND = {CORNER: 90, CIRCLE_CENTER: 360, OBJECT_TARGET: 180}


@dataclass(frozen=True)
class Keypoint:
    position: Point2
    kind: str
    sweep_deg: int
    facing: Optional[float] = None
    room_id: Optional[str] = None
    target_id: Optional[str] = None


@dataclass(frozen=True)
class PlanConfig:
    fps: int = 24
    v_max: float = 1.0
    accel: float = 1.0
    turn_rate: float = 60.0
    sweep_rate: float = 60.0
    keypoint_budget: int = 6
    clearance: float = 0.25
    seed: int = 0
    cell_size: float = 0.05
    r_vis: float = 6.0
    camera_height: float = 1.5
    corner_inset: float = 0.6
    object_targets: int = 0
    target_standoff: float = 1.0
    samples_per_segment: int = 8
    sweeps: bool = True

    def __post_init__(self):
        for name in ("v_max", "accel", "turn_rate", "sweep_rate", "cell_size", "r_vis"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.keypoint_budget < 1:
            raise ValueError("keypoint_budget must be >= 1")
        if self.fps < 1:
            raise ValueError("fps must be >= 1")


def planning_grid(scene: Scene, config: PlanConfig) -> OccupancyGrid:
    """Grid inflated by half a cell diagonal on top of the clearance.

    Any point inside a FREE cell of this grid then keeps at least
    ``config.clearance`` from every obstacle footprint.
    """
    margin = config.cell_size * SQRT2 / 2.0 + 1e-6
    return rasterize(scene, config.cell_size, config.clearance + margin)


def obstacle_clearance(scene: Scene, pts: np.ndarray) -> np.ndarray:
    """Exact distance from (N, 2) points to the nearest obstacle footprint.

    Points outside every room get ``-inf``.
    """
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    d = np.full(len(pts), np.inf)
    for box in scene.obstacles:
        d = np.minimum(d, box_footprint_distance(pts, box))
    inside = np.zeros(len(pts), dtype=bool)
    for room in scene.rooms:
        inside |= points_in_polygon(pts, room.polygon)
    d[~inside] = -np.inf
    return d


# --------------------------------------------------------------------------
# keypoints


def _main_component(grid: OccupancyGrid) -> np.ndarray:
    labels = grid.components()
    counts = np.bincount(labels.ravel())
    counts[0] = 0
    return labels == int(np.argmax(counts))


def _room_mask(grid: OccupancyGrid, polygon) -> np.ndarray:
    c = grid.cell_centers().reshape(-1, 2)
    return points_in_polygon(c, polygon).reshape(grid.height, grid.width)


def sample_keypoints(scene: Scene, grid: OccupancyGrid, config: PlanConfig) -> list[Keypoint]:
    """Circle center and convex-corner insets per room, plus optional object standoffs.

    Only positions in the largest connected free region are kept, so every
    returned keypoint is reachable from every other.
    """
    main = _main_component(grid)

    def usable(p: Point2) -> bool:
        c = grid.cell_at(p)
        return grid.in_bounds(c) and bool(main[c[1], c[0]])

    out = []
    for room in sorted(scene.rooms, key=lambda r: r.id):
        center, _ = max_inscribed_circle(room.polygon)
        if not usable(center):
            cell = nearest_free_cell(grid, center, main & _room_mask(grid, room.polygon))
            center = grid.center(cell) if cell is not None else None
        if center is not None:
            out.append(Keypoint(center, CIRCLE_CENTER, SWEEP_BY_KIND[CIRCLE_CENTER], None, room.id))
        for p, heading in corner_keypoints(room, config.corner_inset):
            if usable(p):
                out.append(Keypoint(p, CORNER, SWEEP_BY_KIND[CORNER], heading, room.id))
    if config.object_targets > 0 and scene.objects:
        rng = py_rng(config.seed, "object_targets")
        objs = sorted(scene.objects, key=lambda o: o.id)
        picks = rng.sample(objs, min(config.object_targets, len(objs)))
        centers = grid.cell_centers()
        for obj in picks:
            ox, oy = obj.box.center[0], obj.box.center[1]
            d = np.hypot(centers[..., 0] - ox, centers[..., 1] - oy)
            err = np.where(main, np.abs(d - config.target_standoff), np.inf)
            k = int(np.argmin(err))
            if not math.isfinite(err.ravel()[k]):
                continue
            p = grid.center(grid.cell_of_index(k))
            out.append(Keypoint(p, OBJECT_TARGET, SWEEP_BY_KIND[OBJECT_TARGET],
                                math.atan2(oy - p[1], ox - p[0]), obj.room_id, obj.id))
    return out


# --------------------------------------------------------------------------
# coverage


def fan_mask(grid: OccupancyGrid, pos: Point2, yaw_lo: float, yaw_hi: float, r_vis: float) -> np.ndarray:
    """Free cells reached by rays cast over ``[yaw_lo, yaw_hi]`` before hitting BLOCKED.

    Ray spacing keeps adjacent rays within half a cell of each other at
    ``r_vis``; marching steps are half a cell.
    """
    span = yaw_hi - yaw_lo
    full = span >= 2.0 * math.pi - 1e-9
    span = 2.0 * math.pi if full else max(span, 0.0)
    dtheta = grid.cell_size / (2.0 * r_vis)
    n_rays = max(2, int(math.ceil(span / dtheta)) + 1)
    angles = yaw_lo + np.linspace(0.0, span, n_rays, endpoint=not full)
    step = grid.cell_size / 2.0
    r = np.arange(1, int(math.ceil(r_vis / step)) + 1) * step
    px = pos[0] + np.cos(angles)[:, None] * r[None, :]
    py = pos[1] + np.sin(angles)[:, None] * r[None, :]
    ix = np.floor((px - grid.origin[0]) / grid.cell_size).astype(np.int64)
    iy = np.floor((py - grid.origin[1]) / grid.cell_size).astype(np.int64)
    inb = (ix >= 0) & (ix < grid.width) & (iy >= 0) & (iy < grid.height)
    ixc = np.clip(ix, 0, grid.width - 1)
    iyc = np.clip(iy, 0, grid.height - 1)
    ok = inb & ~grid.blocked[iyc, ixc]
    alive = np.logical_and.accumulate(ok, axis=1)
    mask = np.zeros(grid.width * grid.height, dtype=bool)
    mask[(iyc * grid.width + ixc)[alive]] = True
    own = grid.cell_at(pos)
    if grid.is_free(own):
        mask[grid.index(own)] = True
    return mask


def keypoint_mask(kp: Keypoint, grid: OccupancyGrid, intrinsics: CameraIntrinsics, r_vis: float) -> np.ndarray:
    half_fov = math.radians(intrinsics.horizontal_fov) / 2.0
    if kp.sweep_deg >= 360 or kp.facing is None:
        return fan_mask(grid, kp.position, 0.0, 2.0 * math.pi, r_vis)
    half = math.radians(kp.sweep_deg) / 2.0
    return fan_mask(grid, kp.position, kp.facing - half - half_fov, kp.facing + half + half_fov, r_vis)


def select_keypoints(candidates: Sequence[Keypoint], grid: OccupancyGrid, intrinsics: CameraIntrinsics,
                     config: PlanConfig) -> list[Keypoint]:
    """Greedy marginal-coverage selection; equal gains are broken by the seeded RNG."""
    rng = py_rng(config.seed, "select_keypoints")
    masks = [keypoint_mask(k, grid, intrinsics, config.r_vis) for k in candidates]
    covered = np.zeros(grid.width * grid.height, dtype=bool)
    remaining = list(range(len(candidates)))
    chosen = []
    budget = min(config.keypoint_budget, len(candidates))
    while remaining and len(chosen) < budget:
        gains = [int((masks[i] & ~covered).sum()) for i in remaining]
        best = max(gains)
        ties = [i for i, g in zip(remaining, gains) if g == best]
        pick = ties[rng.randrange(len(ties))] if len(ties) > 1 else ties[0]
        chosen.append(pick)
        covered |= masks[pick]
        remaining.remove(pick)
    return [candidates[i] for i in chosen]


def keypoint_set_coverage(keypoints: Sequence[Keypoint], grid: OccupancyGrid, intrinsics: CameraIntrinsics,
                          r_vis: float) -> float:
    covered = np.zeros(grid.width * grid.height, dtype=bool)
    for k in keypoints:
        covered |= keypoint_mask(k, grid, intrinsics, r_vis)
    return covered.sum() / max(grid.free_count, 1)


def coverage(trajectory: Trajectory, grid: OccupancyGrid, intrinsics: CameraIntrinsics,
             r_vis: float = 6.0) -> float:
    """Fraction of FREE cells seen within the horizontal FoV by at least one pose."""
    if not trajectory.poses or grid.free_count == 0:
        return 0.0
    half_fov = math.radians(intrinsics.horizontal_fov) / 2.0
    covered = np.zeros(grid.width * grid.height, dtype=bool)
    poses = trajectory.poses
    i = 0
    while i < len(poses):
        j = i
        lo = hi = poses[i].yaw
        # consecutive poses at one spot (sweeps, turns) share a single fan
        while j + 1 < len(poses) and poses[j + 1].x == poses[i].x and poses[j + 1].y == poses[i].y:
            j += 1
            lo, hi = min(lo, poses[j].yaw), max(hi, poses[j].yaw)
        covered |= fan_mask(grid, poses[i].xy, lo - half_fov, hi + half_fov, r_vis)
        i = j + 1
    return float(covered.sum() / grid.free_count)


# --------------------------------------------------------------------------
# trajectory synthesis


def _densify(pts: Sequence[Point2], factor: int) -> list[Point2]:
    if factor <= 1:
        return [tuple(p) for p in pts]
    out = []
    for a, b in zip(pts[:-1], pts[1:]):
        for k in range(factor):
            t = k / factor
            out.append((a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t))
    out.append(tuple(pts[-1]))
    return out


def route(grid: OccupancyGrid, a: Point2, b: Point2, config: PlanConfig) -> tuple[np.ndarray, np.ndarray]:
    """Smoothed route and its guaranteed-free fallback (A* cell-center polyline)."""
    path = astar(grid, grid.cell_at(a), grid.cell_at(b))
    dense = [tuple(a)] + [grid.center(c) for c in path.cells] + [tuple(b)]
    dedup = [dense[0]]
    for p in dense[1:]:
        if math.dist(p, dedup[-1]) > 1e-9:
            dedup.append(p)
    fallback = np.asarray(dedup if len(dedup) > 1 else dedup * 2, dtype=float)
    if len(dedup) < 2:
        return fallback, fallback
    pruned = prune_path(grid, dedup)
    for level in (1, 2, 4, 8):
        ctrl = _densify(pruned, level)
        if len(ctrl) < 3:
            break
        curve = bspline_smooth(ctrl, config.samples_per_segment)
        if polyline_free(grid, curve):
            return curve, fallback
    pruned = np.asarray(pruned, dtype=float)
    if polyline_free(grid, pruned):
        return pruned, fallback
    return fallback, fallback


def _trapezoid(L: float, v: float, a: float):
    """Duration and arc-length profile s(t) of a rest-to-rest move."""
    da = v * v / (2.0 * a)
    if L >= 2.0 * da:
        ta = v / a
        T = 2.0 * ta + (L - 2.0 * da) / v

        def s(t):
            if t <= ta:
                return 0.5 * a * t * t
            if t <= T - ta:
                return da + v * (t - ta)
            return L - 0.5 * a * (T - t) ** 2
    else:
        tp = math.sqrt(L / a)
        T = 2.0 * tp

        def s(t):
            if t <= tp:
                return 0.5 * a * t * t
            return L - 0.5 * a * (T - t) ** 2
    return T, s


class _Builder:
    def __init__(self, fps: int, z: float):
        self.fps = fps
        self.z = z
        self.poses: list[Pose] = []
        self.labels: list[str] = []
        self.marks: list[int] = []

    @property
    def last(self) -> Pose:
        return self.poses[-1]

    def emit(self, x, y, yaw, label):
        n = len(self.poses)
        self.poses.append(Pose(float(x), float(y), self.z, float(yaw), n / self.fps))
        self.labels.append(label)

    def rotate(self, delta: float, rate_deg: float, label: str):
        if abs(delta) < 1e-12:
            return
        rate = math.radians(rate_deg)
        T = abs(delta) / rate
        n = int(math.ceil(T * self.fps - 1e-9))
        x, y, yaw0 = self.last.x, self.last.y, self.last.yaw
        sign = 1.0 if delta > 0 else -1.0
        for k in range(1, n + 1):
            self.emit(x, y, yaw0 + sign * min(k / self.fps * rate, abs(delta)), label)

    def turn_to(self, heading: float, rate_deg: float, label: str = IDLE):
        self.rotate(wrap_angle(heading - self.last.yaw), rate_deg, label)

    def move(self, poly: np.ndarray, config: PlanConfig) -> list[Pose]:
        seg = np.diff(poly, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        keep = seg_len > 1e-12
        poly = np.vstack([poly[:1], poly[1:][keep]])
        seg, seg_len = seg[keep], seg_len[keep]
        if len(seg) == 0:
            return []
        cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        L = float(cum[-1])
        T, s_of = _trapezoid(L, config.v_max, config.accel)
        n = int(math.ceil(T * self.fps - 1e-9))
        headings = np.arctan2(seg[:, 1], seg[:, 0])
        max_step = math.radians(config.turn_rate) / self.fps
        yaw = self.last.yaw
        out = []
        for k in range(1, n + 1):
            s = min(s_of(min(k / self.fps, T)), L)
            if k == n:
                s = L
            x = float(np.interp(s, cum, poly[:, 0]))
            y = float(np.interp(s, cum, poly[:, 1]))
            i = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg) - 1)
            yaw += float(np.clip(wrap_angle(headings[i] - yaw), -max_step, max_step))
            self.emit(x, y, yaw, MOVING)
            out.append(self.poses[-1])
        return out

    def truncate(self, n: int):
        del self.poses[n:]
        del self.labels[n:]


def _leg_heading(poly: np.ndarray) -> float:
    for a, b in zip(poly[:-1], poly[1:]):
        if math.dist(a, b) > 1e-9:
            return math.atan2(b[1] - a[1], b[0] - a[0])
    return 0.0


def plan(scene: Scene, grid: OccupancyGrid, keypoints: Sequence[Keypoint], config: PlanConfig,
         trajectory_id: Optional[str] = None) -> Trajectory:
    """Visit keypoints in seeded-random order, sweeping at each one."""
    if not keypoints:
        raise ValueError("plan needs at least one keypoint")
    order = list(keypoints)
    py_rng(config.seed, "visit_order").shuffle(order)
    routes = []
    for a, b in zip(order[:-1], order[1:]):
        routes.append(route(grid, a.position, b.position, config))

    def sweep_range(kp: Keypoint, arrival_yaw: float) -> tuple[float, float]:
        if kp.sweep_deg >= 360 or kp.facing is None:
            return arrival_yaw, math.radians(kp.sweep_deg)
        half = math.radians(kp.sweep_deg) / 2.0
        return kp.facing - half, 2.0 * half

    b = _Builder(config.fps, config.camera_height)
    first = order[0]
    yaw0 = _leg_heading(routes[0][0]) if routes else 0.0
    if config.sweeps:
        start, _ = sweep_range(first, yaw0)
        yaw0 = wrap_angle(start)
    b.emit(first.position[0], first.position[1], yaw0, IDLE)

    for i, kp in enumerate(order):
        b.marks.append(len(b.poses) - 1)
        if config.sweeps:
            start, span = sweep_range(kp, b.last.yaw)
            b.turn_to(start, config.turn_rate)
            b.rotate(span, config.sweep_rate, SWEEPING)
        if i == len(order) - 1:
            break
        curve, fallback = routes[i]
        b.turn_to(_leg_heading(curve), config.turn_rate)
        mark = len(b.poses)
        leg = b.move(curve, config)
        if leg:
            clr = obstacle_clearance(scene, np.array([p.xy for p in leg]))
            if np.any(clr < config.clearance):
                b.truncate(mark)
                b.turn_to(_leg_heading(fallback), config.turn_rate)
                b.move(fallback, config)
    if len(b.poses) < 2:
        b.emit(b.last.x, b.last.y, b.last.yaw, IDLE)
    tid = trajectory_id or f"{scene.id}-traj-{config.seed}"
    return Trajectory(id=tid, scene_id=scene.id, fps=config.fps, poses=b.poses, labels=b.labels,
                      keypoint_marks=b.marks)


def plan_scene(scene: Scene, config: PlanConfig, intrinsics: Optional[CameraIntrinsics] = None,
               grid: Optional[OccupancyGrid] = None) -> tuple[Trajectory, OccupancyGrid, list[Keypoint]]:
    """sample -> select -> plan, the whole stage in one call."""
    intrinsics = intrinsics or CameraIntrinsics()
    grid = grid or planning_grid(scene, config)
    cands = sample_keypoints(scene, grid, config)
    if not cands:
        raise NoPath("scene has no reachable keypoint")
    chosen = select_keypoints(cands, grid, intrinsics, config)
    return plan(scene, grid, chosen, config), grid, chosen
