"""Occupancy rasterization, keypoint geometry, A* routing and B-spline smoothing.

The occupancy grid stands in for a navigation mesh: a cell is BLOCKED when
its center lies within ``clearance`` of an obstacle footprint or outside
every room.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.interpolate import BSpline

from .errors import GeometryError, NoPath
from .scene import Point2, Room, Scene, points_in_polygon, polygon_centroid, signed_area

SQRT2 = math.sqrt(2.0)
Cell = tuple[int, int]

# (dx, dy) in cell units; cardinal moves first
_MOVES = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1))


@dataclass(frozen=True)
class OccupancyGrid:
    origin: Point2
    cell_size: float
    width: int
    height: int
    blocked: np.ndarray  # (height, width) bool, row index = y
    clearance: float = 0.0

    def index(self, cell: Cell) -> int:
        return cell[1] * self.width + cell[0]

    def cell_of_index(self, idx: int) -> Cell:
        return (idx % self.width, idx // self.width)

    def center(self, cell: Cell) -> Point2:
        return (self.origin[0] + (cell[0] + 0.5) * self.cell_size,
                self.origin[1] + (cell[1] + 0.5) * self.cell_size)

    def cell_at(self, p: Point2) -> Cell:
        return (int(math.floor((p[0] - self.origin[0]) / self.cell_size)),
                int(math.floor((p[1] - self.origin[1]) / self.cell_size)))

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def is_free(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and not self.blocked[cell[1], cell[0]]

    def point_free(self, p: Point2) -> bool:
        return self.is_free(self.cell_at(p))

    def points_free(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        ix = np.floor((pts[:, 0] - self.origin[0]) / self.cell_size).astype(int)
        iy = np.floor((pts[:, 1] - self.origin[1]) / self.cell_size).astype(int)
        ok = (ix >= 0) & (ix < self.width) & (iy >= 0) & (iy < self.height)
        out = np.zeros(len(pts), dtype=bool)
        out[ok] = ~self.blocked[iy[ok], ix[ok]]
        return out

    def cell_centers(self) -> np.ndarray:
        """(height, width, 2) array of cell-center coordinates."""
        xs = self.origin[0] + (np.arange(self.width) + 0.5) * self.cell_size
        ys = self.origin[1] + (np.arange(self.height) + 0.5) * self.cell_size
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx, gy], axis=-1)

    @property
    def free_count(self) -> int:
        return int((~self.blocked).sum())

    def components(self) -> np.ndarray:
        """4-connected labels of free cells (0 = blocked).

        With corner cutting forbidden, 4-connectivity is exactly 8-move reachability.
        """
        labels, _ = ndimage.label(~self.blocked)
        return labels

    def to_pgm(self) -> bytes:
        """Binary PGM (P5): BLOCKED=0, FREE=255, top row = max y."""
        img = np.where(self.blocked, 0, 255).astype(np.uint8)[::-1]
        head = f"P5\n{self.width} {self.height}\n255\n".encode("ascii")
        return head + img.tobytes()


def box_footprint_distance(centers: np.ndarray, box) -> np.ndarray:
    """Distance from (..., 2) points to an oriented box footprint (0 inside)."""
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    dx = centers[..., 0] - box.center[0]
    dy = centers[..., 1] - box.center[1]
    lx = c * dx + s * dy
    ly = -s * dx + c * dy
    ex = np.maximum(np.abs(lx) - box.half_extents[0], 0.0)
    ey = np.maximum(np.abs(ly) - box.half_extents[1], 0.0)
    return np.hypot(ex, ey)


def rasterize(scene: Scene, cell_size: float = 0.05, clearance: float = 0.25) -> OccupancyGrid:
    if not cell_size > 0:
        raise GeometryError("cell_size must be positive")
    if clearance < 0:
        raise GeometryError("clearance must be non-negative")
    xmin, ymin, _, xmax, ymax, _ = scene.bounds
    width = int(math.ceil((xmax - xmin) / cell_size - 1e-9))
    height = int(math.ceil((ymax - ymin) / cell_size - 1e-9))
    grid0 = OccupancyGrid((xmin, ymin), cell_size, width, height, np.zeros((height, width), bool), clearance)
    centers = grid0.cell_centers()
    flat = centers.reshape(-1, 2)
    inside = np.zeros(len(flat), dtype=bool)
    for room in scene.rooms:
        inside |= points_in_polygon(flat, room.polygon)
    blocked = ~inside.reshape(height, width)
    for box in scene.obstacles:
        fp = box.footprint()
        lo = np.floor((fp.min(axis=0) - clearance - np.array([xmin, ymin])) / cell_size).astype(int) - 1
        hi = np.ceil((fp.max(axis=0) + clearance - np.array([xmin, ymin])) / cell_size).astype(int) + 1
        x0, y0 = max(lo[0], 0), max(lo[1], 0)
        x1, y1 = min(hi[0], width), min(hi[1], height)
        if x0 >= x1 or y0 >= y1:
            continue
        d = box_footprint_distance(centers[y0:y1, x0:x1], box)
        blocked[y0:y1, x0:x1] |= d <= clearance
    if blocked.all():
        raise GeometryError("rasterized grid has no FREE cell")
    return OccupancyGrid((xmin, ymin), cell_size, width, height, blocked, clearance)


# --------------------------------------------------------------------------
# A*


@dataclass(frozen=True)
class GridPath:
    cells: tuple[Cell, ...]
    n_straight: int
    n_diagonal: int
    cell_size: float

    @property
    def cost(self) -> float:
        return (self.n_straight + SQRT2 * self.n_diagonal) * self.cell_size


def octile(a: Cell, b: Cell) -> float:
    dx, dy = abs(a[0] - b[0]), abs(a[1] - b[1])
    return max(dx, dy) + (SQRT2 - 1.0) * min(dx, dy)


def astar(grid: OccupancyGrid, start: Cell, goal: Cell) -> GridPath:
    """Octile A* on 8-connected cells without corner cutting.

    Heap entries are ``(f, index)`` so equal-f ties expand the lower linear
    cell index first.
    """
    if not grid.is_free(start) or not grid.is_free(goal):
        raise NoPath(f"start {start} or goal {goal} is not FREE")
    W, H = grid.width, grid.height
    free = (~grid.blocked).ravel().tolist()
    s_idx, g_idx = grid.index(start), grid.index(goal)
    gx, gy = goal
    INF = math.inf
    g = {s_idx: 0.0}
    parent = {s_idx: -1}
    closed = set()
    heap = [(octile(start, goal), s_idx)]
    while heap:
        _, cur = heapq.heappop(heap)
        if cur in closed:
            continue
        if cur == g_idx:
            break
        closed.add(cur)
        cx, cy = cur % W, cur // W
        gc = g[cur]
        for dx, dy in _MOVES:
            nx, ny = cx + dx, cy + dy
            if not (0 <= nx < W and 0 <= ny < H):
                continue
            nidx = ny * W + nx
            if not free[nidx] or nidx in closed:
                continue
            if dx and dy:
                if not (free[cy * W + nx] and free[ny * W + cx]):
                    continue
                step = SQRT2
            else:
                step = 1.0
            ng = gc + step
            if ng < g.get(nidx, INF):
                g[nidx] = ng
                parent[nidx] = cur
                ddx, ddy = abs(nx - gx), abs(ny - gy)
                h = (ddx + ddy) + (SQRT2 - 2.0) * min(ddx, ddy)
                heapq.heappush(heap, (ng + h, nidx))
    if g_idx not in parent:
        raise NoPath(f"no path from {start} to {goal}")
    cells = []
    cur = g_idx
    while cur != -1:
        cells.append((cur % W, cur // W))
        cur = parent[cur]
    cells.reverse()
    n_diag = sum(1 for a, b in zip(cells, cells[1:]) if a[0] != b[0] and a[1] != b[1])
    return GridPath(tuple(cells), len(cells) - 1 - n_diag, n_diag, grid.cell_size)


# --------------------------------------------------------------------------
# maximum inscribed circle (pole of inaccessibility)


def _signed_boundary_distance(p: np.ndarray, poly: np.ndarray) -> float:
    a = poly
    b = np.roll(poly, -1, axis=0)
    e = b - a
    t = np.clip(np.einsum("ij,ij->i", p - a, e) / np.einsum("ij,ij->i", e, e), 0.0, 1.0)
    d = np.min(np.hypot(*(a + e * t[:, None] - p).T))
    inside = points_in_polygon(p[None, :], poly, eps=0.0)[0]
    return d if inside else -d


def max_inscribed_circle(polygon: Sequence[Point2], tol: float = 0.01) -> tuple[Point2, float]:
    """Quadtree pole-of-inaccessibility search.

    Returns the center and radius; the radius is within ``tol`` of the true
    maximum. Among evaluated centers within ``tol/2`` of the best, the one
    nearest the polygon centroid wins.
    """
    if len(polygon) < 3 or abs(signed_area(polygon)) < 1e-12:
        raise GeometryError("degenerate polygon")
    if not tol > 0:
        raise ValueError("tol must be positive")
    poly = np.asarray(polygon, dtype=float)
    lo, hi = poly.min(axis=0), poly.max(axis=0)
    size = float(min(hi - lo))
    if size <= 0:
        raise GeometryError("degenerate polygon")
    precision = tol / 2.0
    evaluated: list[tuple[float, float, float]] = []

    def evaluate(x, y):
        d = _signed_boundary_distance(np.array([x, y]), poly)
        evaluated.append((d, x, y))
        return d

    centroid = polygon_centroid(polygon)
    best = evaluate(*centroid)
    heap = []
    h = size / 2.0
    x = lo[0]
    while x < hi[0]:
        y = lo[1]
        while y < hi[1]:
            cx, cy = x + h, y + h
            d = evaluate(cx, cy)
            heapq.heappush(heap, (-(d + h * SQRT2), d, cx, cy, h))
            best = max(best, d)
            y += size
        x += size
    while heap:
        neg_pot, d, cx, cy, h = heapq.heappop(heap)
        if -neg_pot - best <= precision:
            break
        h2 = h / 2.0
        for ox in (-h2, h2):
            for oy in (-h2, h2):
                nd = evaluate(cx + ox, cy + oy)
                best = max(best, nd)
                if nd + h2 * SQRT2 - best > precision:
                    heapq.heappush(heap, (-(nd + h2 * SQRT2), nd, cx + ox, cy + oy, h2))
    near = [e for e in evaluated if e[0] >= best - precision]
    d, x, y = min(near, key=lambda e: ((e[1] - centroid[0]) ** 2 + (e[2] - centroid[1]) ** 2, -e[0]))
    return (float(x), float(y)), float(d)


# --------------------------------------------------------------------------
# corners


def corner_keypoints(room: Room, inset: float) -> list[tuple[Point2, float]]:
    """Interior points near each convex corner, clearing both walls by ``inset``.

    Returns ``(point, bisector_heading)`` pairs; reflex and straight corners
    are skipped.
    """
    if not inset > 0:
        raise ValueError("inset must be positive")
    poly = room.polygon
    n = len(poly)
    out = []
    for i in range(n):
        p = np.asarray(poly[i], float)
        prev = np.asarray(poly[i - 1], float)
        nxt = np.asarray(poly[(i + 1) % n], float)
        u_in = (prev - p) / np.hypot(*(prev - p))
        u_out = (nxt - p) / np.hypot(*(nxt - p))
        e0, e1 = p - prev, nxt - p
        cross = e0[0] * e1[1] - e0[1] * e1[0]
        if cross <= 1e-12 * np.hypot(*e0) * np.hypot(*e1):
            continue
        theta = math.acos(float(np.clip(u_in @ u_out, -1.0, 1.0)))
        bis = u_in + u_out
        bis /= np.hypot(*bis)
        s = inset / math.sin(theta / 2.0)
        q = p + s * bis
        out.append(((float(q[0]), float(q[1])), math.atan2(bis[1], bis[0])))
    return out


# --------------------------------------------------------------------------
# smoothing


def bspline_smooth(waypoints: Sequence[Point2], samples_per_segment: int = 8) -> np.ndarray:
    """Dense samples of the clamped B-spline whose control polygon is ``waypoints``.

    Degree 3, or ``n - 1`` for fewer than four points; passes through the
    first and last waypoint.
    """
    ctrl = np.asarray(waypoints, dtype=float)
    n = len(ctrl)
    if n < 2:
        raise ValueError("need at least two waypoints")
    k = min(3, n - 1)
    inner = np.linspace(0.0, 1.0, n - k + 1)
    knots = np.concatenate([np.zeros(k), inner, np.ones(k)])
    spline = BSpline(knots, ctrl, k)
    m = max(2, samples_per_segment * (n - 1) + 1)
    u = np.linspace(0.0, 1.0, m)
    pts = spline(u)
    pts[0], pts[-1] = ctrl[0], ctrl[-1]
    return pts


def segment_free(grid: OccupancyGrid, a: Point2, b: Point2, step_frac: float = 0.1) -> bool:
    """True when points sampled along ``a-b`` every ``step_frac`` cells are all FREE."""
    L = math.dist(a, b)
    n = max(2, int(math.ceil(L / (grid.cell_size * step_frac))) + 1)
    t = np.linspace(0.0, 1.0, n)[:, None]
    pts = np.asarray(a) * (1 - t) + np.asarray(b) * t
    return bool(grid.points_free(pts).all())


def polyline_free(grid: OccupancyGrid, pts: np.ndarray, step_frac: float = 0.1) -> bool:
    return all(segment_free(grid, tuple(p), tuple(q), step_frac) for p, q in zip(pts[:-1], pts[1:]))


def prune_path(grid: OccupancyGrid, pts: Sequence[Point2]) -> list[Point2]:
    """Greedy line-of-sight shortcutting ("string pulling")."""
    pts = [tuple(p) for p in pts]
    if len(pts) <= 2:
        return pts
    out = [pts[0]]
    i = 0
    while i < len(pts) - 1:
        j = len(pts) - 1
        while j > i + 1 and not segment_free(grid, pts[i], pts[j]):
            j -= 1
        out.append(pts[j])
        i = j
    return out


def nearest_free_cell(grid: OccupancyGrid, p: Point2, mask: Optional[np.ndarray] = None) -> Optional[Cell]:
    """Free cell whose center is nearest ``p`` (restricted to ``mask`` when given)."""
    ok = ~grid.blocked if mask is None else (mask & ~grid.blocked)
    ys, xs = np.nonzero(ok)
    if len(xs) == 0:
        return None
    cx = grid.origin[0] + (xs + 0.5) * grid.cell_size
    cy = grid.origin[1] + (ys + 0.5) * grid.cell_size
    d2 = (cx - p[0]) ** 2 + (cy - p[1]) ** 2
    k = int(np.argmin(d2))
    return (int(xs[k]), int(ys[k]))
