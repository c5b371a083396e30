"""Occupancy grids, 8-connected A* and lookahead waypoint selection."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from ..exceptions import NoPath
from ..sim import World

SQRT2 = math.sqrt(2.0)
_MOVES = [(-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)]


@dataclass
class OccupancyGrid:
    """``occupied[i, j]`` covers the cell whose centre is ``origin + (i + 0.5, j + 0.5) * res``
    (``i`` along x, ``j`` along y)."""

    occupied: np.ndarray
    resolution: float = 1.0
    origin: tuple[float, float] = (0.0, 0.0)

    @property
    def shape(self):
        return self.occupied.shape

    def cell_center(self, cell) -> tuple[float, float]:
        i, j = cell
        return (self.origin[0] + (i + 0.5) * self.resolution,
                self.origin[1] + (j + 0.5) * self.resolution)

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        i = int(math.floor((x - self.origin[0]) / self.resolution))
        j = int(math.floor((y - self.origin[1]) / self.resolution))
        nx, ny = self.shape
        return min(max(i, 0), nx - 1), min(max(j, 0), ny - 1)

    def free(self, cell) -> bool:
        i, j = cell
        nx, ny = self.shape
        return 0 <= i < nx and 0 <= j < ny and not self.occupied[i, j]

    @classmethod
    def from_world(cls, world: World, resolution: float = 0.1, inflation: float = 0.0):
        """Rasterize ``world``; a cell is occupied when its centre is within
        ``inflation`` of an obstacle or wall."""
        xmin, ymin, xmax, ymax = world.bounds
        nx = max(int(math.ceil((xmax - xmin) / resolution)), 1)
        ny = max(int(math.ceil((ymax - ymin) / resolution)), 1)
        xs = xmin + (np.arange(nx) + 0.5) * resolution
        ys = ymin + (np.arange(ny) + 0.5) * resolution
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        clear = np.minimum.reduce([gx - xmin, xmax - gx, gy - ymin, ymax - gy])
        for o in world.obstacles:
            if hasattr(o, "r"):
                d = np.hypot(gx - o.x, gy - o.y) - o.r
            else:
                dx = np.maximum.reduce([o.xmin - gx, np.zeros_like(gx), gx - o.xmax])
                dy = np.maximum.reduce([o.ymin - gy, np.zeros_like(gy), gy - o.ymax])
                d = np.hypot(dx, dy)
            clear = np.minimum(clear, d)
        return cls(clear < inflation, resolution, (xmin, ymin))


def neighbors(grid: OccupancyGrid, cell):
    """8-connected moves; a diagonal needs both orthogonal side cells free."""
    i, j = cell
    for di, dj in _MOVES:
        nb = (i + di, j + dj)
        if not grid.free(nb):
            continue
        if di and dj and not (grid.free((i + di, j)) and grid.free((i, j + dj))):
            continue
        yield nb, (SQRT2 if di and dj else 1.0)


def path_cost(path, resolution: float = 1.0) -> float:
    n_diag = sum(1 for a, b in zip(path, path[1:]) if a[0] != b[0] and a[1] != b[1])
    return resolution * ((len(path) - 1 - n_diag) + SQRT2 * n_diag)


def astar_plan(grid: OccupancyGrid, start, goal) -> list[tuple[int, int]]:
    """Optimal 8-connected path (in cells) with the Euclidean heuristic."""
    start, goal = tuple(start), tuple(goal)
    if not grid.free(start) or not grid.free(goal):
        raise NoPath("start or goal cell is occupied")

    def h(c):
        return math.hypot(c[0] - goal[0], c[1] - goal[1])

    g = {start: 0.0}
    parent = {start: None}
    tie = 0
    heap = [(h(start), 0, start)]
    closed = set()
    while heap:
        _, _, cur = heapq.heappop(heap)
        if cur in closed:
            continue
        if cur == goal:
            path = [cur]
            while parent[path[-1]] is not None:
                path.append(parent[path[-1]])
            return path[::-1]
        closed.add(cur)
        for nb, step in neighbors(grid, cur):
            cand = g[cur] + step
            if cand < g.get(nb, math.inf):
                g[nb] = cand
                parent[nb] = cur
                tie += 1
                heapq.heappush(heap, (cand + h(nb), tie, nb))
    raise NoPath(f"goal {goal} unreachable from {start}")


def nearest_free(grid: OccupancyGrid, cell, max_radius: int = 3):
    """``cell`` itself or the closest free cell within ``max_radius`` rings."""
    if grid.free(cell):
        return tuple(cell)
    best = None
    for di in range(-max_radius, max_radius + 1):
        for dj in range(-max_radius, max_radius + 1):
            nb = (cell[0] + di, cell[1] + dj)
            if grid.free(nb):
                key = (di * di + dj * dj, nb)
                best = key if best is None or key < best else best
    if best is None:
        raise NoPath(f"no free cell near {tuple(cell)}")
    return best[1]


def plan_route(world: World, start_xy, goal_xy, resolution: float = 0.1,
               inflation: float = 0.0) -> np.ndarray:
    """Metric polyline from ``start_xy`` to ``goal_xy`` through the A* cells.

    Endpoints whose cell falls inside the inflated region (the robot may sit
    closer than half a cell to it) snap to the nearest free cell.
    """
    grid = OccupancyGrid.from_world(world, resolution, inflation)
    cells = astar_plan(grid, nearest_free(grid, grid.cell_of(*start_xy)),
                       nearest_free(grid, grid.cell_of(*goal_xy)))
    pts = [grid.cell_center(c) for c in cells]
    pts[0] = tuple(start_xy)
    pts[-1] = tuple(goal_xy)
    if len(pts) == 1:
        pts.append(tuple(goal_xy))
    return np.asarray(pts, dtype=float)


def polyline_length(points) -> float:
    p = np.asarray(points, dtype=float)
    if len(p) < 2:
        return 0.0
    return float(np.hypot(*np.diff(p, axis=0).T).sum())


def densify(points, spacing: float) -> np.ndarray:
    """Resample a polyline at (at most) ``spacing`` metre intervals."""
    p = np.asarray(points, dtype=float)
    out = [p[0]]
    for a, b in zip(p[:-1], p[1:]):
        n = max(int(math.ceil(np.hypot(*(b - a)) / spacing)), 1)
        for k in range(1, n + 1):
            out.append(a + (b - a) * k / n)
    return np.asarray(out)


def select_waypoint(path, pose, lookahead: float, start_index: int = 0):
    """Farthest path point within ``lookahead`` of the robot.

    The search starts at the path point nearest the robot at or after
    ``start_index`` so progress along the path never goes backwards.
    Returns ``(waypoint, index)``; the final point once it is in range.
    """
    p = np.asarray(path, dtype=float)
    if len(p) == 0:
        raise ValueError("empty path")
    start_index = min(max(int(start_index), 0), len(p) - 1)
    d = np.hypot(p[:, 0] - pose[0], p[:, 1] - pose[1])
    if d[-1] <= lookahead:
        return (float(p[-1, 0]), float(p[-1, 1])), len(p) - 1
    idx = start_index + int(np.argmin(d[start_index:]))
    while idx + 1 < len(p) and d[idx + 1] <= lookahead:
        idx += 1
    return (float(p[idx, 0]), float(p[idx, 1])), idx
