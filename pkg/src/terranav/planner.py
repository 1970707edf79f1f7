"""Global planning on a binary mask: Theta* (any-angle) and 8-connected A*.

Both searches run over cell centres.  A diagonal move is legal only when
both orthogonally adjacent cells are free, which is exactly the condition
under which the closed-square line-of-sight test accepts it, so every A*
path is also a valid Theta* path.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from . import _kernels
from .errors import InvalidEndpoint, Unreachable

SQRT2 = math.sqrt(2.0)


@dataclass
class GridPath:
    waypoints: np.ndarray

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=float).reshape(-1, 2)

    @property
    def length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)))

    def __len__(self):
        return len(self.waypoints)

    def to_csv(self, path):
        np.savetxt(path, self.waypoints, delimiter=",", header="x,y", comments="", fmt="%.6f")


def _to_cell(p, origin_xy, resolution):
    return (p[0] - origin_xy[0]) / resolution, (p[1] - origin_xy[1]) / resolution


def line_of_sight(mask, p1, p2, origin_xy=(0.0, 0.0), resolution=1.0) -> bool:
    """True when no blocked cell touches the segment p1-p2 (world coords)."""
    x0, y0 = _to_cell(p1, origin_xy, resolution)
    x1, y1 = _to_cell(p2, origin_xy, resolution)
    return bool(_kernels.line_of_sight(np.asarray(mask, dtype=np.bool_), x0, y0, x1, y1))


@njit(cache=True)
def _search(blocked, si, sj, gi, gj, any_angle):
    rows, cols = blocked.shape
    g = np.full((rows, cols), np.inf)
    pi = np.full((rows, cols), -1, dtype=np.int64)
    pj = np.full((rows, cols), -1, dtype=np.int64)
    closed = np.zeros((rows, cols), dtype=np.bool_)
    di = np.array([-1, -1, -1, 0, 0, 1, 1, 1])
    dj = np.array([-1, 0, 1, -1, 1, -1, 0, 1])
    sq2 = math.sqrt(2.0)

    def heur(i, j):
        ax = abs(i - gi)
        ay = abs(j - gj)
        if any_angle:
            return math.sqrt(ax * ax + ay * ay)
        return max(ax, ay) + (sq2 - 1.0) * min(ax, ay)

    g[si, sj] = 0.0
    pi[si, sj] = si
    pj[si, sj] = sj
    heap = [(heur(si, sj), -0.0, si, sj)]
    while len(heap) > 0:
        f, neg_g, i, j = heapq.heappop(heap)
        if closed[i, j] or -neg_g > g[i, j]:
            continue
        closed[i, j] = True
        if i == gi and j == gj:
            return g, pi, pj, True
        for k in range(8):
            ni = i + di[k]
            nj = j + dj[k]
            if ni < 0 or nj < 0 or ni >= rows or nj >= cols:
                continue
            if blocked[ni, nj] or closed[ni, nj]:
                continue
            diag = di[k] != 0 and dj[k] != 0
            if diag and (blocked[i, nj] or blocked[ni, j]):
                continue
            step = sq2 if diag else 1.0
            ppi = pi[i, j]
            ppj = pj[i, j]
            if any_angle and (ppi != i or ppj != j) and _kernels.line_of_sight(
                    blocked, float(ppi), float(ppj), float(ni), float(nj)):
                cand = g[ppi, ppj] + math.sqrt((ni - ppi) ** 2 + (nj - ppj) ** 2)
                par_i, par_j = ppi, ppj
            else:
                cand = g[i, j] + step
                par_i, par_j = i, j
            if cand < g[ni, nj]:
                g[ni, nj] = cand
                pi[ni, nj] = par_i
                pj[ni, nj] = par_j
                heapq.heappush(heap, (cand + heur(ni, nj), -cand, ni, nj))
    return g, pi, pj, False


def _plan(mask, start, goal, origin_xy, resolution, any_angle) -> GridPath:
    blocked = np.ascontiguousarray(mask, dtype=np.bool_)
    rows, cols = blocked.shape
    cells = []
    for name, p in (("start", start), ("goal", goal)):
        fx, fy = _to_cell(p, origin_xy, resolution)
        i, j = math.floor(fx + 0.5), math.floor(fy + 0.5)
        if not (0 <= i < rows and 0 <= j < cols):
            raise InvalidEndpoint(f"{name} {tuple(p)} is outside the map")
        if blocked[i, j]:
            raise InvalidEndpoint(f"{name} {tuple(p)} lies on a blocked cell")
        cells.append((i, j))
    (si, sj), (gi, gj) = cells
    g, pi, pj, found = _search(blocked, si, sj, gi, gj, any_angle)
    if not found:
        raise Unreachable(f"no path from {tuple(start)} to {tuple(goal)}")
    chain = [(gi, gj)]
    while chain[-1] != (si, sj):
        i, j = chain[-1]
        chain.append((int(pi[i, j]), int(pj[i, j])))
    chain.reverse()
    ox, oy = origin_xy
    pts = [(ox + i * resolution, oy + j * resolution) for i, j in chain]
    # Swap the snapped end cells for the exact endpoints when visibility allows.
    if len(pts) == 1:
        pts = [tuple(start), tuple(goal)] if tuple(start) != tuple(goal) else [tuple(start)]
    else:
        if line_of_sight(blocked, start, pts[1], origin_xy, resolution):
            pts[0] = tuple(start)
        else:
            pts.insert(0, tuple(start))
        if line_of_sight(blocked, pts[-2], goal, origin_xy, resolution):
            pts[-1] = tuple(goal)
        else:
            pts.append(tuple(goal))
    return GridPath(np.array(pts, dtype=float))


def plan_theta_star(mask, start, goal, origin_xy=(0.0, 0.0), resolution=1.0) -> GridPath:
    """Basic Theta* with Euclidean heuristic; ties prefer larger g, then the
    lexicographically smaller cell."""
    return _plan(mask, start, goal, origin_xy, resolution, True)


def plan_a_star(mask, start, goal, origin_xy=(0.0, 0.0), resolution=1.0) -> GridPath:
    """8-connected A* with the octile heuristic."""
    return _plan(mask, start, goal, origin_xy, resolution, False)


def polyline_length(points) -> float:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))
