"""Traversability layers and footprint plane geometry."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from ._kernels import DISK_SLACK
from .elevation_grid import ElevationGrid
from .errors import DegenerateFit, InsufficientSupport, InvalidArgument

# Calibrated at eps=0.05 m so the 0.59 rad course ramp and 8 cm bricks block
# while the 0.12 rad ramp and straight 5 cm pit edges stay traversable.  Pit
# corners, where both axes step, still block.
DEFAULT_DELTA = 2
DEFAULT_LAMBDA = 4.0


@dataclass(frozen=True)
class TraversabilityConfig:
    delta: int = DEFAULT_DELTA
    lam: float = DEFAULT_LAMBDA
    threshold: float = 0.5
    inflation_radius: float = 0.0
    unknown_is_blocked: bool = True

    def __post_init__(self):
        if int(self.delta) != self.delta or self.delta < 1:
            raise InvalidArgument(f"delta must be a positive integer, got {self.delta}")
        if not self.lam > 0:
            raise InvalidArgument(f"lambda must be positive, got {self.lam}")
        if not 0 < self.threshold < 1:
            raise InvalidArgument(f"threshold must lie in (0, 1), got {self.threshold}")
        if self.inflation_radius < 0:
            raise InvalidArgument("inflation radius must be non-negative")


@dataclass
class TraversabilityGrid:
    origin_xy: tuple
    resolution: float
    probability: np.ndarray
    blocked_mask: np.ndarray
    inflated_mask: np.ndarray
    distance_field: np.ndarray
    source_version: int = field(default=-1)

    def distance_cap(self):
        rows, cols = self.probability.shape
        return math.hypot(rows, cols) * self.resolution


@dataclass(frozen=True)
class PlaneFit:
    """Plane ``z = a x + b y + c``."""

    a: float
    b: float
    c: float
    point_count: int

    def __call__(self, x, y):
        return self.a * x + self.b * y + self.c


# ---------------------------------------------------------------------------
# Traversability
# ---------------------------------------------------------------------------

def _slope_terms(z_center, z_minus, z_plus, known_center, known_minus, known_plus, unknown_is_blocked):
    """Return (|dz| over the stencil, any-unknown flag) for one axis."""
    any_unknown = ~(known_center & known_minus & known_plus)
    if unknown_is_blocked:
        return np.abs(np.nan_to_num(z_plus - z_minus)), any_unknown
    zm = np.where(known_minus, z_minus, z_center)
    zp = np.where(known_plus, z_plus, z_center)
    diff = np.abs(zp - zm)
    return np.where(np.isnan(diff), 0.0, diff), any_unknown


def traversability_layer(grid: ElevationGrid, config: TraversabilityConfig) -> np.ndarray:
    """p = exp(-lambda * S) for every cell, with the stencil clamped to the grid.

    ``S`` averages the absolute height differences across +/-Delta cells
    along both axes, each divided by ``2 * Delta * eps``.
    """
    d = int(config.delta)
    rows, cols = grid.shape
    z, k = grid.heights, grid.known
    ii = np.arange(rows)
    jj = np.arange(cols)
    im, ip = np.clip(ii - d, 0, rows - 1), np.clip(ii + d, 0, rows - 1)
    jm, jp = np.clip(jj - d, 0, cols - 1), np.clip(jj + d, 0, cols - 1)
    span = 2 * d * grid.resolution
    dh, unk_h = _slope_terms(z, z[:, jm], z[:, jp], k, k[:, jm], k[:, jp], config.unknown_is_blocked)
    dv, unk_v = _slope_terms(z, z[im, :], z[ip, :], k, k[im, :], k[ip, :], config.unknown_is_blocked)
    s = (dh / span + dv / span) / 2
    p = np.exp(-config.lam * s)
    if config.unknown_is_blocked:
        p[unk_h | unk_v] = 0.0
    return p


def traversability_prob(grid: ElevationGrid, i: int, j: int, config: TraversabilityConfig) -> float:
    """Traversability probability of a single cell (see traversability_layer)."""
    d = int(config.delta)
    rows, cols = grid.shape

    def h(a, b):
        a = min(max(a, 0), rows - 1)
        b = min(max(b, 0), cols - 1)
        return grid.heights[a, b] if grid.known[a, b] else None

    center = h(i, j)
    pairs = [(h(i, j - d), h(i, j + d)), (h(i - d, j), h(i + d, j))]
    if config.unknown_is_blocked and (center is None or any(v is None for pr in pairs for v in pr)):
        return 0.0
    total = 0.0
    for lo, hi in pairs:
        lo = center if lo is None else lo
        hi = center if hi is None else hi
        if lo is not None and hi is not None:
            total += abs(hi - lo) / (2 * d * grid.resolution)
    return math.exp(-config.lam * total / 2)


def distance_to_mask(mask: np.ndarray, resolution: float) -> np.ndarray:
    """Exact Euclidean distance (m) from each cell centre to the nearest True cell.

    Zero on the mask; when the mask is empty every cell gets the grid
    diagonal as a finite stand-in for infinity.
    """
    if not np.any(mask):
        return np.full(mask.shape, math.hypot(*mask.shape) * resolution)
    return ndimage.distance_transform_edt(~mask) * resolution


def inflate(mask: np.ndarray, radius: float, resolution: float) -> np.ndarray:
    """Cells whose centre lies within ``radius`` of a masked cell centre."""
    if radius <= 0 or not np.any(mask):
        return mask.copy()
    # half-ulp slack so cells exactly at the radius are included
    return distance_to_mask(mask, resolution) <= radius * (1 + 1e-12)


def build_traversability(grid: ElevationGrid, config: TraversabilityConfig) -> TraversabilityGrid:
    p = traversability_layer(grid, config)
    blocked = p <= config.threshold
    if config.unknown_is_blocked:
        blocked |= ~grid.known
    inflated = inflate(blocked, config.inflation_radius, grid.resolution)
    return TraversabilityGrid(
        origin_xy=tuple(grid.origin_xy),
        resolution=grid.resolution,
        probability=p,
        blocked_mask=blocked,
        inflated_mask=inflated,
        distance_field=distance_to_mask(inflated, grid.resolution),
        source_version=grid.version,
    )


def export_traversability(trav: TraversabilityGrid, stem):
    """Write ``<stem>.pgm`` (probability x 255) and ``<stem>_blocked.csv`` /
    ``<stem>_inflated.csv`` masks (rows are the first grid index)."""
    stem = Path(stem)
    img = np.clip(np.rint(trav.probability * 255), 0, 255).astype(np.uint8)
    rows, cols = img.shape
    with open(stem.with_suffix(".pgm"), "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
    np.savetxt(f"{stem}_blocked.csv", trav.blocked_mask.astype(int), fmt="%d", delimiter=",")
    np.savetxt(f"{stem}_inflated.csv", trav.inflated_mask.astype(int), fmt="%d", delimiter=",")


# ---------------------------------------------------------------------------
# Footprint geometry
# ---------------------------------------------------------------------------

def footprint_cells(grid: ElevationGrid, x: float, y: float, r: float) -> np.ndarray:
    """Known cells with centres within ``r`` of (x, y) as an (n, 3) array of
    world points.  Raises InsufficientSupport below three cells."""
    if not r > 0:
        raise InvalidArgument(f"footprint radius must be positive, got {r}")
    res = grid.resolution
    ox, oy = grid.origin_xy
    w = int(math.ceil(r / res)) + 1
    ci = math.floor((x - ox) / res + 0.5)
    cj = math.floor((y - oy) / res + 0.5)
    i0, i1 = max(ci - w, 0), min(ci + w + 1, grid.rows)
    j0, j1 = max(cj - w, 0), min(cj + w + 1, grid.cols)
    if i0 >= i1 or j0 >= j1:
        raise InsufficientSupport(f"footprint at ({x:.3f}, {y:.3f}) lies off the grid")
    ii, jj = np.meshgrid(np.arange(i0, i1), np.arange(j0, j1), indexing="ij")
    cx = ox + ii * res
    cy = oy + jj * res
    sel = ((cx - x) ** 2 + (cy - y) ** 2 <= (r * (1 + DISK_SLACK)) ** 2) & grid.known[i0:i1, j0:j1]
    pts = np.column_stack([cx[sel], cy[sel], grid.heights[i0:i1, j0:j1][sel]])
    if len(pts) < 3:
        raise InsufficientSupport(f"only {len(pts)} known cells within {r} m of ({x:.3f}, {y:.3f})")
    return pts


def fit_plane(points) -> PlaneFit:
    """Least-squares plane through points via the 3x3 normal equations.

    Coordinates are centred before assembling the system; collinear (in xy)
    inputs raise DegenerateFit.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 3:
        raise DegenerateFit(f"need at least 3 points, got {len(pts)}")
    mx, my = pts[:, 0].mean(), pts[:, 1].mean()
    A = np.column_stack([pts[:, 0] - mx, pts[:, 1] - my, np.ones(len(pts))])
    M = A.T @ A
    rhs = A.T @ pts[:, 2]
    scale = M[0, 0] * M[1, 1] * M[2, 2]
    if not scale > 0 or abs(np.linalg.det(M)) <= 1e-12 * scale:
        raise DegenerateFit("points are collinear in xy")
    sol = np.linalg.solve(M, rhs)
    if not np.allclose(M @ sol, rhs, rtol=1e-8, atol=1e-10 * (1 + np.abs(rhs).max())):
        raise DegenerateFit("normal equations are ill-conditioned")
    a, b, c_local = sol
    return PlaneFit(float(a), float(b), float(c_local - a * mx - b * my), len(pts))


def slope_angle(fit: PlaneFit) -> float:
    """Acute angle between the plane normal and vertical.

    Equal to arccos(1 / sqrt(a^2 + b^2 + 1)); evaluated as atan(|grad|),
    which stays accurate for nearly flat planes.
    """
    return math.atan(math.hypot(fit.a, fit.b))


def roughness(points, fit: PlaneFit) -> float:
    """RMS perpendicular distance from the points to the fitted plane."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise InvalidArgument("roughness needs at least one point")
    e = fit.a * pts[:, 0] + fit.b * pts[:, 1] + fit.c - pts[:, 2]
    return math.sqrt(float(np.mean(e * e)) / (fit.a ** 2 + fit.b ** 2 + 1))
