"""Online elevation mapping: per-cell Kalman height fusion and footprint fill."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._kernels import DISK_SLACK
from .elevation_grid import ElevationGrid
from .errors import GridFormatError, InvalidArgument, UnsupportedFormat, UnsupportedVersion

PCLD_MAGIC = b"PCLD"
PCLD_VERSION = 1
FILL_VARIANCE = 0.02
INIT_FILL_RADIUS = 0.4
FILL_RADIUS = 0.25


def rotation_matrix(roll, pitch, yaw):
    """Body-to-world rotation Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


@dataclass
class PointCloud:
    """Points in the sensor frame (x forward, y left, z up) plus the sensor
    pose ``(x, y, z, roll, pitch, yaw)`` in the world frame."""

    points: np.ndarray
    sensor_pose: tuple

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if len(self.sensor_pose) != 6 or not all(math.isfinite(v) for v in self.sensor_pose):
            raise InvalidArgument(f"sensor pose must be 6 finite values, got {self.sensor_pose}")

    def __len__(self):
        return len(self.points)

    def world_points(self):
        x, y, z, roll, pitch, yaw = self.sensor_pose
        return self.points @ rotation_matrix(roll, pitch, yaw).T + np.array([x, y, z])


@dataclass(frozen=True)
class MeasurementModel:
    base_variance: float = 1e-4
    range_coefficient: float = 1e-4

    def __post_init__(self):
        if not self.base_variance > 0 or self.range_coefficient < 0:
            raise InvalidArgument("base_variance must be > 0 and range_coefficient >= 0")

    def variance(self, ranges):
        return self.base_variance + self.range_coefficient * np.asarray(ranges)


@dataclass
class IntegrationStats:
    points_used: int = 0
    nonfinite_skipped: int = 0
    out_of_bounds: int = 0
    outliers: int = 0
    cells_updated: int = 0


def kalman_update(z, var, z_m, var_m):
    """Scalar Kalman fusion of a prior (z, var) with a measurement."""
    s = var + var_m
    return (var_m * z + var * z_m) / s, var * var_m / s


def integrate_cloud(grid: ElevationGrid, cloud: PointCloud, model: MeasurementModel,
                    outlier_sigma: float = 3.0) -> IntegrationStats:
    """Fuse a point cloud into ``grid`` in place.

    Points sharing a cell are pre-fused by inverse-variance weighting, then
    each touched cell gets one Kalman step; unknown cells adopt the fused
    measurement.  Points more than ``outlier_sigma`` standard deviations
    below a known cell are discarded.
    """
    stats = IntegrationStats()
    pts = cloud.points
    finite = np.all(np.isfinite(pts), axis=1)
    stats.nonfinite_skipped = int(np.count_nonzero(~finite))
    pts = pts[finite]
    if len(pts) == 0:
        return stats
    ranges = np.linalg.norm(pts, axis=1)
    world = cloud.world_points()[finite]
    var_pt = model.variance(ranges)

    i, j = grid.world_to_cells(world[:, 0], world[:, 1])
    inb = i >= 0
    stats.out_of_bounds = int(np.count_nonzero(~inb))
    i, j, z, var_pt = i[inb], j[inb], world[inb, 2], var_pt[inb]
    if len(z) == 0:
        return stats

    prior_known = grid.known[i, j]
    prior_z = grid.heights[i, j]
    prior_sd = np.sqrt(np.where(prior_known, grid.variance[i, j], 0.0) + var_pt)
    outlier = prior_known & (z < prior_z - outlier_sigma * prior_sd)
    stats.outliers = int(np.count_nonzero(outlier))
    keep = ~outlier
    i, j, z, var_pt = i[keep], j[keep], z[keep], var_pt[keep]
    stats.points_used = len(z)
    if len(z) == 0:
        return stats

    flat = i * grid.cols + j
    cells, inverse = np.unique(flat, return_inverse=True)
    w = 1.0 / var_pt
    wsum = np.bincount(inverse, weights=w)
    z_m = np.bincount(inverse, weights=w * z) / wsum
    var_m = 1.0 / wsum

    ci, cj = np.divmod(cells, grid.cols)
    was_known = grid.known[ci, cj]
    new_z, new_var = z_m.copy(), var_m.copy()
    if np.any(was_known):
        kz, kv = kalman_update(grid.heights[ci, cj][was_known], grid.variance[ci, cj][was_known],
                               z_m[was_known], var_m[was_known])
        new_z[was_known] = kz
        new_var[was_known] = kv
    grid.heights[ci, cj] = new_z
    grid.variance[ci, cj] = new_var
    grid.known[ci, cj] = True
    grid.version += 1
    stats.cells_updated = len(cells)
    return stats


def fill_footprint(grid: ElevationGrid, robot_pose, radius: float, clearance: float = 0.0,
                   fill_variance: float = FILL_VARIANCE) -> int:
    """Seed unknown cells under the robot with its base-plane height.

    ``robot_pose`` is ``(x, y, z, roll, pitch, yaw)``; the base plane passes
    through ``z - clearance`` with the robot's attitude.  Known cells are
    never touched.  Returns the number of cells filled.
    """
    if not radius > 0:
        raise InvalidArgument(f"fill radius must be positive, got {radius}")
    x, y, z, roll, pitch, yaw = robot_pose
    res = grid.resolution
    ox, oy = grid.origin_xy
    w = int(math.ceil(radius / res)) + 1
    ci = math.floor((x - ox) / res + 0.5)
    cj = math.floor((y - oy) / res + 0.5)
    i0, i1 = max(ci - w, 0), min(ci + w + 1, grid.rows)
    j0, j1 = max(cj - w, 0), min(cj + w + 1, grid.cols)
    if i0 >= i1 or j0 >= j1:
        return 0
    ii, jj = np.meshgrid(np.arange(i0, i1), np.arange(j0, j1), indexing="ij")
    dx = ox + ii * res - x
    dy = oy + jj * res - y
    r2 = (radius * (1 + DISK_SLACK)) ** 2
    target = (dx * dx + dy * dy <= r2) & ~grid.known[i0:i1, j0:j1]
    if not np.any(target):
        return 0
    n = rotation_matrix(roll, pitch, yaw)[:, 2]
    plane_z = (z - clearance) - (n[0] * dx + n[1] * dy) / n[2]
    sub_h = grid.heights[i0:i1, j0:j1]
    sub_v = grid.variance[i0:i1, j0:j1]
    sub_k = grid.known[i0:i1, j0:j1]
    sub_h[target] = plane_z[target]
    sub_v[target] = fill_variance
    sub_k[target] = True
    grid.version += 1
    return int(np.count_nonzero(target))


def save_cloud(cloud: PointCloud, path):
    """PCLD v1: magic, u16 version, u32 N, N x (f32 x, y, z), 6 x f64 pose."""
    pts = np.ascontiguousarray(cloud.points, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sHI", PCLD_MAGIC, PCLD_VERSION, len(pts)))
        fh.write(pts.tobytes())
        fh.write(struct.pack("<6d", *cloud.sensor_pose))


def load_cloud(path) -> PointCloud:
    data = Path(path).read_bytes()
    if data[:4] != PCLD_MAGIC:
        raise UnsupportedFormat(f"{path}: not a PCLD file")
    if len(data) < 10:
        raise GridFormatError("truncated header", len(data))
    version, n = struct.unpack_from("<HI", data, 4)
    if version != PCLD_VERSION:
        raise UnsupportedVersion(f"{path}: PCLD version {version}")
    need = 10 + 12 * n + 48
    if len(data) != need:
        raise GridFormatError(f"expected {need} bytes for {n} points, got {len(data)}",
                              min(len(data), need))
    pts = np.frombuffer(data, dtype="<f4", count=3 * n, offset=10).reshape(n, 3)
    pose = struct.unpack_from("<6d", data, 10 + 12 * n)
    return PointCloud(pts.astype(np.float64), pose)
