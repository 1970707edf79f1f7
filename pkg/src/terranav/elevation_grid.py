"""2.5D height field, procedural experiment maps and grid file I/O."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import _kernels
from .errors import GridFormatError, InvalidArgument, UnsupportedFormat, UnsupportedVersion

EGRD_MAGIC = b"EGRD"
EGRD_VERSION = 1
_EGRD_HEADER = struct.Struct("<4sHdddII")
_EGRD_RECORD = np.dtype([("height", "<f4"), ("variance", "<f4"), ("known", "u1")])

DEFAULT_RESOLUTION = 0.05


@dataclass(frozen=True)
class CellData:
    height: float
    variance: float
    known: bool


@dataclass(eq=False)
class ElevationGrid:
    """Row-major height field; ``heights[i, j]`` is the cell centred at
    ``origin_xy + (i, j) * resolution`` (``i`` along x, ``j`` along y).

    Unknown cells keep NaN in ``heights``/``variance`` so they can never leak
    into arithmetic.  ``version`` is bumped by every in-place update and is
    what downstream caches key on.
    """

    origin_xy: tuple
    resolution: float
    heights: np.ndarray
    variance: np.ndarray
    known: np.ndarray
    version: int = field(default=0)

    @property
    def rows(self) -> int:
        return self.heights.shape[0]

    @property
    def cols(self) -> int:
        return self.heights.shape[1]

    @property
    def shape(self):
        return self.heights.shape

    @property
    def extent(self):
        """(xmin, xmax, ymin, ymax) of the cell squares."""
        ox, oy = self.origin_xy
        h = self.resolution / 2
        return (ox - h, ox + (self.rows - 1) * self.resolution + h,
                oy - h, oy + (self.cols - 1) * self.resolution + h)

    def cell(self, i: int, j: int) -> CellData:
        if not self.known[i, j]:
            return CellData(math.nan, math.nan, False)
        return CellData(float(self.heights[i, j]), float(self.variance[i, j]), True)

    def set_cell(self, i, j, height, variance=0.0):
        self.heights[i, j] = height
        self.variance[i, j] = variance
        self.known[i, j] = True
        self.version += 1

    def cell_to_world(self, i, j):
        ox, oy = self.origin_xy
        return ox + i * self.resolution, oy + j * self.resolution

    def world_to_cell(self, x, y) -> Optional[tuple]:
        """Cell containing (x, y), or None when outside the grid."""
        ox, oy = self.origin_xy
        i = math.floor((x - ox) / self.resolution + 0.5)
        j = math.floor((y - oy) / self.resolution + 0.5)
        if 0 <= i < self.rows and 0 <= j < self.cols:
            return i, j
        return None

    def world_to_cells(self, xs, ys):
        """Vectorised world_to_cell; out-of-bounds entries get index -1."""
        ox, oy = self.origin_xy
        i = np.floor((np.asarray(xs) - ox) / self.resolution + 0.5).astype(np.int64)
        j = np.floor((np.asarray(ys) - oy) / self.resolution + 0.5).astype(np.int64)
        bad = (i < 0) | (i >= self.rows) | (j < 0) | (j >= self.cols)
        i[bad] = -1
        j[bad] = -1
        return i, j

    def cell_centers(self):
        ox, oy = self.origin_xy
        xs = ox + np.arange(self.rows) * self.resolution
        ys = oy + np.arange(self.cols) * self.resolution
        return np.meshgrid(xs, ys, indexing="ij")

    def height_at(self, x, y) -> Optional[float]:
        """Bilinear height over the four surrounding centres.

        Falls back to the nearest known of those four when some are unknown,
        and returns None when none is known or (x, y) is off the grid.
        """
        z = _kernels.bilinear_height(self.heights, self.known, float(self.origin_xy[0]),
                                     float(self.origin_xy[1]), float(self.resolution),
                                     float(x), float(y))
        return None if math.isnan(z) else z

    def heights_at(self, xs, ys) -> np.ndarray:
        """Vectorised height_at with NaN marking unknown."""
        xs = np.ascontiguousarray(xs, dtype=float).ravel()
        ys = np.ascontiguousarray(ys, dtype=float).ravel()
        return _kernels.bilinear_heights(self.heights, self.known, float(self.origin_xy[0]),
                                         float(self.origin_xy[1]), float(self.resolution), xs, ys)

    def copy(self) -> "ElevationGrid":
        return ElevationGrid(tuple(self.origin_xy), self.resolution, self.heights.copy(),
                             self.variance.copy(), self.known.copy(), self.version)

    def same_cells(self, other: "ElevationGrid") -> bool:
        """Exact equality of geometry and every cell (NaN-aware)."""
        return (tuple(self.origin_xy) == tuple(other.origin_xy)
                and self.resolution == other.resolution
                and self.shape == other.shape
                and np.array_equal(self.known, other.known)
                and np.array_equal(self.heights, other.heights, equal_nan=True)
                and np.array_equal(self.variance, other.variance, equal_nan=True))


def create_grid(origin_xy, resolution, rows, cols) -> ElevationGrid:
    if not resolution > 0:
        raise InvalidArgument(f"resolution must be positive, got {resolution}")
    if int(rows) < 1 or int(cols) < 1:
        raise InvalidArgument(f"grid must have at least one cell, got {rows}x{cols}")
    rows, cols = int(rows), int(cols)
    return ElevationGrid(
        origin_xy=(float(origin_xy[0]), float(origin_xy[1])),
        resolution=float(resolution),
        heights=np.full((rows, cols), np.nan),
        variance=np.full((rows, cols), np.nan),
        known=np.zeros((rows, cols), dtype=bool),
    )


def grid_for_extent(xmin, xmax, ymin, ymax, resolution) -> ElevationGrid:
    """Unknown grid whose cell squares tile [xmin, xmax] x [ymin, ymax]."""
    rows = int(round((xmax - xmin) / resolution))
    cols = int(round((ymax - ymin) / resolution))
    return create_grid((xmin + resolution / 2, ymin + resolution / 2), resolution, rows, cols)


# ---------------------------------------------------------------------------
# Experiment maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConeMap:
    """Square plane with a truncated cone in the middle (world centred on 0)."""

    size: float = 10.0
    base_diameter: float = 7.0
    top_diameter: float = 3.0
    height: float = 2.5


@dataclass(frozen=True)
class RampMap:
    """Lower and upper surfaces joined by a ramp cut into the lower one.

    World spans x in [0, lower_length + upper_length], y in [0, width].  The
    step between levels sits at x = lower_length; the ramp climbs to it with
    the given slope and is centred in y.
    """

    lower_length: float = 7.0
    upper_length: float = 5.0
    width: float = 8.0
    upper_height: float = 0.5
    ramp_width: float = 4.0
    ramp_slope: float = 0.1

    @property
    def ramp_length(self):
        return self.upper_height / math.tan(self.ramp_slope)


@dataclass(frozen=True)
class PitsMap:
    """Rectangular plane with two shallow pits elongated along the travel (x)
    axis and offset in y, so a start-goal segment crosses them obliquely."""

    length: float = 12.0
    width: float = 5.0
    pit_size: tuple = (2.5, 0.5)
    pit_depth: float = 0.05
    pit_centers: tuple = ((4.0, 2.0), (8.0, 3.0))


@dataclass(frozen=True)
class Box:
    """Axis-aligned block (brick, pit, ledge) given by centre and size."""

    center: tuple
    size: tuple
    height: float


@dataclass(frozen=True)
class CourseMap:
    """Platform with a gentle and a steep ramp, a pit and a ledge on top, and
    bricks on the ground.

    The gentle ramp runs along the platform's south long side, the steep ramp
    off its east end.  Brick placements are layout defaults, not measured
    values.
    """

    size: tuple = (10.0, 10.0)
    origin: tuple = (0.0, -4.0)
    platform_center: tuple = (5.5, 4.5)
    platform_size: tuple = (3.0, 1.0)
    platform_height: float = 0.4
    gentle_slope: float = 0.12
    steep_slope: float = 0.59
    pit: Box = Box((4.6, 4.6), (0.30, 0.30), 0.025)
    ledge: Box = Box((6.225, 4.7), (0.03, 0.20), 0.015)
    bricks: tuple = (
        Box((8.3, -0.9), (0.20, 0.40), 0.08),
        Box((7.1, -1.55), (0.40, 0.20), 0.15),
        Box((4.1, -1.6), (0.40, 0.20), 0.27),
        Box((2.0, -1.5), (0.20, 0.40), 0.20),
        Box((2.6, 0.2), (0.40, 0.20), 0.12),
    )

    @property
    def platform_bounds(self):
        cx, cy = self.platform_center
        w, h = self.platform_size
        return cx - w / 2, cx + w / 2, cy - h / 2, cy + h / 2

    @property
    def gentle_bounds(self):
        x0, x1, y0, _ = self.platform_bounds
        run = self.platform_height / math.tan(self.gentle_slope)
        return x0, x1, y0 - run, y0

    @property
    def steep_bounds(self):
        _, x1, y0, y1 = self.platform_bounds
        run = self.platform_height / math.tan(self.steep_slope)
        return x1, x1 + run, y0, y1


@dataclass(frozen=True)
class Flat:
    width: float = 10.0
    height: float = 10.0
    z: float = 0.0


@dataclass(frozen=True)
class FileMap:
    """Terrain read from an EGRD file; the file fixes the resolution."""
    path: str


MapSpec = Union[ConeMap, RampMap, PitsMap, CourseMap, Flat, FileMap]


def _check_positive(spec, names):
    for name in names:
        value = getattr(spec, name)
        values = value if isinstance(value, tuple) else (value,)
        if any(not v > 0 for v in values):
            raise InvalidArgument(f"{type(spec).__name__}.{name} must be positive, got {value}")


def _inside(xs, ys, box: Box):
    # inclusive with a nanometre of slack so edges that fall on cell centres
    # rasterize the same way regardless of float rounding
    (cx, cy), (w, h) = box.center, box.size
    return (np.abs(xs - cx) <= w / 2 + 1e-9) & (np.abs(ys - cy) <= h / 2 + 1e-9)


def _cone_heights(spec: ConeMap, xs, ys):
    r = np.hypot(xs, ys)
    r_base, r_top = spec.base_diameter / 2, spec.top_diameter / 2
    return spec.height * np.clip((r_base - r) / (r_base - r_top), 0.0, 1.0)


def _ramp_heights(spec: RampMap, xs, ys):
    z = np.where(xs >= spec.lower_length, spec.upper_height, 0.0)
    x0 = spec.lower_length - spec.ramp_length
    y0 = (spec.width - spec.ramp_width) / 2
    on_ramp = (xs >= x0) & (xs < spec.lower_length) & (ys >= y0) & (ys <= y0 + spec.ramp_width)
    return np.where(on_ramp, (xs - x0) * math.tan(spec.ramp_slope), z)


def _pits_heights(spec: PitsMap, xs, ys):
    z = np.zeros_like(xs)
    for center in spec.pit_centers:
        z[_inside(xs, ys, Box(center, spec.pit_size, spec.pit_depth))] = -spec.pit_depth
    return z


def _course_heights(spec: CourseMap, xs, ys):
    z = np.zeros_like(xs)
    px0, px1, py0, py1 = spec.platform_bounds
    gx0, gx1, gy0, gy1 = spec.gentle_bounds
    on = (xs >= gx0) & (xs <= gx1) & (ys >= gy0) & (ys < gy1)
    z[on] = (ys[on] - gy0) * math.tan(spec.gentle_slope)
    sx0, sx1, sy0, sy1 = spec.steep_bounds
    on = (xs > sx0) & (xs <= sx1) & (ys >= sy0) & (ys <= sy1)
    z[on] = (sx1 - xs[on]) * math.tan(spec.steep_slope)
    on = (xs >= px0) & (xs <= px1) & (ys >= py0) & (ys <= py1)
    z[on] = spec.platform_height
    z[_inside(xs, ys, spec.pit)] -= spec.pit.height
    z[_inside(xs, ys, spec.ledge)] += spec.ledge.height
    for brick in spec.bricks:
        z[_inside(xs, ys, brick)] = brick.height
    return z


def map_extent(spec: MapSpec):
    """(xmin, xmax, ymin, ymax) of the world covered by a map spec."""
    if isinstance(spec, ConeMap):
        h = spec.size / 2
        return -h, h, -h, h
    if isinstance(spec, RampMap):
        return 0.0, spec.lower_length + spec.upper_length, 0.0, spec.width
    if isinstance(spec, PitsMap):
        return 0.0, spec.length, 0.0, spec.width
    if isinstance(spec, CourseMap):
        ox, oy = spec.origin
        return ox, ox + spec.size[0], oy, oy + spec.size[1]
    if isinstance(spec, Flat):
        return -spec.width / 2, spec.width / 2, -spec.height / 2, spec.height / 2
    if isinstance(spec, FileMap):
        return load_grid(spec.path).extent
    raise InvalidArgument(f"unknown map spec {spec!r}")


def validate_spec(spec: MapSpec):
    if isinstance(spec, ConeMap):
        _check_positive(spec, ["size", "base_diameter", "top_diameter", "height"])
        if spec.top_diameter >= spec.base_diameter:
            raise InvalidArgument("cone top must be narrower than its base")
    elif isinstance(spec, RampMap):
        _check_positive(spec, ["lower_length", "upper_length", "width", "upper_height",
                               "ramp_width", "ramp_slope"])
        if spec.ramp_length > spec.lower_length or spec.ramp_width > spec.width:
            raise InvalidArgument("ramp does not fit on the lower surface")
    elif isinstance(spec, PitsMap):
        _check_positive(spec, ["length", "width", "pit_size", "pit_depth"])
    elif isinstance(spec, CourseMap):
        _check_positive(spec, ["size", "platform_size", "platform_height", "gentle_slope",
                               "steep_slope"])
        for box in (spec.pit, spec.ledge, *spec.bricks):
            if any(not s > 0 for s in box.size) or not box.height > 0:
                raise InvalidArgument(f"box dimensions must be positive: {box}")
    elif isinstance(spec, Flat):
        _check_positive(spec, ["width", "height"])
    elif isinstance(spec, FileMap):
        if not Path(spec.path).is_file():
            raise InvalidArgument(f"map file not found: {spec.path}")
    else:
        raise InvalidArgument(f"unknown map spec {spec!r}")


def generate_map(spec: MapSpec, resolution: float = DEFAULT_RESOLUTION) -> ElevationGrid:
    """Fully known grid sampling the map geometry at cell centres.

    Heights and variances are rounded to float32 so the grid survives the
    EGRD file format unchanged.
    """
    validate_spec(spec)
    if isinstance(spec, FileMap):
        return load_grid(spec.path)
    grid = grid_for_extent(*map_extent(spec), resolution)
    xs, ys = grid.cell_centers()
    if isinstance(spec, ConeMap):
        z = _cone_heights(spec, xs, ys)
    elif isinstance(spec, RampMap):
        z = _ramp_heights(spec, xs, ys)
    elif isinstance(spec, PitsMap):
        z = _pits_heights(spec, xs, ys)
    elif isinstance(spec, CourseMap):
        z = _course_heights(spec, xs, ys)
    else:
        z = np.full_like(xs, spec.z)
    grid.heights = z.astype(np.float32).astype(np.float64)
    grid.variance = np.zeros_like(z)
    grid.known = np.ones(z.shape, dtype=bool)
    return grid


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def save_grid(grid: ElevationGrid, path):
    """Write the binary EGRD v1 format (f32 cell records)."""
    ox, oy = grid.origin_xy
    header = _EGRD_HEADER.pack(EGRD_MAGIC, EGRD_VERSION, ox, oy, grid.resolution,
                               grid.rows, grid.cols)
    records = np.zeros(grid.rows * grid.cols, dtype=_EGRD_RECORD)
    known = grid.known.ravel()
    records["height"] = np.where(known, grid.heights.ravel(), np.nan)
    records["variance"] = np.where(known, grid.variance.ravel(), np.nan)
    records["known"] = known
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(records.tobytes())


def load_grid(path) -> ElevationGrid:
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != EGRD_MAGIC:
        raise UnsupportedFormat(f"{path}: not an EGRD file (magic {data[:4]!r})")
    if len(data) < 6:
        raise GridFormatError("truncated header", len(data))
    (version,) = struct.unpack_from("<H", data, 4)
    if version != EGRD_VERSION:
        raise UnsupportedVersion(f"{path}: EGRD version {version}, expected {EGRD_VERSION}")
    if len(data) < _EGRD_HEADER.size:
        raise GridFormatError("truncated header", len(data))
    _, _, ox, oy, res, rows, cols = _EGRD_HEADER.unpack_from(data, 0)
    if not res > 0 or rows < 1 or cols < 1:
        raise GridFormatError(f"invalid geometry res={res} rows={rows} cols={cols}", 6)
    n = rows * cols
    need = _EGRD_HEADER.size + n * _EGRD_RECORD.itemsize
    if len(data) < need:
        complete = (len(data) - _EGRD_HEADER.size) // _EGRD_RECORD.itemsize
        raise GridFormatError(f"truncated cell data: {complete} of {n} records",
                              _EGRD_HEADER.size + complete * _EGRD_RECORD.itemsize)
    if len(data) > need:
        raise GridFormatError("trailing bytes after cell data", need)
    records = np.frombuffer(data, dtype=_EGRD_RECORD, count=n, offset=_EGRD_HEADER.size)
    flags = records["known"]
    if np.any(flags > 1):
        k = int(np.argmax(flags > 1))
        raise GridFormatError("known flag must be 0 or 1",
                              _EGRD_HEADER.size + k * _EGRD_RECORD.itemsize + 8)
    known = flags.astype(bool).reshape(rows, cols)
    heights = records["height"].astype(np.float64).reshape(rows, cols)
    variance = records["variance"].astype(np.float64).reshape(rows, cols)
    heights[~known] = np.nan
    variance[~known] = np.nan
    return ElevationGrid((ox, oy), res, heights, variance, known)


def export_grid_text(grid: ElevationGrid, stem):
    """Human-readable export: ``<stem>.json`` header + ``<stem>.csv`` heights.

    CSV row k holds cells (k, 0..cols-1); unknown cells are written as nan.
    """
    stem = Path(stem)
    header = {
        "format": "EGRD-text",
        "version": EGRD_VERSION,
        "origin_xy": list(grid.origin_xy),
        "resolution": grid.resolution,
        "rows": grid.rows,
        "cols": grid.cols,
        "heights_csv": stem.with_suffix(".csv").name,
    }
    stem.with_suffix(".json").write_text(json.dumps(header, indent=2))
    z = np.where(grid.known, grid.heights, np.nan)
    np.savetxt(stem.with_suffix(".csv"), z, delimiter=",", fmt="%.9g")
    return stem.with_suffix(".json"), stem.with_suffix(".csv")
