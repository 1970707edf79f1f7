import math
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from terranav import elevation_grid as eg
from terranav.errors import GridFormatError, InvalidArgument, UnsupportedFormat, UnsupportedVersion


def flat_grid(z=0.3, rows=10, cols=10, res=0.1, origin=(0.0, 0.0)):
    g = eg.create_grid(origin, res, rows, cols)
    g.heights[:] = z
    g.variance[:] = 0.0
    g.known[:] = True
    return g


# create_grid / coordinates

def test_create_grid_all_unknown():
    g = eg.create_grid((0, 0), 0.1, 10, 10)
    assert g.shape == (10, 10)
    assert not g.known.any()
    assert all(not g.cell(i, j).known for i in range(10) for j in range(10))
    assert math.isnan(g.cell(3, 3).height)


def test_create_grid_covers_cone_extent():
    g = eg.create_grid((-5 + 0.025, -5 + 0.025), 0.05, 200, 200)
    assert g.extent == pytest.approx((-5, 5, -5, 5))
    assert eg.grid_for_extent(-5, 5, -5, 5, 0.05).shape == (200, 200)


@pytest.mark.parametrize("res,rows,cols", [(0, 10, 10), (-0.1, 10, 10), (0.1, 0, 10), (0.1, 10, 0)])
def test_create_grid_rejects_bad_dimensions(res, rows, cols):
    with pytest.raises(InvalidArgument):
        eg.create_grid((0, 0), res, rows, cols)


def test_world_to_cell_examples():
    g = eg.create_grid((0, 0), 0.1, 10, 10)
    assert g.world_to_cell(0.0, 0.0) == (0, 0)
    assert g.world_to_cell(0.5, 0.2) == (5, 2)
    assert g.world_to_cell(5.0, 0.0) is None
    assert g.world_to_cell(-0.06, 0.0) is None
    big = eg.create_grid((0, 0), 0.1, 30, 30)
    assert big.world_to_cell(1.0, 2.0) == (10, 20)


@given(st.integers(0, 39), st.integers(0, 24), st.floats(0.01, 1.0), st.floats(-5, 5), st.floats(-5, 5))
def test_cell_world_round_trip(i, j, res, ox, oy):
    g = eg.create_grid((ox, oy), res, 40, 25)
    assert g.world_to_cell(*g.cell_to_world(i, j)) == (i, j)


# height_at

def test_height_at_flat():
    g = flat_grid(0.3)
    for x, y in [(0.0, 0.0), (0.37, 0.81), (0.9, 0.9)]:
        assert g.height_at(x, y) == pytest.approx(0.3)


def test_height_at_bilinear_patch_center():
    g = eg.create_grid((0, 0), 1.0, 2, 2)
    # rows along x: row 0 at height 0, row 1 at height 1
    g.heights[:] = [[0.0, 0.0], [1.0, 1.0]]
    g.variance[:] = 0.0
    g.known[:] = True
    assert g.height_at(0.5, 0.5) == pytest.approx(0.5)


def test_height_at_unknown_and_partial():
    g = eg.create_grid((0, 0), 1.0, 4, 4)
    assert g.height_at(1.5, 1.5) is None
    g.set_cell(1, 1, 2.0)
    # one of the four surrounding centres known: nearest-known fallback
    assert g.height_at(1.4, 1.4) == pytest.approx(2.0)
    assert g.height_at(10.0, 10.0) is None


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_bilinear_reproduces_affine(p, q, fx, fy):
    g = eg.create_grid((0, 0), 0.1, 12, 12)
    xs, ys = g.cell_centers()
    g.heights[:] = p * xs + q * ys
    g.variance[:] = 0.0
    g.known[:] = True
    x, y = fx * 1.1, fy * 1.1
    assert g.height_at(x, y) == pytest.approx(p * x + q * y, abs=1e-9)


# generators

def test_cone_heights():
    g = eg.generate_map(eg.ConeMap(), 0.05)
    assert g.known.all()
    assert g.height_at(0.0, 0.0) == pytest.approx(2.5)
    assert g.height_at(3.6, 0.0) == pytest.approx(0.0)
    assert g.height_at(0.0, -3.6) == pytest.approx(0.0)
    # linear flank between radii 3.5 and 1.5
    assert g.height_at(2.5, 0.0) == pytest.approx(1.25, abs=1e-3)
    assert g.height_at(0.0, 2.5) == pytest.approx(1.25, abs=1e-3)


def test_pits_ramp_course_heights():
    pits = eg.PitsMap()
    g = eg.generate_map(pits, 0.05)
    for cx, cy in pits.pit_centers:
        assert g.height_at(cx, cy) == pytest.approx(-0.05)
    assert g.height_at(1.0, 1.0) == 0.0

    ramp = eg.RampMap()
    g = eg.generate_map(ramp, 0.05)
    assert g.height_at(10.0, 4.0) == pytest.approx(0.5)
    assert g.height_at(1.0, 4.0) == 0.0
    x0 = ramp.lower_length - ramp.ramp_length
    assert g.height_at(x0 + 2.0, 4.0) == pytest.approx(2.0 * math.tan(0.1), abs=1e-6)

    course = eg.CourseMap()
    g = eg.generate_map(course, 0.05)
    assert g.height_at(5.5, 4.3) == pytest.approx(0.4)
    x0, x1, _, _ = course.gentle_bounds
    _, _, gy0, gy1 = course.gentle_bounds
    ymid = (gy0 + gy1) / 2
    assert g.height_at(5.5, ymid) == pytest.approx((ymid - gy0) * math.tan(0.12), abs=1e-5)
    for b in course.bricks:
        assert g.height_at(*b.center) == pytest.approx(b.height)
    assert g.height_at(*course.pit.center) == pytest.approx(0.4 - 0.025)


def test_course_ledge_is_rasterized():
    course = eg.CourseMap()
    g = eg.generate_map(course, 0.05)
    assert np.any(np.isclose(g.heights, 0.4 + course.ledge.height))


def test_generate_map_deterministic_and_validated():
    a = eg.generate_map(eg.CourseMap(), 0.05)
    b = eg.generate_map(eg.CourseMap(), 0.05)
    assert a.same_cells(b)
    with pytest.raises(InvalidArgument):
        eg.generate_map(eg.ConeMap(height=-1.0))
    with pytest.raises(InvalidArgument):
        eg.generate_map(eg.PitsMap(pit_depth=0.0))
    with pytest.raises(InvalidArgument):
        eg.generate_map(eg.ConeMap(top_diameter=8.0))


# file I/O

def test_save_load_round_trip(tmp_path):
    g = eg.generate_map(eg.ConeMap(), 0.05)
    g.known[3, 4] = False
    g.heights[3, 4] = np.nan
    g.variance[3, 4] = np.nan
    g.variance[10, 10] = 0.125
    p = tmp_path / "cone.egrd"
    eg.save_grid(g, p)
    back = eg.load_grid(p)
    assert back.same_cells(g)
    assert back.cell(3, 4).known is False


def test_file_layout(tmp_path):
    g = flat_grid(0.5, rows=2, cols=3)
    p = tmp_path / "g.egrd"
    eg.save_grid(g, p)
    data = p.read_bytes()
    magic, version, ox, oy, res, rows, cols = struct.unpack_from("<4sHdddII", data)
    assert (magic, version, rows, cols, res) == (b"EGRD", 1, 2, 3, 0.1)
    assert len(data) == struct.calcsize("<4sHdddII") + 6 * 9
    h, v, k = struct.unpack_from("<ffB", data, struct.calcsize("<4sHdddII"))
    assert (h, v, k) == (0.5, 0.0, 1)


def test_load_errors(tmp_path):
    g = flat_grid()
    p = tmp_path / "g.egrd"
    eg.save_grid(g, p)
    data = p.read_bytes()
    (tmp_path / "trunc.egrd").write_bytes(data[:-5])
    with pytest.raises(GridFormatError) as exc:
        eg.load_grid(tmp_path / "trunc.egrd")
    assert exc.value.offset > 0
    (tmp_path / "magic.egrd").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(UnsupportedFormat):
        eg.load_grid(tmp_path / "magic.egrd")
    (tmp_path / "ver.egrd").write_bytes(data[:4] + struct.pack("<H", 2) + data[6:])
    with pytest.raises(UnsupportedVersion):
        eg.load_grid(tmp_path / "ver.egrd")
    (tmp_path / "short.egrd").write_bytes(data[:20])
    with pytest.raises(GridFormatError):
        eg.load_grid(tmp_path / "short.egrd")


def test_text_export(tmp_path):
    g = flat_grid(0.25, rows=3, cols=4)
    g.known[0, 0] = False
    g.heights[0, 0] = np.nan
    eg.export_grid_text(g, tmp_path / "g")
    rows = (tmp_path / "g.csv").read_text().strip().splitlines()
    assert len(rows) == 3 and rows[0].split(",")[0] == "nan"
    assert (tmp_path / "g.json").exists()


def test_file_map_spec(tmp_path):
    g = eg.generate_map(eg.PitsMap(), 0.05)
    p = tmp_path / "pits.egrd"
    eg.save_grid(g, p)
    spec = eg.FileMap(str(p))
    assert eg.generate_map(spec).same_cells(g)
    assert eg.map_extent(spec) == pytest.approx(eg.map_extent(eg.PitsMap()))
    with pytest.raises(InvalidArgument):
        eg.generate_map(eg.FileMap(str(tmp_path / "missing.egrd")))
