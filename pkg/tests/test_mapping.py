import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from terranav import elevation_grid as eg
from terranav.errors import InvalidArgument, UnsupportedFormat
from terranav.mapping import (MeasurementModel, PointCloud, fill_footprint, integrate_cloud,
                              kalman_update, load_cloud, rotation_matrix, save_cloud)


def world_cloud(points):
    """Cloud whose sensor frame coincides with the world frame."""
    return PointCloud(np.asarray(points, float), (0.0, 0.0, 0.0, 0.0, 0.0, 0.0))


def model(var):
    return MeasurementModel(base_variance=var, range_coefficient=0.0)


def test_unknown_cell_adopts_measurement():
    g = eg.create_grid((0, 0), 0.1, 10, 10)
    cloud = PointCloud(np.zeros((1, 3)), (0.5, 0.5, 0.4, 0.0, 0.0, 0.0))
    stats = integrate_cloud(g, cloud, model(0.01))
    c = g.cell(5, 5)
    assert c.known and c.height == pytest.approx(0.4) and c.variance == pytest.approx(0.01)
    assert stats.cells_updated == 1 and g.known.sum() == 1


def test_symmetric_kalman_case():
    assert kalman_update(0.0, 1.0, 1.0, 1.0) == (0.5, 0.5)
    g = eg.create_grid((0, 0), 0.1, 10, 10)
    g.set_cell(2, 3, 0.0, 1.0)
    integrate_cloud(g, world_cloud([[0.2, 0.3, 1.0]]), model(1.0))
    assert (g.cell(2, 3).height, g.cell(2, 3).variance) == pytest.approx((0.5, 0.5))


def test_kalman_formula_value():
    z, var = kalman_update(0.0, 0.01, 1.0, 1.0)
    # (1 * 0 + 0.01 * 1) / 1.01 and 0.01 * 1 / 1.01
    assert z == pytest.approx(0.0099009900990099, rel=1e-12)
    assert var == pytest.approx(0.01 / 1.01, rel=1e-12)


def test_points_in_one_cell_are_prefused():
    g = eg.create_grid((0, 0), 0.1, 10, 10)
    integrate_cloud(g, world_cloud([[0.5, 0.5, 0.0], [0.51, 0.49, 1.0]]),
                    MeasurementModel(1.0, 0.0))
    c = g.cell(5, 5)
    assert c.height == pytest.approx(0.5) and c.variance == pytest.approx(0.5)


def test_nonfinite_and_out_of_bounds():
    g = eg.create_grid((0, 0), 0.1, 10, 10)
    v = g.version
    stats = integrate_cloud(g, world_cloud([[np.nan, 0, 0], [50.0, 50.0, 0.0]]), model(0.01))
    assert stats.nonfinite_skipped == 1 and stats.out_of_bounds == 1
    assert g.version == v and not g.known.any()


def test_outliers_below_surface_rejected():
    g = eg.create_grid((0, 0), 0.1, 10, 10)
    g.set_cell(5, 5, 1.0, 1e-4)
    stats = integrate_cloud(g, world_cloud([[0.5, 0.5, 0.0]]), model(1e-4))
    assert stats.outliers == 1 and g.cell(5, 5).height == 1.0


def test_sensor_pose_transform():
    # sensor at height 1 looking straight down: a point 1 m ahead lands at z = 0
    cloud = PointCloud([[1.0, 0.0, 0.0]], (2.0, 3.0, 1.0, 0.0, math.pi / 2, 0.0))
    assert cloud.world_points()[0] == pytest.approx([2.0, 3.0, 0.0], abs=1e-12)
    R = rotation_matrix(0.3, -0.2, 1.1)
    assert R @ R.T == pytest.approx(np.eye(3), abs=1e-12)


@given(st.floats(-1, 1), st.floats(1e-3, 1.0), st.floats(-1, 1), st.floats(1e-3, 1.0))
def test_posterior_variance_shrinks(z, var, z_m, var_m):
    _, post = kalman_update(z, var, z_m, var_m)
    assert post < min(var, var_m)


@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
def test_repeated_cloud_converges_monotonically(z0, z_m):
    g = eg.create_grid((0, 0), 0.1, 4, 4)
    g.set_cell(1, 1, z0, 0.1)
    cloud = world_cloud([[0.1, 0.1, z_m]])
    errors = [abs(z0 - z_m)]
    for _ in range(4):
        integrate_cloud(g, cloud, model(0.1), outlier_sigma=1e9)
        errors.append(abs(g.cell(1, 1).height - z_m))
    assert all(b <= a + 1e-15 for a, b in zip(errors, errors[1:]))


def test_noiseless_full_coverage_reproduces_map(rng):
    spec = eg.RampMap()
    truth = eg.generate_map(spec, 0.1)
    est = eg.create_grid(truth.origin_xy, truth.resolution, truth.rows, truth.cols)
    # four jittered samples inside every cell
    cx, cy = truth.cell_centers()
    h = truth.resolution / 2
    xs = np.repeat(cx.ravel(), 4) + rng.uniform(-h, h, 4 * cx.size) * 0.999
    ys = np.repeat(cy.ravel(), 4) + rng.uniform(-h, h, 4 * cy.size) * 0.999
    zs = truth.heights_at(xs, ys)
    integrate_cloud(est, world_cloud(np.column_stack([xs, ys, zs])), model(1e-4))
    assert est.known.all()
    err = np.abs(est.heights - truth.heights)
    # cells beside the level step and the ramp side walls mix two surfaces,
    # which is not a binning effect; keep cells whose 5x5 neighbourhood is smooth
    from scipy.ndimage import maximum_filter, minimum_filter
    jump = maximum_filter(truth.heights, size=5) - minimum_filter(truth.heights, size=5)
    interior = jump <= 4 * truth.resolution * math.tan(spec.ramp_slope) + 1e-6
    assert interior.mean() > 0.9
    assert err[interior].max() <= 2 * truth.resolution * math.tan(spec.ramp_slope) + 1e-9


# footprint fill

def _disk_count(radius_cells):
    # exact integer lattice count, boundary included
    n = radius_cells
    return sum(1 for i in range(-n, n + 1) for j in range(-n, n + 1) if i * i + j * j <= n * n)


@pytest.mark.parametrize("radius,cells", [(0.25, 5), (0.4, 8)])
def test_fill_flat_disk(radius, cells):
    g = eg.create_grid((-1, -1), 0.05, 41, 41)
    n = fill_footprint(g, (0.0, 0.0, 0.0, 0.0, 0.0, 0.0), radius)
    assert n == _disk_count(cells) == g.known.sum()
    assert np.all(g.heights[g.known] == 0.0)
    xs, ys = g.cell_centers()
    assert np.all(np.hypot(xs[g.known], ys[g.known]) <= radius + 1e-9)


def test_fill_follows_tilted_plane():
    g = eg.create_grid((-1, -1), 0.05, 41, 41)
    fill_footprint(g, (0.0, 0.0, 0.0, 0.0, 0.1, 0.0), 0.25)
    i, j = g.world_to_cell(0.2, 0.0)
    assert g.heights[i, j] == pytest.approx(-0.2 * math.tan(0.1), abs=1e-12)


def test_fill_keeps_known_and_is_idempotent():
    g = eg.create_grid((-1, -1), 0.05, 41, 41)
    g.set_cell(20, 20, 0.7, 0.001)
    pose = (0.0, 0.0, 0.1, 0.05, -0.02, 0.3)
    fill_footprint(g, pose, 0.4)
    assert g.cell(20, 20).height == 0.7
    snap = g.copy()
    assert fill_footprint(g, pose, 0.4) == 0
    assert g.same_cells(snap)
    with pytest.raises(InvalidArgument):
        fill_footprint(g, pose, 0.0)


def test_cloud_file_round_trip(tmp_path):
    pts = np.array([[1.0, 2.0, 3.0], [0.5, -0.25, 0.125]])
    cloud = PointCloud(pts, (1.0, 2.0, 0.5, 0.1, 0.2, 0.3))
    save_cloud(cloud, tmp_path / "c.pcld")
    back = load_cloud(tmp_path / "c.pcld")
    assert np.array_equal(back.points, pts) and back.sensor_pose == cloud.sensor_pose
    (tmp_path / "bad.pcld").write_bytes(b"NOPE" + b"\0" * 60)
    with pytest.raises(UnsupportedFormat):
        load_cloud(tmp_path / "bad.pcld")


def test_measurement_model_validation():
    with pytest.raises(InvalidArgument):
        MeasurementModel(base_variance=0.0)
    with pytest.raises(InvalidArgument):
        PointCloud(np.zeros((1, 3)), (0, 0, 0, 0, 0, math.nan))
