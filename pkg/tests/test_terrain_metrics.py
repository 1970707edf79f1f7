import math

import numpy as np
import pytest

from terranav import elevation_grid as eg
from terranav.errors import DegenerateFit, InsufficientSupport, InvalidArgument
from terranav.terrain_metrics import (PlaneFit, TraversabilityConfig, build_traversability,
                                      distance_to_mask, export_traversability, fit_plane,
                                      footprint_cells, inflate, roughness, slope_angle,
                                      traversability_layer, traversability_prob)


def known_grid(heights, res=0.1, origin=(0.0, 0.0)):
    heights = np.asarray(heights, float)
    g = eg.create_grid(origin, res, *heights.shape)
    g.heights[:] = heights
    g.variance[:] = 0.0
    g.known[:] = True
    return g


def stencil_grid():
    # z(i, j+2) = 0.5, everything else 0, eps = 0.1
    z = np.zeros((9, 9))
    z[4, 6] = 0.5
    return known_grid(z)


def test_flat_grid_fully_traversable():
    g = known_grid(np.full((12, 12), 0.7))
    t = build_traversability(g, TraversabilityConfig())
    assert np.all(t.probability == 1.0) and not t.blocked_mask.any()
    assert traversability_prob(g, 5, 5, TraversabilityConfig()) == 1.0


def test_stencil_example_lambda_one():
    g = stencil_grid()
    cfg = TraversabilityConfig(delta=2, lam=1.0)
    # S_h = 0.5 / (2 * 2 * 0.1) = 1.25, S_v = 0, S = 0.625
    assert traversability_prob(g, 4, 4, cfg) == pytest.approx(math.exp(-0.625), abs=1e-12)
    assert math.exp(-0.625) == pytest.approx(0.535, abs=1e-3)
    assert traversability_layer(g, cfg)[4, 4] == pytest.approx(math.exp(-0.625), abs=1e-12)


def test_stencil_example_lambda_two_blocks():
    g = stencil_grid()
    cfg = TraversabilityConfig(delta=2, lam=2.0)
    p = traversability_prob(g, 4, 4, cfg)
    assert p == pytest.approx(0.2865, abs=1e-4)
    assert build_traversability(g, cfg).blocked_mask[4, 4]


def test_unknown_stencil_policies():
    g = stencil_grid()
    g.known[4, 6] = False
    g.heights[4, 6] = np.nan
    assert traversability_prob(g, 4, 4, TraversabilityConfig()) == 0.0
    free = TraversabilityConfig(unknown_is_blocked=False)
    assert traversability_prob(g, 4, 4, free) == 1.0
    assert traversability_layer(g, free)[4, 4] == 1.0
    t = build_traversability(g, TraversabilityConfig())
    assert t.blocked_mask[4, 6] and t.blocked_mask[4, 4]


def test_layer_matches_pointwise(rng):
    g = known_grid(rng.normal(0, 0.05, (15, 11)))
    g.known[3, 4] = False
    g.heights[3, 4] = np.nan
    for cfg in (TraversabilityConfig(delta=1, lam=3.0), TraversabilityConfig(delta=3, lam=1.0,
                                                                              unknown_is_blocked=False)):
        layer = traversability_layer(g, cfg)
        for i in range(g.rows):
            for j in range(g.cols):
                assert layer[i, j] == pytest.approx(traversability_prob(g, i, j, cfg), abs=1e-12)


def test_ramp_cells_traversable():
    spec = eg.RampMap()
    g = eg.generate_map(spec, 0.1)
    cfg = TraversabilityConfig(delta=2, lam=1.0)
    p = traversability_layer(g, cfg)
    i, j = g.world_to_cell(4.0, 4.0)
    # S = tan(0.1) / 2 from the x axis only
    assert p[i, j] == pytest.approx(math.exp(-math.tan(0.1) / 2), abs=1e-6)
    assert p[i, j] == pytest.approx(0.95, abs=0.002)


def test_config_validation():
    for kw in ({"delta": 0}, {"delta": 1.5}, {"lam": 0.0}, {"threshold": 1.0}, {"inflation_radius": -1}):
        with pytest.raises(InvalidArgument):
            TraversabilityConfig(**kw)


def test_distance_field_examples():
    mask = np.zeros((10, 10), bool)
    d = distance_to_mask(mask, 0.1)
    assert np.all(d == pytest.approx(math.hypot(10, 10) * 0.1))
    mask[5, 5] = True
    d = distance_to_mask(mask, 0.1)
    assert d[5, 5] == 0 and d[5, 6] == pytest.approx(0.1) and d[6, 6] == pytest.approx(math.sqrt(2) * 0.1)


def test_inflation_and_field_invariants(rng):
    z = np.zeros((30, 30))
    z[10:13, 8:20] = 1.0
    g = known_grid(z, res=0.05)
    t = build_traversability(g, TraversabilityConfig(inflation_radius=0.2))
    assert np.all(t.inflated_mask >= t.blocked_mask)
    assert np.all(t.distance_field[t.inflated_mask] == 0)
    assert np.all(t.distance_field[~t.inflated_mask] > 0)
    # inflation radius in cells: 4, so a blocked cell's 4th neighbour is inflated, 5th is not
    bi, bj = np.argwhere(t.blocked_mask)[0]
    assert inflate(t.blocked_mask, 0.2, 0.05).sum() == t.inflated_mask.sum()
    # 1-Lipschitz over neighbouring cell centres
    d = t.distance_field
    assert np.all(np.abs(np.diff(d, axis=0)) <= 0.05 + 1e-12)
    assert np.all(np.abs(np.diff(d, axis=1)) <= 0.05 + 1e-12)
    assert t.source_version == g.version


def test_export(tmp_path):
    t = build_traversability(stencil_grid(), TraversabilityConfig(lam=2.0))
    export_traversability(t, tmp_path / "t")
    data = (tmp_path / "t.pgm").read_bytes()
    assert data.startswith(b"P5\n9 9\n255\n") and len(data) == len(b"P5\n9 9\n255\n") + 81
    assert (tmp_path / "t_blocked.csv").read_text().count("1") == t.blocked_mask.sum()


# footprint geometry

def test_footprint_cell_count_matches_lattice():
    g = known_grid(np.zeros((20, 20)))
    pts = footprint_cells(g, 1.0, 1.0, 0.3)
    lattice = sum(1 for i in range(-3, 4) for j in range(-3, 4) if i * i + j * j <= 9)
    assert len(pts) == lattice == 29


def test_footprint_insufficient_support():
    g = known_grid(np.zeros((20, 20)))
    with pytest.raises(InsufficientSupport):
        footprint_cells(g, 1.0, 1.0, 0.04)
    empty = eg.create_grid((0, 0), 0.1, 20, 20)
    with pytest.raises(InsufficientSupport):
        footprint_cells(empty, 1.0, 1.0, 0.3)
    with pytest.raises(InvalidArgument):
        footprint_cells(g, 1.0, 1.0, 0.0)


def test_fit_plane_examples(rng):
    xy = rng.uniform(-1, 1, (40, 2))
    pts = np.column_stack([xy, 0.1 * xy[:, 0] + 0.2 * xy[:, 1] + 0.3])
    f = fit_plane(pts)
    assert (f.a, f.b, f.c) == pytest.approx((0.1, 0.2, 0.3), abs=1e-12)
    f0 = fit_plane(np.column_stack([xy, np.zeros(40)]))
    assert (f0.a, f0.b, f0.c) == (0.0, 0.0, 0.0)


def test_fit_plane_symmetric_perturbation():
    # 5x5 lattice on z = 0.1 x with a +/-0.01 checkerboard perturbation
    ii, jj = np.meshgrid(np.arange(-2, 3), np.arange(-2, 3), indexing="ij")
    x, y = ii.ravel() * 0.1, jj.ravel() * 0.1
    z = 0.1 * x + 0.01 * np.where((ii + jj).ravel() % 2 == 0, 1, -1) * np.where(ii.ravel() == 0, 0, 1)
    z = 0.1 * x + 0.01 * np.sign(x) * np.sign(y)
    pts = np.column_stack([x, y, z])
    f = fit_plane(pts)
    oracle, *_ = np.linalg.lstsq(np.column_stack([x, y, np.ones_like(x)]), z, rcond=None)
    assert f.a == pytest.approx(0.1, abs=1e-12) and abs(f.b) < 1e-12
    assert (f.a, f.b, f.c) == pytest.approx(tuple(oracle), abs=1e-12)


def test_fit_plane_degenerate():
    pts = np.array([[0, 0, 0], [1, 1, 1], [2, 2, 5], [3, 3, 1]], float)
    with pytest.raises(DegenerateFit):
        fit_plane(pts)
    with pytest.raises(DegenerateFit):
        fit_plane(pts[:2])


def test_slope_angle_examples():
    assert slope_angle(PlaneFit(0, 0, 0, 3)) == 0
    assert slope_angle(PlaneFit(1, 0, 0, 3)) == pytest.approx(math.pi / 4, abs=1e-15)
    assert slope_angle(PlaneFit(math.tan(0.1), 0, 0, 3)) == pytest.approx(0.1, abs=1e-15)
    # same as the arccos form away from flat planes
    f = PlaneFit(0.3, -0.4, 0, 3)
    assert slope_angle(f) == pytest.approx(math.acos(1 / math.sqrt(0.25 + 1)), abs=1e-12)


def test_roughness_examples():
    f = PlaneFit(0.2, 0.1, 0.5, 3)
    xy = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], float)
    on = np.column_stack([xy, f(xy[:, 0], xy[:, 1])])
    assert roughness(on, f) == pytest.approx(0.0, abs=1e-15)
    h = 0.03
    flat = PlaneFit(0, 0, 0, 4)
    pts = np.column_stack([xy, [h, -h, h, -h]])
    assert roughness(pts, flat) == pytest.approx(h, abs=1e-15)
    # perpendicular, not vertical, distance on a tilted plane
    tilted = PlaneFit(1.0, 0.0, 0.0, 4)
    assert roughness(np.array([[0.0, 0.0, 1.0]]), tilted) == pytest.approx(1 / math.sqrt(2))
