"""Property suites over the numeric core: traversability, plane fits, MPPI
sampling and weighting, planning, distance fields and episode replay."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from terranav import elevation_grid as eg
from terranav.mppi import (MppiConfig, RobotLimits, RobotState, rollout, sample_control_sequences,
                           softmax_weights)
from terranav.planner import line_of_sight, plan_a_star, plan_theta_star
from terranav.errors import Unreachable
from terranav.sim import Scenario, run_episode
from terranav.terrain_metrics import (PlaneFit, TraversabilityConfig, build_traversability,
                                      distance_to_mask, fit_plane, roughness, slope_angle,
                                      traversability_layer)

from test_planner import dijkstra_oracle, los_oracle

finite = dict(allow_nan=False, allow_infinity=False)


def known_grid(heights, res):
    g = eg.create_grid((0.0, 0.0), res, *heights.shape)
    g.heights[:] = heights
    g.variance[:] = 0.0
    g.known[:] = True
    return g


# traversability

@given(st.integers(3, 25), st.integers(3, 25), st.floats(-5, 5, **finite), st.floats(0.01, 0.5),
       st.integers(1, 4), st.floats(0.1, 10))
def test_flat_grid_is_fully_traversable(rows, cols, z, res, delta, lam):
    g = known_grid(np.full((rows, cols), z), res)
    assert np.all(traversability_layer(g, TraversabilityConfig(delta=delta, lam=lam)) == 1.0)


@given(st.integers(0, 8), st.integers(0, 8), st.floats(-1, 1, **finite), st.floats(0.02, 0.3),
       st.integers(1, 3), st.floats(0.1, 8))
def test_single_spike_stencil(si, sj, spike, res, delta, lam):
    z = np.zeros((9, 9))
    z[si, sj] = spike
    g = known_grid(z, res)
    layer = traversability_layer(g, TraversabilityConfig(delta=delta, lam=lam))
    h = g.heights.astype(float)
    for i in range(9):
        for j in range(9):
            def at(a, b):
                return h[min(max(a, 0), 8), min(max(b, 0), 8)]
            s_h = abs(at(i, j + delta) - at(i, j - delta)) / (2 * delta * res)
            s_v = abs(at(i + delta, j) - at(i - delta, j)) / (2 * delta * res)
            assert layer[i, j] == pytest.approx(math.exp(-lam * (s_h + s_v) / 2), abs=1e-12)


def test_blocking_monotone_in_lambda():
    rng = np.random.default_rng(6)
    for _ in range(100):
        g = known_grid(rng.normal(0, 0.05, (16, 16)), 0.1)
        lam = np.sort(rng.uniform(0.1, 10, 2))
        lo = build_traversability(g, TraversabilityConfig(lam=float(lam[0]))).blocked_mask
        hi = build_traversability(g, TraversabilityConfig(lam=float(lam[1]))).blocked_mask
        assert np.all(hi >= lo)


# plane fit

planes = st.tuples(st.floats(-2, 2, **finite), st.floats(-2, 2, **finite), st.floats(-3, 3, **finite))


@given(planes, st.integers(3, 60), st.integers(0, 2 ** 32 - 1))
def test_exact_plane_recovery(abc, n, seed):
    a, b, c = abc
    xy = np.random.default_rng(seed).uniform(-1, 1, (n, 2))
    if np.linalg.matrix_rank(np.column_stack([xy, np.ones(n)]), tol=1e-3) < 3:
        return
    pts = np.column_stack([xy, a * xy[:, 0] + b * xy[:, 1] + c])
    f = fit_plane(pts)
    assert (f.a, f.b, f.c) == pytest.approx((a, b, c), abs=1e-9)
    assert roughness(pts, f) < 1e-9


@given(st.floats(-50, 50, **finite), st.floats(-50, 50, **finite))
def test_slope_angle_is_arctan_gradient(a, b):
    assert slope_angle(PlaneFit(a, b, 0.0, 3)) == pytest.approx(math.atan(math.hypot(a, b)), abs=1e-12)


# MPPI

costs_arr = arrays(np.float64, st.integers(1, 50), elements=st.floats(0, 1e4, **finite))


@given(costs_arr, st.floats(0.01, 10))
def test_softmax_weights_normalised(costs, temp):
    w = softmax_weights(costs, temp)
    assert np.all(w >= 0) and abs(w.sum() - 1.0) < 1e-12


@given(costs_arr, st.floats(0.01, 10), st.floats(-1e3, 1e3, **finite))
def test_softmax_shift_invariant(costs, temp, shift):
    assert np.allclose(softmax_weights(costs, temp), softmax_weights(costs + shift, temp), atol=1e-12, rtol=0)


@given(st.integers(1, 30), st.integers(1, 20), st.integers(0, 2 ** 31), st.integers(0, 1000))
def test_zero_noise_sampling_is_nominal(k, t, seed, step):
    cfg = MppiConfig(samples=k, horizon=t, noise_std=(0.0, 0.0), seed=seed)
    nominal = np.random.default_rng(seed).uniform(-1, 1, (t, 2))
    assert np.array_equal(sample_control_sequences(nominal, cfg, step), np.broadcast_to(nominal, (k, t, 2)))


def test_rollout_respects_velocity_limits():
    rng = np.random.default_rng(8)
    lim = RobotLimits()
    controls = rng.normal(0, 5, (10_000, 30, 2))
    s0 = RobotState(v=rng.uniform(-0.5, 0.5), w=rng.uniform(-1.3, 1.3))
    tr = rollout(s0, controls, 0.1, lim)
    assert np.all(np.abs(tr.v) <= lim.v_max) and np.all(np.abs(tr.w) <= lim.w_max)


# planner

def test_theta_star_collision_free_and_short():
    rng = np.random.default_rng(9)
    done = 0
    for _ in range(200):
        mask = rng.random((30, 30)) < 0.2
        mask[0, 0] = mask[29, 29] = False
        try:
            a = plan_a_star(mask, (0, 0), (29, 29))
        except Unreachable:
            continue
        t = plan_theta_star(mask, (0, 0), (29, 29))
        assert t.length <= a.length + 1e-9
        assert a.length == pytest.approx(dijkstra_oracle(mask, (0, 0), (29, 29)), abs=1e-9)
        for p, q in zip(t.waypoints, t.waypoints[1:]):
            assert line_of_sight(mask, p, q) and los_oracle(mask, p, q)
        done += 1
    assert done >= 100


# distance field

@settings(max_examples=30)
@given(arrays(np.bool_, st.tuples(st.integers(1, 50), st.integers(1, 50)),
              elements=st.booleans()).filter(lambda m: m.any()), st.floats(0.01, 1.0))
def test_distance_field_brute_force(mask, res):
    d = distance_to_mask(mask, res)
    ii, jj = np.indices(mask.shape)
    bi, bj = np.nonzero(mask)
    brute = np.sqrt((ii[..., None] - bi) ** 2 + (jj[..., None] - bj) ** 2).min(axis=-1) * res
    assert np.allclose(d, brute, atol=1e-9)


# determinism

def test_seeded_episode_replays_bit_identically():
    spec = eg.PitsMap()
    for variant in ("st", "sr"):
        cfg = MppiConfig(samples=100).with_variant(variant)
        sc = Scenario(spec, (1.0, 0.8, 0.3), (6.0, 2.6), mppi=cfg, n_steps=60, seed=17,
                      mapping_mode="online")
        a, b = run_episode(sc), run_episode(sc)
        assert np.array_equal(a.trajectory, b.trajectory) and a.outcome == b.outcome
