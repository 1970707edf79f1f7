"""MPPI path follower with terrain-aware trajectory costs.

Controls are (linear, angular) accelerations integrated through a
saturating unicycle model.  Every control step samples K perturbed copies
of the nominal sequence, rolls them out, scores each rollout with
``S = sum(alpha_i * S_i ** beta_i)`` and replaces the nominal by the
softmax-weighted average of the samples.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from numba import njit

from . import _kernels
from .elevation_grid import ElevationGrid
from .errors import InvalidArgument
from .terrain_metrics import TraversabilityGrid

COST_NAMES = ("path", "goal", "backward", "st", "slope", "rough")


def wrap_angle(a):
    """Map angles to (-pi, pi]; angles already in range pass through unchanged."""
    a = np.asarray(a, dtype=float)
    w = np.mod(a + math.pi, 2 * math.pi) - math.pi
    w = np.where(w == -math.pi, math.pi, w)
    w = np.where((a > -math.pi) & (a <= math.pi), a, w)
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True)
class RobotLimits:
    v_max: float = 0.5
    w_max: float = 1.3
    a_max: float = 1.0
    alpha_max: float = 3.0


@dataclass
class RobotState:
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0
    v: float = 0.0
    w: float = 0.0

    @property
    def p(self):
        return np.array([self.x, self.y, self.z])

    @property
    def q(self):
        return np.array([self.roll, self.pitch, self.yaw])

    @property
    def pose6(self):
        return (self.x, self.y, self.z, self.roll, self.pitch, self.yaw)

    def as_dict(self):
        return {k: float(getattr(self, k)) for k in ("x", "y", "z", "roll", "pitch", "yaw", "v", "w")}


@dataclass(frozen=True)
class ControlInput:
    a: float = 0.0
    alpha: float = 0.0


def attitude_from_plane(a, b, yaw):
    """(roll, pitch) of a body resting on ``z = a x + b y + c`` with heading yaw.

    Positive pitch is nose-down and positive roll lifts the left side.
    """
    s_fwd = a * math.cos(yaw) + b * math.sin(yaw)
    s_left = -a * math.sin(yaw) + b * math.cos(yaw)
    norm = math.sqrt(a * a + b * b + 1.0)
    return math.asin(s_left / norm), -math.atan(s_fwd)


def dynamics_step(state: RobotState, u, dt: float, limits: RobotLimits = RobotLimits(),
                  terrain: Optional[ElevationGrid] = None, body_radius: float = 0.15) -> RobotState:
    """One saturating unicycle step; z/roll/pitch come from a plane fit of the
    terrain under the body (flat zero without terrain or support)."""
    a, alpha = (u.a, u.alpha) if isinstance(u, ControlInput) else u
    v = min(max(state.v + a * dt, -limits.v_max), limits.v_max)
    w = min(max(state.w + alpha * dt, -limits.w_max), limits.w_max)
    yaw = wrap_angle(state.yaw + w * dt)
    x = state.x + v * math.cos(yaw) * dt
    y = state.y + v * math.sin(yaw) * dt
    z = roll = pitch = 0.0
    if terrain is not None:
        pa, pb, pc, _, _, ok = _kernels.footprint_fit(
            terrain.heights, terrain.known, float(terrain.origin_xy[0]),
            float(terrain.origin_xy[1]), float(terrain.resolution), x, y, body_radius)
        if ok:
            z = pa * x + pb * y + pc
            roll, pitch = attitude_from_plane(pa, pb, yaw)
        else:
            z, roll, pitch = state.z, state.roll, state.pitch
    return RobotState(x, y, z, roll, pitch, yaw, v, w)


@njit(cache=True)
def _rollout(x0, y0, yaw0, v0, w0, controls, dt, v_max, w_max):
    k_n, t_n, _ = controls.shape
    xs = np.empty((k_n, t_n + 1))
    ys = np.empty((k_n, t_n + 1))
    yaws = np.empty((k_n, t_n + 1))
    vs = np.empty((k_n, t_n + 1))
    ws = np.empty((k_n, t_n + 1))
    for k in range(k_n):
        x, y, yaw, v, w = x0, y0, yaw0, v0, w0
        xs[k, 0], ys[k, 0], yaws[k, 0], vs[k, 0], ws[k, 0] = x, y, yaw, v, w
        for t in range(t_n):
            v = min(max(v + controls[k, t, 0] * dt, -v_max), v_max)
            w = min(max(w + controls[k, t, 1] * dt, -w_max), w_max)
            yaw = yaw + w * dt
            if yaw > math.pi or yaw <= -math.pi:
                yaw = (yaw + math.pi) % (2 * math.pi) - math.pi
                if yaw == -math.pi:
                    yaw = math.pi
            x = x + v * math.cos(yaw) * dt
            y = y + v * math.sin(yaw) * dt
            xs[k, t + 1], ys[k, t + 1], yaws[k, t + 1] = x, y, yaw
            vs[k, t + 1], ws[k, t + 1] = v, w
    return xs, ys, yaws, vs, ws


@dataclass
class Trajectory:
    """States (arrays of length T+1, or (K, T+1) for a batch) and controls."""

    x: np.ndarray
    y: np.ndarray
    yaw: np.ndarray
    v: np.ndarray
    w: np.ndarray
    controls: Optional[np.ndarray] = None

    def __len__(self):
        return np.shape(self.x)[-1]

    def state(self, k, t=None) -> RobotState:
        idx = k if t is None else (k, t)
        return RobotState(x=float(self.x[idx]), y=float(self.y[idx]), yaw=float(self.yaw[idx]),
                          v=float(self.v[idx]), w=float(self.w[idx]))

    def predicted(self) -> "Trajectory":
        """Drop the initial state: the T poses a cost function scores."""
        return Trajectory(self.x[..., 1:], self.y[..., 1:], self.yaw[..., 1:], self.v[..., 1:],
                          self.w[..., 1:], self.controls)

    @classmethod
    def from_points(cls, xs, ys, v=None):
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        v = np.zeros_like(xs) if v is None else np.broadcast_to(np.asarray(v, dtype=float), xs.shape)
        return cls(xs, ys, np.zeros_like(xs), v, np.zeros_like(xs))


def rollout(state: RobotState, controls, dt: float, limits: RobotLimits = RobotLimits()) -> Trajectory:
    """Planar rollouts of (T, 2) or (K, T, 2) control sequences."""
    controls = np.asarray(controls, dtype=float)
    single = controls.ndim == 2
    c = np.ascontiguousarray(controls[None] if single else controls)
    xs, ys, yaws, vs, ws = _rollout(float(state.x), float(state.y), float(state.yaw),
                                    float(state.v), float(state.w), c, float(dt),
                                    float(limits.v_max), float(limits.w_max))
    if single:
        return Trajectory(xs[0], ys[0], yaws[0], vs[0], ws[0], controls)
    return Trajectory(xs, ys, yaws, vs, ws, controls)


# ---------------------------------------------------------------------------
# Cost components
# ---------------------------------------------------------------------------

@njit(cache=True)
def _polyline_distance(px, py, path):
    out = np.empty(px.shape[0])
    n_seg = path.shape[0] - 1
    for k in range(px.shape[0]):
        best = np.inf
        if n_seg == 0:
            best = math.hypot(px[k] - path[0, 0], py[k] - path[0, 1])
        for s in range(n_seg):
            ax, ay = path[s, 0], path[s, 1]
            bx, by = path[s + 1, 0], path[s + 1, 1]
            dx, dy = bx - ax, by - ay
            l2 = dx * dx + dy * dy
            t = 0.0
            if l2 > 0.0:
                t = ((px[k] - ax) * dx + (py[k] - ay) * dy) / l2
                t = min(max(t, 0.0), 1.0)
            d = math.hypot(px[k] - ax - t * dx, py[k] - ay - t * dy)
            if d < best:
                best = d
        out[k] = best
    return out


def _path_array(global_path):
    pts = getattr(global_path, "waypoints", global_path)
    pts = np.ascontiguousarray(pts, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise InvalidArgument("path must have at least one point")
    return pts


def cost_path_distance(traj: Trajectory, global_path):
    """Mean distance from the trajectory's positions to the polyline."""
    x = np.asarray(traj.x, dtype=float)
    d = _polyline_distance(np.ascontiguousarray(x.ravel()),
                           np.ascontiguousarray(np.asarray(traj.y, dtype=float).ravel()),
                           _path_array(global_path))
    out = d.reshape(x.shape).mean(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def cost_goal_distance(traj: Trajectory, goal, mode: str = "final"):
    """Distance from the final position (or the closest one, ``mode='min'``)
    to the goal."""
    d = np.hypot(np.asarray(traj.x) - goal[0], np.asarray(traj.y) - goal[1])
    out = d[..., -1] if mode == "final" else d.min(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def cost_backward(traj: Trajectory, dt: float):
    """Distance driven with negative body-forward speed."""
    out = np.sum(np.maximum(0.0, -np.asarray(traj.v, dtype=float)), axis=-1) * dt
    return float(out) if np.ndim(out) == 0 else out


def clearance(trav: TraversabilityGrid, xs, ys):
    """Distance-field lookup; zero on inflated-blocked cells and off the map."""
    xs = np.ascontiguousarray(np.ravel(xs), dtype=float)
    ys = np.ascontiguousarray(np.ravel(ys), dtype=float)
    ox, oy = trav.origin_xy
    d = _kernels.bilinear_field(trav.distance_field, float(ox), float(oy),
                                float(trav.resolution), xs, ys, 0.0)
    rows, cols = trav.inflated_mask.shape
    i = np.floor((xs - ox) / trav.resolution + 0.5).astype(np.int64)
    j = np.floor((ys - oy) / trav.resolution + 0.5).astype(np.int64)
    inside = (i >= 0) & (i < rows) & (j >= 0) & (j < cols)
    hit = np.ones(len(xs), dtype=bool)
    hit[inside] = trav.inflated_mask[i[inside], j[inside]]
    d[hit] = 0.0
    return d


def cost_slope_traversability(traj: Trajectory, trav: TraversabilityGrid, regularizer: float = 0.05,
                              cap: float = 2.0, mode: str = "min"):
    """Inverse clearance: 1 / (d + d0) with d the trajectory's minimum
    distance to untraversable cells (capped), or the per-state sum of the
    same quantity when ``mode='sum'``."""
    x = np.asarray(traj.x, dtype=float)
    d = np.minimum(clearance(trav, x, traj.y).reshape(x.shape), cap)
    if mode == "min":
        out = 1.0 / (d.min(axis=-1) + regularizer)
    else:
        out = np.sum(1.0 / (d + regularizer), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def footprint_prefix(grid: ElevationGrid) -> np.ndarray:
    """Row prefix sums for footprint fits, cached on the grid per version."""
    cached = getattr(grid, "_footprint_prefix", None)
    key = (grid.version, id(grid.heights), id(grid.known))
    if cached is None or cached[0] != key:
        cached = (key, _kernels.footprint_prefix(grid.heights, grid.known))
        grid._footprint_prefix = cached
    return cached[1]


def footprint_terms(grid: ElevationGrid, xs, ys, r: float):
    """Per-position (slope angle, roughness, supported) from footprint fits."""
    xs = np.ascontiguousarray(np.ravel(xs), dtype=float)
    ys = np.ascontiguousarray(np.ravel(ys), dtype=float)
    pre = footprint_prefix(grid)
    return _kernels.footprint_slope_rough(pre, float(grid.origin_xy[0]), float(grid.origin_xy[1]),
                                          float(grid.resolution), xs, ys, float(r))


def cost_slope_roughness(traj: Trajectory, grid: ElevationGrid, r: float,
                         slope_penalty: float = 1.0, rough_penalty: float = 0.2):
    """(S_slope, S_rough): sums of footprint inclination and RMS plane
    residual along the trajectory.  Footprints with fewer than three known
    cells add the penalties instead."""
    x = np.asarray(traj.x, dtype=float)
    slope, rough, ok = footprint_terms(grid, x, traj.y, r)
    slope = np.where(ok, slope, slope_penalty).reshape(x.shape)
    rough = np.where(ok, rough, rough_penalty).reshape(x.shape)
    s, r_ = slope.sum(axis=-1), rough.sum(axis=-1)
    if np.ndim(s) == 0:
        return float(s), float(r_)
    return s, r_


@dataclass(frozen=True)
class CostTerm:
    alpha: float = 1.0
    beta: float = 1.0


def total_cost(components: dict, weights: dict):
    """sum(alpha * S ** beta) over components with alpha > 0.

    ``components`` maps names to values or zero-argument callables; callables
    are only evaluated for weighted terms.
    """
    total = 0.0
    for name, term in weights.items():
        if isinstance(term, tuple):
            term = CostTerm(*term)
        if term.alpha < 0:
            raise InvalidArgument(f"negative weight for {name}")
        if term.alpha == 0:
            continue
        value = components[name]
        if callable(value):
            value = value()
        total = total + term.alpha * np.power(value, term.beta)
    return total


# ---------------------------------------------------------------------------
# Controller
# ---------------------------------------------------------------------------

def default_weights(variant: str) -> dict:
    """Calibrated cost profile for the ST or SR variant."""
    common = {"path": CostTerm(8.0, 1.0), "goal": CostTerm(4.0, 1.0), "backward": CostTerm(10.0, 1.0)}
    if variant == "st":
        return {**common, "st": CostTerm(4.0, 1.0)}
    if variant == "sr":
        return {**common, "slope": CostTerm(0.5, 1.0), "rough": CostTerm(30.0, 1.0)}
    raise InvalidArgument(f"unknown variant {variant!r}")


@dataclass
class MppiConfig:
    samples: int = 300
    horizon: int = 30
    dt: float = 0.1
    noise_std: tuple = (0.6, 1.5)
    temperature: float = 1.0
    limits: RobotLimits = RobotLimits()
    footprint_radius: float = 0.3
    weights: dict = field(default_factory=lambda: default_weights("sr"))
    seed: int = 0
    st_regularizer: float = 0.05
    st_cap: float = 2.0
    st_mode: str = "min"
    goal_mode: str = "final"
    slope_penalty: float = 1.0
    rough_penalty: float = 0.2
    keep_nominal: bool = True

    def __post_init__(self):
        if self.samples < 1 or self.horizon < 1:
            raise InvalidArgument("samples and horizon must be >= 1")
        if not self.dt > 0 or not self.temperature > 0:
            raise InvalidArgument("dt and temperature must be positive")
        for name, term in self.weights.items():
            if name not in COST_NAMES:
                raise InvalidArgument(f"unknown cost component {name!r}")
            if isinstance(term, (tuple, list)):
                self.weights[name] = term = CostTerm(*term)
            if term.alpha < 0:
                raise InvalidArgument(f"negative weight for {name}")

    def with_variant(self, variant: str) -> "MppiConfig":
        return replace(self, weights=default_weights(variant))


def sample_control_sequences(nominal, config: MppiConfig, step_index: int = 0) -> np.ndarray:
    """K perturbed copies of the (T, 2) nominal, clamped to acceleration limits.

    Noise for a control step is drawn from a Philox stream keyed by
    (seed, step_index) and laid out sample-major, so sample k's noise is a
    fixed slice regardless of how the rollouts are later evaluated.
    """
    nominal = np.asarray(nominal, dtype=float)
    rng = np.random.Generator(np.random.Philox(key=[config.seed & 0xFFFFFFFFFFFFFFFF,
                                                    step_index & 0xFFFFFFFFFFFFFFFF]))
    noise = rng.standard_normal((config.samples, config.horizon, 2))
    noise *= np.asarray(config.noise_std, dtype=float)
    if config.keep_nominal:
        noise[0] = 0.0
    seqs = nominal[None] + noise
    lim = config.limits
    np.clip(seqs[..., 0], -lim.a_max, lim.a_max, out=seqs[..., 0])
    np.clip(seqs[..., 1], -lim.alpha_max, lim.alpha_max, out=seqs[..., 1])
    return seqs


def softmax_weights(costs, temperature: float) -> np.ndarray:
    costs = np.asarray(costs, dtype=float)
    e = np.exp(-(costs - costs.min()) / temperature)
    return e / e.sum()


@dataclass
class StepDiagnostics:
    step_index: int
    components: dict
    total: float
    min_cost: float
    ess: float
    degenerate: bool
    wall_ms: float
    trajectory: Optional[Trajectory] = None

    def to_json(self):
        return {"step": self.step_index, "costs": {k: float(v) for k, v in self.components.items()},
                "total": float(self.total), "min_cost": float(self.min_cost),
                "ess": float(self.ess), "degenerate": bool(self.degenerate),
                "wall_ms": float(self.wall_ms)}


def evaluate_costs(traj: Trajectory, config: MppiConfig, grid: Optional[ElevationGrid],
                   trav: Optional[TraversabilityGrid], global_path, goal):
    """(total cost, per-component dict, hazard flags) for predicted states."""
    w = config.weights
    comps = {}
    hazard = np.zeros(np.shape(traj.x)[:-1], dtype=bool)
    if w.get("path", CostTerm(0)).alpha > 0:
        comps["path"] = cost_path_distance(traj, global_path)
    if w.get("goal", CostTerm(0)).alpha > 0:
        comps["goal"] = cost_goal_distance(traj, goal, config.goal_mode)
    if w.get("backward", CostTerm(0)).alpha > 0:
        comps["backward"] = cost_backward(traj, config.dt)
    if w.get("st", CostTerm(0)).alpha > 0:
        x = np.asarray(traj.x)
        d = np.minimum(clearance(trav, x, traj.y).reshape(x.shape), config.st_cap)
        if config.st_mode == "min":
            comps["st"] = 1.0 / (d.min(axis=-1) + config.st_regularizer)
        else:
            comps["st"] = np.sum(1.0 / (d + config.st_regularizer), axis=-1)
        hazard |= d.min(axis=-1) <= 0.0
    if w.get("slope", CostTerm(0)).alpha > 0 or w.get("rough", CostTerm(0)).alpha > 0:
        x = np.asarray(traj.x)
        slope, rough, ok = footprint_terms(grid, x, traj.y, config.footprint_radius)
        ok = ok.reshape(x.shape)
        comps["slope"] = np.where(ok, slope.reshape(x.shape), config.slope_penalty).sum(axis=-1)
        comps["rough"] = np.where(ok, rough.reshape(x.shape), config.rough_penalty).sum(axis=-1)
        hazard |= ~ok.all(axis=-1)
    total = total_cost(comps, {k: v for k, v in w.items() if k in comps})
    return total, comps, hazard


def braking_control(state: RobotState, config: MppiConfig) -> np.ndarray:
    lim, dt = config.limits, config.dt
    return np.array([np.clip(-state.v / dt, -lim.a_max, lim.a_max),
                     np.clip(-state.w / dt, -lim.alpha_max, lim.alpha_max)])


def mppi_step(state: RobotState, nominal, grid: Optional[ElevationGrid],
              trav: Optional[TraversabilityGrid], global_path, config: MppiConfig,
              goal=None, step_index: int = 0, keep_trajectory: bool = False):
    """One MPPI iteration.

    Returns ``(u0, next_nominal, diagnostics)`` where ``next_nominal`` is the
    updated sequence shifted by one step (zero-padded) for warm starting.
    """
    t0 = time.perf_counter()
    nominal = np.asarray(nominal, dtype=float)
    if nominal.shape != (config.horizon, 2):
        raise InvalidArgument(f"nominal must have shape ({config.horizon}, 2), got {nominal.shape}")
    path = _path_array(global_path)
    goal = path[-1] if goal is None else np.asarray(goal, dtype=float)
    seqs = sample_control_sequences(nominal, config, step_index)
    rolls = rollout(state, seqs, config.dt, config.limits).predicted()
    costs, _, hazard = evaluate_costs(rolls, config, grid, trav, path, goal)
    costs = np.broadcast_to(np.asarray(costs, dtype=float), (config.samples,))
    weights = softmax_weights(costs, config.temperature)
    ess = 1.0 / float(np.sum(weights ** 2))
    degenerate = bool(np.all(hazard))
    if degenerate:
        u0 = braking_control(state, config)
        updated = np.zeros_like(nominal)
        updated[0] = u0
    else:
        updated = np.tensordot(weights, seqs, axes=1)
        u0 = updated[0].copy()
    chosen = rollout(state, updated, config.dt, config.limits)
    total, comps, _ = evaluate_costs(chosen.predicted(), config, grid, trav, path, goal)
    next_nominal = np.vstack([updated[1:], np.zeros((1, 2))])
    diag = StepDiagnostics(step_index=step_index, components={k: float(v) for k, v in comps.items()},
                           total=float(total), min_cost=float(costs.min()), ess=ess,
                           degenerate=degenerate, wall_ms=(time.perf_counter() - t0) * 1e3,
                           trajectory=chosen if keep_trajectory else None)
    return u0, next_nominal, diag
