"""Deterministic closed-loop episodes on a ground-truth height field."""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels, elevation_grid as eg
from .elevation_grid import ElevationGrid, generate_map
from .errors import InvalidEndpoint, InvalidScenario, Unreachable
from .mapping import (FILL_RADIUS, INIT_FILL_RADIUS, MeasurementModel, PointCloud, fill_footprint,
                      integrate_cloud, rotation_matrix)
from .mppi import (CostTerm, MppiConfig, RobotLimits, RobotState, dynamics_step, mppi_step,
                   wrap_angle)
from .planner import GridPath, plan_theta_star
from .terrain_metrics import TraversabilityConfig, build_traversability

TIP_THRESHOLD = 0.45
BODY_RADIUS = 0.15
OUTCOMES = ("success", "timeout", "tip_over", "stuck")


# ---------------------------------------------------------------------------
# Depth camera
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CameraModel:
    width: int = 160
    height: int = 120
    hfov: float = 1.5
    max_range: float = 4.0
    mount_forward: float = 0.1
    mount_height: float = 0.18
    mount_pitch: float = 0.35
    depth_noise: float = 0.0
    march_step: float = 0.02
    march_tol: float = 1e-4

    @property
    def focal(self):
        return (self.width / 2) / math.tan(self.hfov / 2)

    def sensor_pose(self, state: RobotState):
        """World pose of the camera rigidly mounted on the robot body."""
        R = rotation_matrix(state.roll, state.pitch, state.yaw)
        offset = R @ np.array([self.mount_forward, 0.0, self.mount_height])
        return (state.x + offset[0], state.y + offset[1], state.z + offset[2],
                state.roll, state.pitch + self.mount_pitch, state.yaw)


def pixel_rays(camera: CameraModel) -> np.ndarray:
    """Unit ray directions in the sensor frame (x forward, y left, z up)."""
    u = np.arange(camera.width) - (camera.width - 1) / 2
    v = np.arange(camera.height) - (camera.height - 1) / 2
    uu, vv = np.meshgrid(u, v)
    d = np.stack([np.full(uu.shape, camera.focal), -uu, -vv], axis=-1).reshape(-1, 3)
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def render_depth_cloud(terrain: ElevationGrid, sensor_pose, camera: CameraModel = CameraModel(),
                       rng: Optional[np.random.Generator] = None) -> PointCloud:
    """Ray-cast one ray per pixel against the terrain; misses are dropped."""
    rays = pixel_rays(camera)
    x, y, z, roll, pitch, yaw = sensor_pose
    R = rotation_matrix(roll, pitch, yaw)
    dirs = np.ascontiguousarray(rays @ R.T)
    origins = np.ascontiguousarray(np.broadcast_to(np.array([x, y, z], dtype=float), dirs.shape))
    t = _kernels.raycast_heightfield(terrain.heights, terrain.known, float(terrain.origin_xy[0]),
                                     float(terrain.origin_xy[1]), float(terrain.resolution),
                                     origins, dirs, float(camera.max_range),
                                     float(camera.march_step), float(camera.march_tol))
    hit = ~np.isnan(t)
    t = t[hit]
    if camera.depth_noise > 0 and rng is not None:
        t = t + rng.normal(0.0, camera.depth_noise, size=t.shape)
    return PointCloud(rays[hit] * t[:, None], tuple(float(v) for v in sensor_pose))


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------

_SPEC_TYPES = {"cone": eg.ConeMap, "ramp": eg.RampMap, "pits": eg.PitsMap, "course": eg.CourseMap,
               "flat": eg.Flat, "file": eg.FileMap}


def spec_name(spec) -> str:
    for name, cls in _SPEC_TYPES.items():
        if isinstance(spec, cls):
            return name
    raise TypeError(f"not a map spec: {spec!r}")


def _tuplify(v):
    if isinstance(v, list):
        return tuple(_tuplify(x) for x in v)
    return v


def spec_to_dict(spec) -> dict:
    return {"type": spec_name(spec), **dataclasses.asdict(spec)}


def spec_from_dict(d: dict):
    d = dict(d)
    cls = _SPEC_TYPES[d.pop("type")]
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in d:
            continue
        v = d[f.name]
        if f.name in ("pit", "ledge"):
            v = eg.Box(tuple(v["center"]), tuple(v["size"]), v["height"])
        elif f.name == "bricks":
            v = tuple(eg.Box(tuple(b["center"]), tuple(b["size"]), b["height"]) for b in v)
        else:
            v = _tuplify(v)
        kwargs[f.name] = v
    return cls(**kwargs)


def mppi_config_to_dict(cfg: MppiConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["weights"] = {k: [t.alpha, t.beta] for k, t in cfg.weights.items()}
    return d


def mppi_config_from_dict(d: dict) -> MppiConfig:
    d = dict(d)
    if "limits" in d:
        d["limits"] = RobotLimits(**d["limits"])
    if "weights" in d:
        d["weights"] = {k: CostTerm(*v) for k, v in d["weights"].items()}
    if "noise_std" in d:
        d["noise_std"] = tuple(d["noise_std"])
    return MppiConfig(**d)


@dataclass
class Scenario:
    """One navigation task.

    ``planner`` is ``"theta"`` (Theta* on the traversability mask), ``"route"``
    (straight line from the robot to the next of ``route`` waypoints,
    refreshed at the planning cadence) or ``"straight"`` (start-goal line).
    With ``"theta"`` and a ``route``, each waypoint in turn is the planning
    goal.  The route starts at the start position and ends at the goal.
    """

    map_spec: object
    start: tuple
    goal: tuple
    goal_tolerance: float = 0.3
    angle_tolerance: Optional[float] = None
    n_steps: int = 1000
    mppi: MppiConfig = field(default_factory=MppiConfig)
    mapping_mode: str = "ground_truth"
    seed: int = 0
    planner: str = "theta"
    route: Optional[list] = None
    waypoint_tolerance: float = 0.3
    resolution: float = eg.DEFAULT_RESOLUTION
    planner_trav: TraversabilityConfig = TraversabilityConfig(inflation_radius=0.4)
    control_trav: TraversabilityConfig = TraversabilityConfig(unknown_is_blocked=False)
    tip_threshold: float = TIP_THRESHOLD
    plan_every: int = 10
    lookahead: Optional[float] = 2.0
    map_every: int = 10
    stuck_window: int = 100
    stuck_distance: float = 0.05
    camera: CameraModel = CameraModel()
    measurement: MeasurementModel = MeasurementModel()
    label: str = ""

    def __post_init__(self):
        if not self.goal_tolerance > 0 or (self.angle_tolerance is not None and not self.angle_tolerance > 0):
            raise InvalidScenario("goal tolerances must be positive")
        if self.n_steps < 1:
            raise InvalidScenario("n_steps must be >= 1")
        if self.mapping_mode not in ("ground_truth", "online"):
            raise InvalidScenario(f"unknown mapping mode {self.mapping_mode!r}")
        if self.planner not in ("theta", "route", "straight"):
            raise InvalidScenario(f"unknown planner {self.planner!r}")
        if self.planner == "route" and not self.route:
            raise InvalidScenario("route planner needs waypoints")

    def to_dict(self) -> dict:
        return {
            "map_spec": spec_to_dict(self.map_spec),
            "start": list(self.start), "goal": list(self.goal),
            "goal_tolerance": self.goal_tolerance, "angle_tolerance": self.angle_tolerance,
            "n_steps": self.n_steps, "mppi": mppi_config_to_dict(self.mppi),
            "mapping_mode": self.mapping_mode, "seed": self.seed, "planner": self.planner,
            "route": [list(p) for p in self.route] if self.route else None,
            "waypoint_tolerance": self.waypoint_tolerance, "resolution": self.resolution,
            "planner_trav": dataclasses.asdict(self.planner_trav),
            "control_trav": dataclasses.asdict(self.control_trav),
            "tip_threshold": self.tip_threshold, "plan_every": self.plan_every,
            "map_every": self.map_every, "lookahead": self.lookahead,
            "stuck_window": self.stuck_window,
            "stuck_distance": self.stuck_distance, "camera": dataclasses.asdict(self.camera),
            "measurement": dataclasses.asdict(self.measurement), "label": self.label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        d["map_spec"] = spec_from_dict(d["map_spec"])
        d["start"] = tuple(d["start"])
        d["goal"] = tuple(d["goal"])
        if "mppi" in d:
            d["mppi"] = mppi_config_from_dict(d["mppi"])
        if d.get("route"):
            d["route"] = [tuple(p) for p in d["route"]]
        for key, typ in (("planner_trav", TraversabilityConfig), ("control_trav", TraversabilityConfig),
                         ("camera", CameraModel), ("measurement", MeasurementModel)):
            if key in d:
                d[key] = typ(**d[key])
        return cls(**d)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "Scenario":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class EpisodeResult:
    outcome: str
    path_length: float
    steps: int
    sim_time: float
    mean_step_ms: float
    trajectory: np.ndarray
    log: list = field(default_factory=list)
    label: str = ""
    final_goal_distance: float = math.nan
    mapping_calls: int = 0

    @property
    def success(self) -> bool:
        return self.outcome == "success"

    def write_log(self, path):
        """Episode log as JSON lines, one record per control step."""
        with open(path, "w") as fh:
            for rec in self.log:
                fh.write(json.dumps(rec) + "\n")

    def write_trajectory_csv(self, path):
        np.savetxt(path, self.trajectory, delimiter=",", comments="",
                   header="x,y,z,roll,pitch,yaw,v,w", fmt="%.9g")


_MAP_CACHE: dict = {}


def terrain_for(spec, resolution) -> ElevationGrid:
    key = (repr(spec), resolution)
    if key not in _MAP_CACHE:
        if len(_MAP_CACHE) > 8:
            _MAP_CACHE.clear()
        grid = generate_map(spec, resolution)
        if not grid.known.all():
            raise InvalidScenario("terrain maps must be fully known")
        _MAP_CACHE[key] = grid
    return _MAP_CACHE[key]


def settle_state(terrain: ElevationGrid, x, y, yaw, v=0.0, w=0.0) -> RobotState:
    """Robot at (x, y, yaw) resting on the terrain."""
    s = dynamics_step(RobotState(x=x, y=y, yaw=yaw, v=0.0, w=0.0), (0.0, 0.0), 1.0,
                      terrain=terrain, body_radius=BODY_RADIUS)
    return dataclasses.replace(s, v=v, w=w)


class _Mapper:
    """Online belief map fed by the simulated depth camera."""

    def __init__(self, scenario: Scenario, truth: ElevationGrid):
        self.scenario = scenario
        self.truth = truth
        self.belief = eg.create_grid(truth.origin_xy, truth.resolution, truth.rows, truth.cols)
        self.rng = np.random.Generator(np.random.Philox(key=[scenario.seed, 0x6D6170]))
        self.calls = 0
        self.initialised = False

    def update(self, state: RobotState):
        self.calls += 1
        cam = self.scenario.camera
        cloud = render_depth_cloud(self.truth, cam.sensor_pose(state), cam, self.rng)
        integrate_cloud(self.belief, cloud, self.scenario.measurement)
        radius = FILL_RADIUS if self.initialised else INIT_FILL_RADIUS
        fill_footprint(self.belief, state.pose6, radius)
        self.initialised = True


def _blocked_at(trav, x, y):
    ox, oy = trav.origin_xy
    i = math.floor((x - ox) / trav.resolution + 0.5)
    j = math.floor((y - oy) / trav.resolution + 0.5)
    rows, cols = trav.blocked_mask.shape
    return not (0 <= i < rows and 0 <= j < cols) or bool(trav.blocked_mask[i, j])


def run_episode(scenario: Scenario, keep_log: bool = True, mapping_hook=None) -> EpisodeResult:
    """Run one closed-loop episode; deterministic for a fixed scenario."""
    truth = terrain_for(scenario.map_spec, scenario.resolution)
    cfg = dataclasses.replace(scenario.mppi, seed=scenario.seed)
    sx, sy = scenario.start[0], scenario.start[1]
    syaw = scenario.start[2] if len(scenario.start) > 2 else 0.0
    gx, gy = scenario.goal[0], scenario.goal[1]
    gyaw = scenario.goal[2] if len(scenario.goal) > 2 else None

    truth_trav = build_traversability(truth, scenario.planner_trav)
    if _blocked_at(truth_trav, sx, sy):
        raise InvalidScenario(f"start ({sx:.2f}, {sy:.2f}) is on a blocked cell")

    state = settle_state(truth, sx, sy, syaw)
    online = scenario.mapping_mode == "online"
    mapper = _Mapper(scenario, truth) if online else None
    belief = mapper.belief if online else truth

    route = [tuple(p[:2]) for p in scenario.route] if scenario.route else None
    target_idx = 1 if route else None

    needs_st = cfg.weights.get("st", CostTerm(0)).alpha > 0
    control_trav = None
    plan_trav = None if online else truth_trav
    path = None
    path_version = None

    nominal = np.zeros((cfg.horizon, 2))
    traj = [state]
    log = []
    step_ms = []
    length = 0.0
    outcome = "timeout"
    steps = 0

    def goal_reached(s):
        if math.hypot(s.x - gx, s.y - gy) >= scenario.goal_tolerance:
            return False
        if scenario.angle_tolerance is not None and gyaw is not None:
            return abs(wrap_angle(s.yaw - gyaw)) < scenario.angle_tolerance
        return True

    for step in range(scenario.n_steps + 1):
        if route is None or target_idx == len(route) - 1:
            if goal_reached(state):
                outcome = "success"
                break
        if step == scenario.n_steps:
            break
        if route is not None:
            while target_idx < len(route) - 1 and math.hypot(
                    state.x - route[target_idx][0], state.y - route[target_idx][1]) < scenario.waypoint_tolerance:
                target_idx += 1
                path = None

        if online and step % scenario.map_every == 0:
            mapper.update(state)
            if mapping_hook is not None:
                mapping_hook(step)

        if path is None or step % scenario.plan_every == 0:
            path = _plan(scenario, state, belief, route, target_idx, path, path_version,
                         plan_trav, online)
            path_version = belief.version
            if scenario.planner == "theta" and online:
                plan_trav = None

        t0 = time.perf_counter()
        if needs_st and (control_trav is None or control_trav.source_version != belief.version):
            control_trav = build_traversability(belief, scenario.control_trav)
        if scenario.planner == "route":
            local_goal = route[target_idx]
        elif scenario.lookahead is not None:
            local_goal = lookahead_point(path.waypoints, (state.x, state.y), scenario.lookahead)
        else:
            local_goal = (gx, gy)
        u, nominal, diag = mppi_step(state, nominal, belief, control_trav, path, cfg,
                                     goal=local_goal, step_index=step)
        step_ms.append((time.perf_counter() - t0) * 1e3)

        new_state = dynamics_step(state, u, cfg.dt, cfg.limits, terrain=truth, body_radius=BODY_RADIUS)
        length += math.hypot(new_state.x - state.x, new_state.y - state.y)
        state = new_state
        traj.append(state)
        steps = step + 1
        if keep_log:
            rec = {"step": step, "state": state.as_dict(), "control": [float(u[0]), float(u[1])],
                   **diag.to_json()}
            rec["wall_ms"] = step_ms[-1]
            if route:
                rec["target"] = target_idx
            log.append(rec)
        if abs(state.roll) > scenario.tip_threshold or abs(state.pitch) > scenario.tip_threshold:
            outcome = "tip_over"
            break
        w = scenario.stuck_window
        if len(traj) > w and math.hypot(state.x - traj[-1 - w].x, state.y - traj[-1 - w].y) < scenario.stuck_distance:
            outcome = "stuck"
            break

    arr = np.array([[s.x, s.y, s.z, s.roll, s.pitch, s.yaw, s.v, s.w] for s in traj])
    return EpisodeResult(
        outcome=outcome, path_length=length, steps=steps, sim_time=steps * cfg.dt,
        mean_step_ms=float(np.mean(step_ms)) if step_ms else 0.0, trajectory=arr, log=log,
        label=scenario.label, final_goal_distance=math.hypot(state.x - gx, state.y - gy),
        mapping_calls=mapper.calls if mapper else 0)


def lookahead_point(path, p, distance):
    """Point ``distance`` metres along the polyline past the projection of
    ``p`` onto it, clamped to the final vertex."""
    pts = np.asarray(path, dtype=float).reshape(-1, 2)
    if len(pts) == 1:
        return tuple(pts[0])
    seg = np.diff(pts, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    best, best_s = np.inf, 0.0
    s0 = 0.0
    for k in range(len(seg)):
        t = 0.0
        if seg_len[k] > 0:
            t = float(np.clip(np.dot(np.asarray(p) - pts[k], seg[k]) / seg_len[k] ** 2, 0.0, 1.0))
        d = math.hypot(*(pts[k] + t * seg[k] - p))
        if d < best:
            best, best_s = d, s0 + t * seg_len[k]
        s0 += seg_len[k]
    target = best_s + distance
    s0 = 0.0
    for k in range(len(seg)):
        if s0 + seg_len[k] >= target and seg_len[k] > 0:
            t = (target - s0) / seg_len[k]
            return tuple(pts[k] + t * seg[k])
        s0 += seg_len[k]
    return tuple(pts[-1])


def _plan(scenario, state, belief, route, target_idx, old_path, old_version, plan_trav, online):
    here = (state.x, state.y)
    if scenario.planner == "route":
        return GridPath(np.array([here, route[target_idx]]))
    goal = tuple(route[target_idx]) if route else tuple(scenario.goal[:2])
    if scenario.planner == "straight":
        return GridPath(np.array([tuple(scenario.start[:2]), goal]))
    if old_path is not None and old_version == belief.version:
        return old_path
    trav = plan_trav if plan_trav is not None else build_traversability(belief, scenario.planner_trav)
    for mask in (trav.inflated_mask, trav.blocked_mask):
        try:
            return plan_theta_star(mask, here, goal, belief.origin_xy, belief.resolution)
        except (InvalidEndpoint, Unreachable):
            continue
    if old_path is not None and np.allclose(old_path.waypoints[-1], goal):
        return old_path
    return GridPath(np.array([here, goal]))
