"""Benchmark harness: seeded scenario generation, suite execution, metrics
aggregation and report emission."""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import elevation_grid as eg
from .errors import GenerationFailure, InvalidArgument
from .mppi import CostTerm, MppiConfig
from .sim import Scenario, run_episode, spec_name, terrain_for
from .terrain_metrics import TraversabilityConfig, build_traversability, distance_to_mask

VARIANTS = ("st", "sr")

# Start/goal rectangles (xmin, xmax, ymin, ymax) per map.  Layout choices in
# the spirit of the experiment figures, not measured values.
ZONES = {
    "cone": ((-4.6, -3.8, -2.5, 2.5), (3.8, 4.6, -2.5, 2.5)),
    "ramp": ((0.5, 1.5, 0.5, 1.5), (10.5, 11.5, 0.5, 2.5)),
    "pits": ((0.5, 1.5, 0.5, 1.0), (10.5, 11.5, 4.0, 4.5)),
}

_MAP_CODES = {"cone": 1, "ramp": 2, "pits": 3, "course": 4, "flat": 5}


@dataclass
class BenchmarkSuite:
    map_spec: object
    count: int = 100
    variant: str = "st"
    mppi: MppiConfig = field(default_factory=MppiConfig)
    seed: int = 0
    mapping_mode: str = "ground_truth"
    n_steps: int = 1000
    goal_tolerance: float = 0.3
    weights: dict = field(default_factory=dict)

    def __post_init__(self):
        if int(self.count) != self.count or self.count < 1:
            raise InvalidArgument(f"scenario count must be >= 1, got {self.count}")
        if self.variant not in VARIANTS:
            raise InvalidArgument(f"variant must be one of {VARIANTS}, got {self.variant!r}")

    @property
    def map_name(self) -> str:
        return spec_name(self.map_spec)

    def controller(self) -> MppiConfig:
        return variant_config(self.mppi, self.variant, self.weights)


def variant_config(base: MppiConfig, variant: str, weights=None) -> MppiConfig:
    """``base`` with the variant's default weights, then ``weights`` overrides
    given as {name: (alpha, beta)}."""
    cfg = base.with_variant(variant)
    if weights:
        merged = dict(cfg.weights)
        merged.update({k: v if isinstance(v, CostTerm) else CostTerm(*v) for k, v in weights.items()})
        cfg = dataclasses.replace(cfg, weights=merged)
    return cfg


# Integration route on the course map: up the gentle ramp, across the
# platform past the pit and ledge, back down, then a loop around the bricks.
COURSE_ROUTE = (
    (5.5, -0.5), (5.5, 3.0), (5.0, 4.35), (6.4, 4.4), (5.5, 0.2), (8.6, 0.2),
    (8.0, -1.6), (3.0, -1.6), (1.2, -0.6), (3.2, 0.8), (5.5, -0.3),
)


def route_length(route) -> float:
    r = np.asarray(route, float)[:, :2]
    return float(np.sum(np.hypot(*np.diff(r, axis=0).T)))


def course_scenario(variant: str = "st", mppi: Optional[MppiConfig] = None, weights=None, route=COURSE_ROUTE,
                    spec=None, mapping_mode: str = "online", seed: int = 0, n_steps: int = 3000,
                    goal_tolerance: float = 0.15, angle_tolerance: float = 0.25, **kw) -> Scenario:
    """Route-following episode on the course map.  The start heading and the
    goal heading follow the first and last route segments."""
    if variant not in VARIANTS:
        raise InvalidArgument(f"variant must be one of {VARIANTS}, got {variant!r}")
    if len(route) < 2:
        raise InvalidArgument("route needs at least two points")
    cfg = variant_config(mppi or MppiConfig(footprint_radius=0.2), variant, weights)
    # Route points are usually unobserved when first targeted, so the planner
    # treats unknown cells as free.
    kw.setdefault("planner_trav", TraversabilityConfig(inflation_radius=0.4, unknown_is_blocked=False))
    pts = [tuple(map(float, p[:2])) for p in route]
    (x0, y0), (x1, y1) = pts[0], pts[1]
    (xa, ya), (xb, yb) = pts[-2], pts[-1]
    return Scenario(
        map_spec=spec or eg.CourseMap(), start=(x0, y0, math.atan2(y1 - y0, x1 - x0)),
        goal=(xb, yb, math.atan2(yb - ya, xb - xa)), goal_tolerance=goal_tolerance,
        angle_tolerance=angle_tolerance, n_steps=n_steps, mppi=cfg, mapping_mode=mapping_mode,
        seed=seed, route=pts, label=f"course-{variant}", **kw)


def route_violations(xy, spec: eg.CourseMap, resolution=eg.DEFAULT_RESOLUTION) -> dict:
    """Counts of trajectory positions on the steep ramp and in brick cells."""
    xy = np.asarray(xy, float)[:, :2]
    x0, x1, y0, y1 = spec.steep_bounds
    on_steep = (xy[:, 0] > x0) & (xy[:, 0] < x1) & (xy[:, 1] > y0) & (xy[:, 1] < y1)
    grid = terrain_for(spec, resolution)
    mask = np.zeros(grid.shape, bool)
    xs, ys = grid.cell_centers()
    for b in spec.bricks:
        mask |= (np.abs(xs - b.center[0]) <= b.size[0] / 2 + 1e-9) & (np.abs(ys - b.center[1]) <= b.size[1] / 2 + 1e-9)
    i, j = grid.world_to_cells(xy[:, 0], xy[:, 1])
    ok = i >= 0
    in_brick = np.zeros(len(xy), bool)
    in_brick[ok] = mask[i[ok], j[ok]]
    return {"steep": int(on_steep.sum()), "brick": int(in_brick.sum())}


# ---------------------------------------------------------------------------
# Scenario generation
# ---------------------------------------------------------------------------

def segment_hits_disk(p, q, center, radius) -> bool:
    p, q, c = (np.asarray(v, dtype=float) for v in (p, q, center))
    d = q - p
    t = 0.0 if not d.any() else float(np.clip(np.dot(c - p, d) / np.dot(d, d), 0.0, 1.0))
    return float(np.linalg.norm(p + t * d - c)) <= radius


def segment_hits_box(p, q, box: eg.Box) -> bool:
    """Liang-Barsky clip of segment pq against an axis-aligned box."""
    (cx, cy), (w, h) = box.center, box.size
    lo = np.array([cx - w / 2, cy - h / 2])
    hi = np.array([cx + w / 2, cy + h / 2])
    p = np.asarray(p, dtype=float)
    d = np.asarray(q, dtype=float) - p
    t0, t1 = 0.0, 1.0
    for k in range(2):
        if d[k] == 0:
            if p[k] < lo[k] or p[k] > hi[k]:
                return False
            continue
        a, b = (lo[k] - p[k]) / d[k], (hi[k] - p[k]) / d[k]
        t0, t1 = max(t0, min(a, b)), min(t1, max(a, b))
        if t0 > t1:
            return False
    return True


def crosses_feature(spec, p, q) -> bool:
    """Whether the straight start-goal segment crosses the map's obstacle."""
    if isinstance(spec, eg.ConeMap):
        return segment_hits_disk(p, q, (0.0, 0.0), spec.base_diameter / 2)
    if isinstance(spec, eg.RampMap):
        return (p[0] - spec.lower_length) * (q[0] - spec.lower_length) < 0
    if isinstance(spec, eg.PitsMap):
        return any(segment_hits_box(p, q, eg.Box(c, spec.pit_size, spec.pit_depth))
                   for c in spec.pit_centers)
    return True


def _free(trav, x, y) -> bool:
    ox, oy = trav.origin_xy
    i = math.floor((x - ox) / trav.resolution + 0.5)
    j = math.floor((y - oy) / trav.resolution + 0.5)
    rows, cols = trav.inflated_mask.shape
    return 0 <= i < rows and 0 <= j < cols and not trav.inflated_mask[i, j]


def scenario_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([master, index]).generate_state(1, np.uint32)[0])


def generate_scenarios(suite: BenchmarkSuite, zones=None, max_attempts: int = 1000) -> list:
    """Sample ``suite.count`` start/goal pairs uniformly from the map's zones.

    Pairs are rejected until both ends lie on free (inflated) cells and the
    segment between them crosses the obstacle feature.  The start heading is
    drawn uniformly from [-pi, pi).
    """
    name = suite.map_name
    zones = zones or ZONES.get(name)
    if zones is None:
        raise InvalidArgument(f"no scenario zones for map {name!r}")
    template = Scenario(suite.map_spec, (0.0, 0.0, 0.0), (0.0, 0.0))
    truth = terrain_for(suite.map_spec, template.resolution)
    trav = build_traversability(truth, template.planner_trav)
    rng = np.random.Generator(np.random.Philox(key=[suite.seed, _MAP_CODES.get(name, 0)]))
    (s_zone, g_zone) = zones
    cfg = suite.controller()
    out = []
    for index in range(suite.count):
        for _ in range(max_attempts):
            sx, sy = rng.uniform(s_zone[0], s_zone[1]), rng.uniform(s_zone[2], s_zone[3])
            gx, gy = rng.uniform(g_zone[0], g_zone[1]), rng.uniform(g_zone[2], g_zone[3])
            if _free(trav, sx, sy) and _free(trav, gx, gy) and crosses_feature(suite.map_spec, (sx, sy), (gx, gy)):
                break
        else:
            raise GenerationFailure(f"{name}: no valid start/goal pair after {max_attempts} draws")
        yaw = float(rng.uniform(-math.pi, math.pi))
        out.append(Scenario(suite.map_spec, (float(sx), float(sy), yaw), (float(gx), float(gy)),
                            goal_tolerance=suite.goal_tolerance, n_steps=suite.n_steps, mppi=cfg,
                            mapping_mode=suite.mapping_mode, seed=scenario_seed(suite.seed, index),
                            label=f"{name}-{suite.variant}-{index:03d}"))
    return out


# ---------------------------------------------------------------------------
# Running and metrics
# ---------------------------------------------------------------------------

@dataclass
class TaskRecord:
    index: int
    label: str
    start: tuple
    goal: tuple
    outcome: str
    path_length: float
    steps: int
    sim_time: float
    mean_step_ms: float
    straight_distance: float
    final_goal_distance: float
    trajectory: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @property
    def success(self) -> bool:
        return self.outcome == "success"

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name != "trajectory"}
        d["start"], d["goal"] = list(self.start), list(self.goal)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TaskRecord":
        d = dict(d)
        d["start"], d["goal"] = tuple(d["start"]), tuple(d["goal"])
        return cls(**d)


def _mean(values):
    values = list(values)
    return float(np.mean(values)) if values else math.nan


@dataclass
class MetricsReport:
    map_name: str
    variant: str
    tasks: list
    wall_seconds: float = 0.0

    @property
    def success_rate(self) -> float:
        return 100.0 * sum(t.success for t in self.tasks) / len(self.tasks) if self.tasks else 0.0

    def means(self, indices=None) -> dict:
        """Means over successful tasks, optionally restricted to ``indices``."""
        sel = [t for t in self.tasks if t.success and (indices is None or t.index in indices)]
        return {
            "path_length": _mean(t.path_length for t in sel),
            "sim_time": _mean(t.sim_time for t in sel),
            "steps": _mean(t.steps for t in sel),
            "straight_distance": _mean(t.straight_distance for t in sel),
            "n": len(sel),
        }

    @property
    def mean_path_length(self) -> float:
        return self.means()["path_length"]

    @property
    def mean_sim_time(self) -> float:
        return self.means()["sim_time"]

    @property
    def mean_step_ms(self) -> float:
        return _mean(t.mean_step_ms for t in self.tasks)

    def summary(self, indices=None) -> dict:
        return {"map": self.map_name, "variant": self.variant, "tasks": len(self.tasks),
                "success_rate": self.success_rate, **self.means(indices),
                "step_ms": self.mean_step_ms, "wall_seconds": self.wall_seconds}

    def to_dict(self) -> dict:
        return {"map": self.map_name, "variant": self.variant, "wall_seconds": self.wall_seconds,
                "tasks": [t.to_dict() for t in self.tasks]}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(d["map"], d["variant"], [TaskRecord.from_dict(t) for t in d["tasks"]],
                   d.get("wall_seconds", 0.0))

    def __eq__(self, other):
        return isinstance(other, MetricsReport) and self.to_dict() == other.to_dict()


def common_successes(*reports) -> set:
    """Task indices solved by every report."""
    sets = [{t.index for t in r.tasks if t.success} for r in reports]
    return set.intersection(*sets) if sets else set()


def compare_variants(reports: dict) -> dict:
    """Per-variant summaries whose means use only the common-success tasks."""
    common = common_successes(*reports.values())
    return {v: r.summary(common) for v, r in reports.items()}


def run_task(scenario: Scenario, index: int = 0) -> TaskRecord:
    res = run_episode(scenario, keep_log=False)
    return TaskRecord(
        index=index, label=scenario.label, start=tuple(scenario.start), goal=tuple(scenario.goal),
        outcome=res.outcome, path_length=res.path_length, steps=res.steps, sim_time=res.sim_time,
        mean_step_ms=res.mean_step_ms,
        straight_distance=math.hypot(scenario.goal[0] - scenario.start[0],
                                     scenario.goal[1] - scenario.start[1]),
        final_goal_distance=res.final_goal_distance, trajectory=res.trajectory[:, :2].copy())


def _run_indexed(args):
    index, scenario = args
    return run_task(scenario, index)


def run_scenarios(scenarios, workers: int = 1, progress=None) -> list:
    """TaskRecords in scenario order, serially or over a process pool."""
    jobs = list(enumerate(scenarios))
    if workers <= 1:
        out = []
        for job in jobs:
            out.append(_run_indexed(job))
            if progress:
                progress(out[-1])
        return out
    with ProcessPoolExecutor(max_workers=workers) as pool:
        out = []
        for rec in pool.map(_run_indexed, jobs, chunksize=1):
            out.append(rec)
            if progress:
                progress(rec)
        return out


def run_suite(suite: BenchmarkSuite, workers: int = 1, scenarios=None, progress=None) -> MetricsReport:
    scenarios = generate_scenarios(suite) if scenarios is None else scenarios
    t0 = time.perf_counter()
    tasks = run_scenarios(scenarios, workers, progress)
    return MetricsReport(suite.map_name, suite.variant, tasks, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# Trajectory analysis
# ---------------------------------------------------------------------------

def blocked_clearance(spec, resolution=eg.DEFAULT_RESOLUTION):
    """Distance field (m) to the ground-truth blocked cells, no inflation."""
    truth = terrain_for(spec, resolution)
    trav = build_traversability(truth, TraversabilityConfig())
    return trav, distance_to_mask(trav.blocked_mask, truth.resolution)


def min_clearance(xy, spec, resolution=eg.DEFAULT_RESOLUTION) -> float:
    """Smallest distance from any trajectory position's cell to a blocked cell."""
    trav, dist = blocked_clearance(spec, resolution)
    truth = terrain_for(spec, resolution)
    i, j = truth.world_to_cells(xy[:, 0], xy[:, 1])
    ok = i >= 0
    return float(dist[i[ok], j[ok]].min()) if ok.any() else math.nan


def pit_mask(spec: eg.PitsMap, resolution=eg.DEFAULT_RESOLUTION) -> np.ndarray:
    truth = terrain_for(spec, resolution)
    return truth.heights < -spec.pit_depth / 2


def enters_cells(xy, grid: eg.ElevationGrid, mask) -> bool:
    """Whether any trajectory position lies in a masked cell."""
    i, j = grid.world_to_cells(xy[:, 0], xy[:, 1])
    ok = i >= 0
    return bool(np.any(mask[i[ok], j[ok]]))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

TASK_COLUMNS = ("index", "label", "start_x", "start_y", "start_yaw", "goal_x", "goal_y", "outcome",
                "path_length", "steps", "sim_time", "mean_step_ms", "straight_distance",
                "final_goal_distance")


def write_tasks_csv(report: MetricsReport, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TASK_COLUMNS)
        for t in report.tasks:
            sx, sy, syaw = (list(t.start) + [0.0])[:3]
            w.writerow([t.index, t.label, f"{sx:.6f}", f"{sy:.6f}", f"{syaw:.6f}", f"{t.goal[0]:.6f}",
                        f"{t.goal[1]:.6f}", t.outcome, f"{t.path_length:.6f}", t.steps,
                        f"{t.sim_time:.3f}", f"{t.mean_step_ms:.4f}", f"{t.straight_distance:.6f}",
                        f"{t.final_goal_distance:.6f}"])


def markdown_table(reports) -> str:
    """Table with one (ST, SR) column pair per map.

    Path length and sim time are averaged over tasks solved by both variants
    of the same map.
    """
    by_map: dict = {}
    for r in reports:
        by_map.setdefault(r.map_name, {})[r.variant] = r
    maps = list(by_map)
    header = "| Metric | " + " | ".join(f"{m} ST | {m} SR" for m in maps) + " |"
    sep = "|---|" + "---|---|" * len(maps)
    rows = {"Success Rate, %": [], "Path Length, m": [], "Sim Time, s": [], "Sim Steps": [],
            "Step Time, ms": []}
    for m in maps:
        pair = by_map[m]
        summ = compare_variants(pair)
        for v in VARIANTS:
            s = summ.get(v)
            if s is None:
                for k in rows:
                    rows[k].append("-")
                continue
            rows["Success Rate, %"].append(f"{s['success_rate']:.0f}")
            rows["Path Length, m"].append(f"{s['path_length']:.2f}")
            rows["Sim Time, s"].append(f"{s['sim_time']:.1f}")
            rows["Sim Steps"].append(f"{s['steps']:.0f}")
            rows["Step Time, ms"].append(f"{s['step_ms']:.1f}")
    lines = [header, sep] + [f"| {k} | " + " | ".join(v) + " |" for k, v in rows.items()]
    return "\n".join(lines) + "\n"


def save_trajectories(report: MetricsReport, path):
    arrays = {f"t{t.index:04d}": t.trajectory for t in report.tasks if t.trajectory is not None}
    np.savez_compressed(path, **arrays)


def load_trajectories(report: MetricsReport, path):
    with np.load(path) as data:
        for t in report.tasks:
            key = f"t{t.index:04d}"
            if key in data:
                t.trajectory = data[key]


def emit_report(reports, out_dir, formats=("csv", "json", "md", "svg", "png"), specs=None) -> list:
    """Write per-task CSVs, an aggregate JSON, a Markdown table and overhead
    trajectory plots.  Returns the written paths."""
    from . import plotting

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports = list(reports)
    written = []
    for r in reports:
        stem = f"{r.map_name}_{r.variant}"
        if "csv" in formats:
            write_tasks_csv(r, out / f"{stem}_tasks.csv")
            written.append(out / f"{stem}_tasks.csv")
        if any(t.trajectory is not None for t in r.tasks):
            save_trajectories(r, out / f"{stem}_trajectories.npz")
            written.append(out / f"{stem}_trajectories.npz")
    if "json" in formats:
        by_map: dict = {}
        for r in reports:
            by_map.setdefault(r.map_name, {})[r.variant] = r
        doc = {"reports": [r.to_dict() for r in reports],
               "summary": {m: compare_variants(p) for m, p in by_map.items()}}
        (out / "report.json").write_text(json.dumps(doc, indent=2))
        written.append(out / "report.json")
    if "md" in formats:
        (out / "table.md").write_text(markdown_table(reports))
        written.append(out / "table.md")
    plot_formats = [f for f in ("svg", "png") if f in formats]
    if plot_formats:
        specs = specs or {}
        by_map = {}
        for r in reports:
            by_map.setdefault(r.map_name, []).append(r)
        for m, group in by_map.items():
            spec = specs.get(m) or default_spec(m)
            if spec is None:
                continue
            for fmt in plot_formats:
                path = out / f"{m}_trajectories.{fmt}"
                plotting.plot_trajectories(spec, group, path)
                written.append(path)
    return written


def load_report(path) -> list:
    """Reports from an aggregate JSON written by ``emit_report``."""
    doc = json.loads(Path(path).read_text())
    reports = [MetricsReport.from_dict(d) for d in doc["reports"]]
    base = Path(path).parent
    for r in reports:
        npz = base / f"{r.map_name}_{r.variant}_trajectories.npz"
        if npz.exists():
            load_trajectories(r, npz)
    return reports


def default_spec(name: str):
    return {"cone": eg.ConeMap(), "ramp": eg.RampMap(), "pits": eg.PitsMap(),
            "course": eg.CourseMap(), "flat": eg.Flat()}.get(name)
