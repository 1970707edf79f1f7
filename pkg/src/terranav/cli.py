"""Command-line harness: map and scenario generation, suite and episode runs,
plots and report tables.

All settings can come from one JSON config file; flags override it.  Exit
codes: 0 on completion, 2 on a configuration error, 3 when scenario
generation fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bench
from . import elevation_grid as eg
from .errors import GenerationFailure, TerraNavError
from .mppi import MppiConfig
from .sim import Scenario, mppi_config_from_dict, run_episode, spec_from_dict, spec_to_dict, terrain_for
from .terrain_metrics import build_traversability, export_traversability

log = logging.getLogger("terranav")

EXIT_OK, EXIT_CONFIG, EXIT_GENERATION = 0, 2, 3

MAPS = ("cone", "ramp", "pits", "course", "file")
DEFAULTS = {
    "map": None,
    "variant": None,
    "count": 100,
    "seed": 0,
    "out": "out",
    "workers": 1,
    "mapping_mode": None,
    "n_steps": 1000,
    "goal_tolerance": 0.3,
    "map_file": None,
    "map_params": {},
    "mppi": {},
    "weights": {},
    "zones": None,
    "scenario": None,
    "index": 0,
    "report": None,
    "formats": ["csv", "json", "md", "svg", "png"],
}


class ConfigError(Exception):
    pass


def load_config(args) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(doc) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(doc)
    for key in ("map", "variant", "count", "seed", "out", "workers", "mapping_mode",
                "map_file", "scenario", "index", "report"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if cfg["map"] is not None and cfg["map"] not in MAPS:
        raise ConfigError(f"unknown map {cfg['map']!r}")
    if cfg["variant"] is not None and cfg["variant"] not in bench.VARIANTS:
        raise ConfigError(f"unknown variant {cfg['variant']!r}")
    if cfg["mapping_mode"] is None:
        cfg["mapping_mode"] = "online" if cfg["map"] == "course" else "ground_truth"
    if cfg["mapping_mode"] not in ("ground_truth", "online"):
        raise ConfigError(f"unknown mapping mode {cfg['mapping_mode']!r}")
    return cfg


def map_spec(cfg):
    name = cfg["map"]
    if name is None:
        raise ConfigError("no map given (--map or config 'map')")
    if name == "file":
        if not cfg["map_file"]:
            raise ConfigError("--map file needs --map-file or config 'map_file'")
        spec = eg.FileMap(str(cfg["map_file"]))
    else:
        spec = bench.default_spec(name)
    if cfg["map_params"]:
        spec = spec_from_dict({**spec_to_dict(spec), **cfg["map_params"]})
    eg.validate_spec(spec)
    return spec


def base_mppi(cfg) -> MppiConfig:
    return mppi_config_from_dict(cfg["mppi"]) if cfg["mppi"] else MppiConfig()


def variants(cfg):
    return [cfg["variant"]] if cfg["variant"] else list(bench.VARIANTS)


def build_scenarios(cfg, spec, variant) -> list:
    if cfg["map"] == "course":
        mppi = mppi_config_from_dict(cfg["mppi"]) if cfg["mppi"] else None
        return [bench.course_scenario(variant, mppi=mppi, weights=cfg["weights"], spec=spec,
                                      seed=cfg["seed"], mapping_mode=cfg["mapping_mode"])]
    suite = suite_for(cfg, spec, variant)
    zones = tuple(tuple(z) for z in cfg["zones"]) if cfg["zones"] else None
    return bench.generate_scenarios(suite, zones=zones)


def suite_for(cfg, spec, variant) -> bench.BenchmarkSuite:
    return bench.BenchmarkSuite(spec, count=cfg["count"], variant=variant, mppi=base_mppi(cfg),
                                seed=cfg["seed"], mapping_mode=cfg["mapping_mode"],
                                n_steps=cfg["n_steps"], goal_tolerance=cfg["goal_tolerance"],
                                weights=cfg["weights"])


def _out(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Verbs
# ---------------------------------------------------------------------------

def cmd_gen_map(cfg):
    from . import plotting

    spec = map_spec(cfg)
    out = _out(cfg)
    name = cfg["map"]
    grid = terrain_for(spec, eg.DEFAULT_RESOLUTION)
    eg.save_grid(grid, out / f"{name}.egrd")
    eg.export_grid_text(grid, out / name)
    export_traversability(build_traversability(grid, Scenario(spec, (0, 0), (0, 0)).planner_trav),
                          out / f"{name}_trav")
    (out / f"{name}_spec.json").write_text(json.dumps(spec_to_dict(spec), indent=2))
    for fmt in ("svg", "png"):
        if fmt in cfg["formats"]:
            plotting.plot_map(spec, out / f"{name}_map.{fmt}", title=name)
    print(f"{name}: {grid.rows}x{grid.cols} cells at {grid.resolution} m -> {out}")


def cmd_gen_scenarios(cfg):
    spec = map_spec(cfg)
    out = _out(cfg)
    for v in variants(cfg):
        scenarios = build_scenarios(cfg, spec, v)
        path = out / f"scenarios_{cfg['map']}_{v}.json"
        path.write_text(json.dumps([s.to_dict() for s in scenarios], indent=1))
        print(f"{len(scenarios)} scenarios -> {path}")


def _progress(total):
    def report(rec):
        log.info("[%d/%d] %s %s L=%.2f m steps=%d", rec.index + 1, total, rec.label, rec.outcome,
                 rec.path_length, rec.steps)
    return report


def cmd_run_suite(cfg):
    spec = map_spec(cfg)
    out = _out(cfg)
    reports = []
    for v in variants(cfg):
        scenarios = build_scenarios(cfg, spec, v)
        suite = suite_for(cfg, spec, v)
        reports.append(bench.run_suite(suite, workers=cfg["workers"], scenarios=scenarios,
                                       progress=_progress(len(scenarios))))
    bench.emit_report(reports, out, formats=tuple(cfg["formats"]), specs={cfg["map"]: spec})
    print(bench.markdown_table(reports), end="")
    for r in reports:
        print(f"{r.map_name} {r.variant}: success {r.success_rate:.0f}% "
              f"({sum(t.success for t in r.tasks)}/{len(r.tasks)}), wall {r.wall_seconds:.1f} s")


def _load_episode_scenario(cfg, spec, variant) -> Scenario:
    if cfg["scenario"]:
        doc = json.loads(Path(cfg["scenario"]).read_text())
        if isinstance(doc, list):
            doc = doc[int(cfg["index"])]
        return Scenario.from_dict(doc)
    scenarios = build_scenarios(cfg, spec, variant)
    if not 0 <= int(cfg["index"]) < len(scenarios):
        raise ConfigError(f"scenario index {cfg['index']} out of range (0..{len(scenarios) - 1})")
    return scenarios[int(cfg["index"])]


def cmd_run_episode(cfg):
    from . import plotting

    out = _out(cfg)
    spec = None if cfg["scenario"] else map_spec(cfg)
    # A scenario file already fixes the controller, so it runs once.
    for v in ([None] if cfg["scenario"] else variants(cfg)):
        sc = _load_episode_scenario(cfg, spec, v)
        res = run_episode(sc)
        stem = out / (sc.label or f"episode-{v}")
        res.write_log(stem.with_suffix(".jsonl"))
        res.write_trajectory_csv(f"{stem}_trajectory.csv")
        sc.save(f"{stem}_scenario.json")
        summary = {"label": sc.label, "outcome": res.outcome, "path_length": res.path_length,
                   "steps": res.steps, "sim_time": res.sim_time, "mean_step_ms": res.mean_step_ms,
                   "final_goal_distance": res.final_goal_distance, "mapping_calls": res.mapping_calls}
        if isinstance(sc.map_spec, eg.CourseMap):
            summary.update(bench.route_violations(res.trajectory, sc.map_spec))
        Path(f"{stem}_summary.json").write_text(json.dumps(summary, indent=2))
        for fmt in ("svg", "png"):
            if fmt in cfg["formats"]:
                plotting.plot_episode(sc.map_spec, res, f"{stem}.{fmt}", route=sc.route)
        print(" ".join(f"{k}={v:.3f}" if isinstance(v, float) else f"{k}={v}" for k, v in summary.items()))


def _reports_from(cfg):
    paths = cfg["report"] or [str(Path(cfg["out"]) / "report.json")]
    if isinstance(paths, str):
        paths = [paths]
    reports = []
    for p in paths:
        if not Path(p).is_file():
            raise ConfigError(f"report not found: {p}")
        reports.extend(bench.load_report(p))
    return reports


def cmd_plot(cfg):
    reports = _reports_from(cfg)
    out = _out(cfg)
    specs = {}
    if cfg["map"]:
        specs[cfg["map"]] = map_spec(cfg)
    fmts = tuple(f for f in cfg["formats"] if f in ("svg", "png")) or ("svg",)
    for path in bench.emit_report(reports, out, formats=fmts, specs=specs):
        print(path)


def cmd_report(cfg):
    reports = _reports_from(cfg)
    out = _out(cfg)
    fmts = tuple(f for f in cfg["formats"] if f in ("csv", "json", "md"))
    bench.emit_report(reports, out, formats=fmts)
    print(bench.markdown_table(reports), end="")


VERBS = {
    "gen-map": cmd_gen_map,
    "gen-scenarios": cmd_gen_scenarios,
    "run-suite": cmd_run_suite,
    "run-episode": cmd_run_episode,
    "plot": cmd_plot,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--map", choices=MAPS)
    common.add_argument("--map-file", dest="map_file", help="EGRD grid for --map file")
    common.add_argument("--variant", choices=bench.VARIANTS, help="cost variant (default: both)")
    common.add_argument("--count", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int)
    mode = common.add_mutually_exclusive_group()
    mode.add_argument("--ground-truth-map", dest="mapping_mode", action="store_const", const="ground_truth")
    mode.add_argument("--online-mapping", dest="mapping_mode", action="store_const", const="online")
    common.add_argument("--scenario", help="scenario JSON (a list picks --index)")
    common.add_argument("--index", type=int, help="scenario index for run-episode")
    common.add_argument("--report", nargs="+", help="report.json file(s) for plot/report")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="terranav", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        sub.add_parser(verb, parents=[common])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args)
        VERBS[args.verb](cfg)
    except GenerationFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GENERATION
    except (ConfigError, TerraNavError, TypeError, KeyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
