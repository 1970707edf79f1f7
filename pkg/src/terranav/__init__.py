"""2.5D elevation mapping, traversability, any-angle planning and MPPI control
for uneven-terrain navigation, with a deterministic simulator and benchmark
harness."""

from .elevation_grid import (ConeMap, CourseMap, ElevationGrid, FileMap, Flat, PitsMap, RampMap,
                             generate_map, load_grid, save_grid)
from .errors import TerraNavError
from .mapping import MeasurementModel, PointCloud, fill_footprint, integrate_cloud
from .mppi import MppiConfig, RobotState, mppi_step
from .planner import GridPath, plan_theta_star
from .sim import EpisodeResult, Scenario, run_episode
from .terrain_metrics import TraversabilityConfig, build_traversability

__version__ = "0.1.0"
