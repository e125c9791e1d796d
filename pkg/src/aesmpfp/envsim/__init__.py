"""Planar EE-centric mobile manipulation simulator."""

from .metrics import Metrics, episode_metrics
from .scenario import (
    Scenario,
    builtin_scenario,
    dumps_scenario,
    load_scenario,
    loads_scenario,
)
from .sim import (
    MAP_RESOLUTION,
    MAP_SIZE,
    OBS_VEC_DIM,
    DoneReason,
    EnvConfig,
    MMEnv,
    Observation,
    StepResult,
    read_episode_log,
    render_local_map,
    write_episode_log,
)

__all__ = [
    "MAP_RESOLUTION", "MAP_SIZE", "OBS_VEC_DIM", "DoneReason", "EnvConfig", "MMEnv", "Metrics",
    "Observation", "Scenario", "StepResult", "builtin_scenario", "dumps_scenario", "episode_metrics",
    "load_scenario", "loads_scenario", "read_episode_log", "render_local_map", "write_episode_log",
]
