"""Configuration, scenarios, closed-loop runs, metrics, trace files and the CLI."""

from .config import ScenarioConfig, ScenarioSpec, dump_config, load_config, parse_config, save_config
from .io import write_trace
from .metrics import Metrics, analytic_times, convergence_time
from .run import run_scenario
from .scenarios import make_initial_condition

__all__ = [
    "Metrics",
    "ScenarioConfig",
    "ScenarioSpec",
    "analytic_times",
    "convergence_time",
    "dump_config",
    "load_config",
    "make_initial_condition",
    "parse_config",
    "run_scenario",
    "save_config",
    "write_trace",
]
