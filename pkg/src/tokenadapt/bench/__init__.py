"""Synthetic scenarios, reference strategies, metrics and reports."""

from .config import RunConfig, load_config, parse_config
from .runner import forward_scenario, run_bench, write_reports
from .scenario import ScenarioParams, generate_scenario

__all__ = [
    "RunConfig",
    "ScenarioParams",
    "forward_scenario",
    "generate_scenario",
    "load_config",
    "parse_config",
    "run_bench",
    "write_reports",
]
