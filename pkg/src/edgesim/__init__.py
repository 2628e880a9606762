"""Deterministic discrete-event simulator comparing edge and centralized
airline-reservation deployments."""

from .config import ConfigInvalid, ScenarioConfig, load_config, parse_config, validate
from .metrics import ScenarioReport, compare
from .scenario import Simulation, run_scenario

__version__ = "0.1.0"

__all__ = ["ConfigInvalid", "ScenarioConfig", "ScenarioReport", "Simulation", "compare",
           "load_config", "parse_config", "run_scenario", "validate"]
