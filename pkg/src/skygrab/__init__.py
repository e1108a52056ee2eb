"""Deterministic multi-UAV simulation of collaborative aerial ball capture.

Subpackages map to the pipeline stages: world (plant models), camera
(synthetic detections and ranging), perception (Kalman tracking),
guidance (visual servoing), coordination (mission state machines and
the message channel), engine (multirate scheduler and Monte Carlo),
plotting, and the command-line interface in cli.
"""

from .config import ConfigError, ScenarioConfig, load_config, parse_config
from .engine import monte_carlo, replay_divergence, run_scenario
from .logs import SimLog, validate_log

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ScenarioConfig",
    "SimLog",
    "load_config",
    "monte_carlo",
    "parse_config",
    "replay_divergence",
    "run_scenario",
    "validate_log",
    "__version__",
]
