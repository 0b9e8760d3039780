"""Discrete-event simulator for comparing data sharding strategies on a key-value cluster."""
from .config import ScenarioConfig, parse_config
from .metrics import RawScores, SimTrace, normalize
from .runner import compare, evaluate, run_scenario
from .simulation import Simulation

__version__ = "0.1.0"

__all__ = [
    "ScenarioConfig", "parse_config", "RawScores", "SimTrace", "normalize",
    "compare", "evaluate", "run_scenario", "Simulation",
]
