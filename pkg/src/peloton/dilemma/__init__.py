from .config import SimConfig, load_config, parse_config
from .game import (
    NotChickenError,
    PayoffMatrix,
    best_response_dynamics,
    expected_payoffs,
    nash_cooperation_fraction,
)
from .simulator import SimResult, SimulationFault, simulate_race

__all__ = [
    "NotChickenError",
    "PayoffMatrix",
    "SimConfig",
    "SimResult",
    "SimulationFault",
    "best_response_dynamics",
    "expected_payoffs",
    "load_config",
    "nash_cooperation_fraction",
    "parse_config",
    "simulate_race",
]
