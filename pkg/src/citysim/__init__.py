"""Agent-based simulation of an epidemic in a city, ward by ward."""
from .config import ScenarioConfig, load_config, preset, preset_names, save_config
from .engine import METRICS, SimOutput, SimState, reverse_seed_init, run, seed_infections, step_day

__version__ = "0.1.0"

__all__ = [
    "METRICS", "ScenarioConfig", "SimOutput", "SimState", "load_config", "preset", "preset_names",
    "reverse_seed_init", "run", "save_config", "seed_infections", "step_day",
]
