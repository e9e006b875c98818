"""Task-oriented V2X cooperative perception simulator.

Vehicles broadcast locally detected environment variables selected by
estimated redundancy and relevance per intended receiver; the simulator
measures content-selection errors, their network-level recovery, and the
congestion cost of over-cautious redundancy estimation.
"""

from .config import Config, ConfigError, parse_config
from .engine import RunResult, Simulator, run_simulation
from .metrics import MetricsReport
from .scenario import World, generate_world

__all__ = [
    "Config", "ConfigError", "parse_config",
    "RunResult", "Simulator", "run_simulation",
    "MetricsReport", "World", "generate_world",
]

__version__ = "0.1.0"
