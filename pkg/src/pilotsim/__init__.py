"""Multi-cell massive MIMO simulator for time-multiplexed, superimposed and hybrid pilots."""

from .config import ConfigError, SystemConfig
from .montecarlo import Experiment, run_trials

__all__ = ["ConfigError", "Experiment", "SystemConfig", "run_trials"]
__version__ = "0.1.0"
