"""Recurrent language-model training with truncated BPTT and blocked target
propagation (penalty method, augmented Lagrangian, and ADMM schedules)."""

__version__ = "0.1.0"

from .config import ConfigError, Regime, Schedule
from .model import CellKind, ParamSet

__all__ = ["CellKind", "ParamSet", "ConfigError", "Regime", "Schedule", "__version__"]
