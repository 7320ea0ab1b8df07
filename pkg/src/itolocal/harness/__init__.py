"""Experiment configs, built-in function specs, batch drivers and the CLI."""

from .builtins import NAMES, builtin
from .config import ConfigError, ExperimentConfig
from .run import Metric, Report, run
from .speccheck import Diagnostics, spec_check

__all__ = ["NAMES", "builtin", "ConfigError", "ExperimentConfig", "Metric", "Report", "run",
           "Diagnostics", "spec_check"]
