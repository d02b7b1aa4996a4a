"""Scenario configuration, presets, the multi-engine runner and its outputs."""

from .config import ENGINES, ConfigError, ScenarioConfig, config_from_dict, load_config, parse_config
from .outputs import emit_outputs, read_csv
from .presets import PRESETS, UnknownPreset, preset
from .runner import COLUMNS, EntropySeries, RunFailed, replace_seed, run_scenario

__all__ = [
    "COLUMNS",
    "ENGINES",
    "PRESETS",
    "ConfigError",
    "EntropySeries",
    "RunFailed",
    "ScenarioConfig",
    "UnknownPreset",
    "config_from_dict",
    "emit_outputs",
    "load_config",
    "parse_config",
    "preset",
    "read_csv",
    "replace_seed",
    "run_scenario",
]
