"""Time-slotted CoMP downlink simulator with JT and CS/CB transmission,
backhaul, CSI and synchronization impairments, and a KPI/KQI-aware
drift-plus-penalty scheduler."""

from .config import ConfigError, ScenarioConfig, parse_config, serialize_config

__version__ = "0.1.0"

__all__ = ["ConfigError", "ScenarioConfig", "parse_config", "serialize_config", "__version__"]
