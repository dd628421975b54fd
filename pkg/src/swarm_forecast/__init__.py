"""Multi-agent motion forecasting with cost-distance clustering."""

from .model import AgentState, Cluster, ClusterSet, Config, ConfigError, Goal, validate_config
from .scene_io import Scene, SynthGroup

__version__ = "0.1.0"

__all__ = [
    "AgentState",
    "Cluster",
    "ClusterSet",
    "Config",
    "ConfigError",
    "Goal",
    "Scene",
    "SynthGroup",
    "validate_config",
    "__version__",
]
