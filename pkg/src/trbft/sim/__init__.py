from .config import ConfigInvalid, NetworkModel, SimConfig, load_config, save_config
from .faults import CATALOG, FaultScript, ScriptError, ScriptOutOfBounds
from .metrics import Metrics
from .safety import DivergenceDetected
from .world import RunResult, World, run

__all__ = [
    "CATALOG", "ConfigInvalid", "DivergenceDetected", "FaultScript", "Metrics", "NetworkModel",
    "RunResult", "ScriptError", "ScriptOutOfBounds", "SimConfig", "World", "load_config", "run", "save_config",
]
