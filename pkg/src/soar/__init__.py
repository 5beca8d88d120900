"""Dynamic honeypot orchestration: deploy decoys on reserved addresses when probed, reap them when idle."""

from .engine import Engine
from .orchestrator import (
    DEFAULT_CATALOG, Catalog, EngineState, EventKind, HoneypotTemplate, OrchestratorEvent, ReservedIpPool,
    Service, State, replay, select_ips,
)
from .report import Comparison, ScenarioReport, build_report
from .scenario import ScenarioScript, load_script, race_check, run_scenario

__version__ = "0.1.0"

__all__ = [
    "Catalog", "Comparison", "DEFAULT_CATALOG", "Engine", "EngineState", "EventKind", "HoneypotTemplate",
    "OrchestratorEvent", "ReservedIpPool", "ScenarioReport", "ScenarioScript", "Service", "State",
    "build_report", "load_script", "race_check", "replay", "run_scenario", "select_ips",
]
