from .report import Report, RequestRecord, emit_report, load_report
from .scenario import (FileSpec, RequestSpec, Scenario, ScenarioError, default_manifest,
                       default_scenario, generate_files, load_scenario)
from .sim import Simulation, run_scenario

__all__ = [
    "FileSpec", "Report", "RequestRecord", "RequestSpec", "Scenario", "ScenarioError",
    "Simulation", "default_manifest", "default_scenario", "emit_report", "generate_files",
    "load_report", "load_scenario", "run_scenario",
]
