"""Online conformance testing of an induction-heating-line digital twin."""

from .config import OracleConfig, TwinConfig
from .emulator import EmitSchedule, PlantEmulator, emit
from .furnace import BarSpec, FurnaceLayout, Holding, Normal, Simulation, ThermalParams, default_layout
from .oracle import ConformanceOracle, Verdict, evaluate_pair, simulation_time
from .snapshot import Snapshot, SnapshotAssembler
from .stats import DeviationStats, ErrorHistogram
from .telemetry import TelemetryRecord, open_source, parse_record

__version__ = "0.1.0"

__all__ = [
    "BarSpec",
    "ConformanceOracle",
    "DeviationStats",
    "EmitSchedule",
    "ErrorHistogram",
    "FurnaceLayout",
    "Holding",
    "Normal",
    "OracleConfig",
    "PlantEmulator",
    "Simulation",
    "Snapshot",
    "SnapshotAssembler",
    "TelemetryRecord",
    "ThermalParams",
    "TwinConfig",
    "Verdict",
    "default_layout",
    "emit",
    "evaluate_pair",
    "open_source",
    "parse_record",
    "simulation_time",
]
