"""Deterministic round-synchronous simulation of all protocol parties."""

from .scenario import (
    DropEvent,
    JoinEvent,
    LeaveEvent,
    Phase,
    ScenarioError,
    ScenarioScript,
    SybilEvent,
    load_scenario,
    scenario_from_dict,
)
from .transcript import Transcript, TranscriptRecord, RoundOutcome, check_single_theta
from .runner import ProtocolSession, SimResult, run
from .attacks import FsbsReport, attack_fsbs_baseline, attack_fsbs_keyneg

__all__ = [
    "DropEvent",
    "JoinEvent",
    "LeaveEvent",
    "Phase",
    "ScenarioError",
    "ScenarioScript",
    "SybilEvent",
    "load_scenario",
    "scenario_from_dict",
    "Transcript",
    "TranscriptRecord",
    "RoundOutcome",
    "check_single_theta",
    "ProtocolSession",
    "SimResult",
    "run",
    "FsbsReport",
    "attack_fsbs_baseline",
    "attack_fsbs_keyneg",
]
