"""Distributed fault-injection harness.

Per-node engine daemons execute scheduled benchmark and fault-triggering
tasks under the direction of a controller that replays CSV workloads,
records per-host execution logs, and recovers sessions across node crashes.
A statistical workload generator builds workloads from duration and
inter-arrival distributions.
"""

from .controller import Controller, SessionPlan, SessionSummary, inject
from .core import (
    EventType,
    HarnessConfig,
    Message,
    MessageKind,
    SessionEvent,
    Task,
    format_core_list,
    parse_core_list,
    validate_workload,
)
from .engine import Engine, engine_run
from .netproto import MessageClient, MessageServer, PeerId
from .wlgen import CommandSpec, DistributionSpec, GenerationSpec, fit_distribution, generate_workload

__all__ = [
    "CommandSpec",
    "Controller",
    "DistributionSpec",
    "Engine",
    "EventType",
    "GenerationSpec",
    "HarnessConfig",
    "Message",
    "MessageClient",
    "MessageKind",
    "MessageServer",
    "PeerId",
    "SessionEvent",
    "SessionPlan",
    "SessionSummary",
    "Task",
    "engine_run",
    "fit_distribution",
    "format_core_list",
    "generate_workload",
    "inject",
    "parse_core_list",
    "validate_workload",
]

__version__ = "0.1.0"
