"""Shared domain types and pure helpers.

Everything in this module is an immutable value or a pure function; no I/O,
no threads, no sockets. The other modules build on these types.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional


class CoreListError(ValueError):
    """Raised for a malformed CPU core-list string."""


def parse_core_list(text: str) -> Optional[frozenset[int]]:
    """Parse a core-list string like "0-7" or "0-2,6" into a set of CPU indices.

    An empty string means "no pinning" and returns None.
    """
    text = text.strip()
    if not text:
        return None
    cores: set[int] = set()
    for token in text.split(","):
        token = token.strip()
        if "-" in token:
            lo_s, sep, hi_s = token.partition("-")
            if not lo_s.isdigit() or not hi_s.isdigit():
                raise CoreListError("malformed core range: %r" % token)
            lo, hi = int(lo_s), int(hi_s)
            if hi < lo:
                raise CoreListError("descending core range: %r" % token)
            cores.update(range(lo, hi + 1))
        else:
            if not token.isdigit():
                raise CoreListError("malformed core index: %r" % token)
            cores.add(int(token))
    return frozenset(cores)


def format_core_list(cores: Optional[frozenset[int]]) -> str:
    """Render a core set canonically: contiguous runs of >= 2 become ranges.

    Inverse of parse_core_list; None renders as the empty string.
    """
    if cores is None:
        return ""
    parts: list[str] = []
    ordered = sorted(cores)
    i = 0
    while i < len(ordered):
        j = i
        while j + 1 < len(ordered) and ordered[j + 1] == ordered[j] + 1:
            j += 1
        if j > i:
            parts.append("%d-%d" % (ordered[i], ordered[j]))
        else:
            parts.append(str(ordered[i]))
        i = j + 1
    return ",".join(parts)


@dataclass(frozen=True)
class Task:
    """One scheduled execution of an external program.

    timestamp is relative to the start of the injection session; duration is
    a maximum (or exact, depending on configuration) run time in seconds,
    with 0 meaning the task always runs to natural completion.
    """

    args: str
    timestamp: int
    duration: int
    seq_num: int
    is_fault: bool = False
    cores: Optional[frozenset[int]] = None


def validate_workload(tasks: list[Task]) -> list[str]:
    """Check workload-level invariants; returns human-readable findings.

    An empty list means the workload is valid.
    """
    findings: list[str] = []
    seen: dict[int, int] = {}
    for i, task in enumerate(tasks):
        if not task.args:
            findings.append("task %d: empty args" % i)
        elif ";" in task.args:
            findings.append("task %d: args may not contain ';'" % i)
        if task.timestamp < 0:
            findings.append("task %d: negative timestamp" % i)
        if task.duration < 0:
            findings.append("task %d: negative duration" % i)
        if task.seq_num < 1:
            findings.append("task %d: seq_num must be positive" % i)
        if task.seq_num in seen:
            findings.append(
                "task %d: duplicate seq_num %d (first at task %d)"
                % (i, task.seq_num, seen[task.seq_num])
            )
        else:
            seen[task.seq_num] = i
    return findings


class MessageKind(enum.Enum):
    """Wire-level message kinds exchanged between controller and engine."""

    COMMAND_START_TASK = "command_start_task"
    COMMAND_TERMINATE_TASK = "command_terminate_task"
    COMMAND_SESSION_START = "command_session_start"
    COMMAND_SESSION_END = "command_session_end"
    STATUS_TASK_START = "status_task_start"
    STATUS_TASK_END = "status_task_end"
    STATUS_TASK_RESTART = "status_task_restart"
    STATUS_ERROR = "status_error"
    STATUS_CONNECTION = "status_connection"
    ACK = "ack"


# Payload keys permitted on the wire; anything else is rejected at encode time.
PAYLOAD_KEYS = frozenset(
    {"args", "timestamp", "duration", "seqNum", "isFault", "cores", "error",
     "abs_time", "stdout", "stderr"}
)

# Kinds that must carry a full task echo in their payload.
TASK_BEARING_KINDS = frozenset(
    {
        MessageKind.COMMAND_START_TASK,
        MessageKind.STATUS_TASK_START,
        MessageKind.STATUS_TASK_END,
        MessageKind.STATUS_TASK_RESTART,
    }
)

_TASK_ECHO_KEYS = frozenset({"args", "timestamp", "duration", "seqNum", "isFault"})


@dataclass(frozen=True)
class Message:
    """One protocol message: a command from a controller or a status from an engine."""

    kind: MessageKind
    payload: dict = field(default_factory=dict)
    sender_id: str = ""

    def required_keys_present(self) -> bool:
        if self.kind in TASK_BEARING_KINDS:
            return _TASK_ECHO_KEYS <= set(self.payload)
        return True


def task_to_payload(task: Task) -> dict:
    payload = {
        "args": task.args,
        "timestamp": task.timestamp,
        "duration": task.duration,
        "seqNum": task.seq_num,
        "isFault": task.is_fault,
    }
    if task.cores is not None:
        payload["cores"] = format_core_list(task.cores)
    return payload


def task_from_payload(payload: dict) -> Task:
    cores_text = payload.get("cores", "")
    return Task(
        args=payload["args"],
        timestamp=int(payload["timestamp"]),
        duration=int(payload["duration"]),
        seq_num=int(payload["seqNum"]),
        is_fault=bool(payload["isFault"]),
        cores=parse_core_list(cores_text) if cores_text else None,
    )


class EventType(enum.Enum):
    """Execution-log event types, spelled exactly as they appear in log files."""

    SESSION_START = "command_session_s"
    SESSION_END = "command_session_e"
    STATUS_START = "status_start"
    STATUS_END = "status_end"
    STATUS_RESTART = "status_restart"
    CONN_LOST = "status_conn_lost"
    CONN_RESTORED = "status_conn_restored"
    STATUS_ERR = "status_err"


@dataclass(frozen=True)
class SessionEvent:
    """One line of a per-host execution log.

    The timestamp is absolute epoch seconds as observed on the host that
    generated the event.
    """

    timestamp: int
    type: EventType
    task: Optional[Task] = None
    error: Optional[str] = None


@dataclass(frozen=True)
class HarnessConfig:
    """Runtime options shared by engine and controller instances."""

    listen_port: int = 30000
    host_addresses: tuple[str, ...] = ()
    pool_size: int = 16
    exact_durations: bool = False
    read_ahead_seconds: int = 300
    retry_interval_seconds: int = 10
    aux_commands: tuple[str, ...] = ()
    results_dir: str = "results"

    def __post_init__(self) -> None:
        if self.pool_size < 1:
            raise ValueError("pool_size must be >= 1")
        if self.read_ahead_seconds < 1:
            raise ValueError("read_ahead_seconds must be >= 1")
        if self.retry_interval_seconds < 1:
            raise ValueError("retry_interval_seconds must be >= 1")
