"""Injection-session orchestrator.

The controller streams a workload file, broadcasts each task command to all
target engines ahead of its start time, collects status messages into one
execution log per host, and recovers sessions across engine outages by
re-dispatching tasks whose execution window is still open.
"""

from __future__ import annotations

import logging
import os
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

from .core import (
    EventType,
    HarnessConfig,
    Message,
    MessageKind,
    SessionEvent,
    Task,
    task_from_payload,
    task_to_payload,
)
from .netproto import MessageClient, PeerId
from .storage import (
    LogWriter,
    read_workload_tolerant,
    write_log_entry,
    write_task_output,
)

log = logging.getLogger(__name__)

TASK_OUTPUT_DIRNAME = "task_output"


@dataclass
class SessionPlan:
    """Everything needed to run one injection session."""

    workload_path: str
    targets: list[PeerId]
    read_ahead: int = 300
    startup_timeout: float = 60.0
    drain_grace: float = 60.0

    def __post_init__(self) -> None:
        if not self.targets:
            raise ValueError("at least one target is required")
        if self.read_ahead < 1:
            raise ValueError("read_ahead must be >= 1")


@dataclass
class HostSummary:
    peer: str
    started: int = 0
    ended: int = 0
    errored: int = 0
    complete: bool = True


@dataclass
class SessionSummary:
    hosts: dict[str, HostSummary] = field(default_factory=dict)

    @property
    def clean(self) -> bool:
        return all(h.errored == 0 and h.complete for h in self.hosts.values())


_STATUS_EVENT_TYPES = {
    MessageKind.STATUS_TASK_START: EventType.STATUS_START,
    MessageKind.STATUS_TASK_END: EventType.STATUS_END,
    MessageKind.STATUS_TASK_RESTART: EventType.STATUS_RESTART,
    MessageKind.STATUS_ERROR: EventType.STATUS_ERR,
}


class _HostState:
    def __init__(self, peer: PeerId, writer: LogWriter):
        self.peer = peer
        self.writer = writer
        self.client: Optional[MessageClient] = None
        self.lock = threading.Lock()
        self.dispatched: dict[int, Task] = {}  # owed an end event
        self.summary = HostSummary(peer=str(peer))
        self.connected_once = False
        self.lost_during_session = False


class Controller:
    """Runs one injection session against a set of engine instances."""

    def __init__(self, plan: SessionPlan, config: HarnessConfig):
        self.plan = plan
        self.config = config
        self.sender_id = "%s:%d" % (socket.gethostname(), os.getpid())
        self.results_dir = config.results_dir
        self.output_dir = os.path.join(self.results_dir, TASK_OUTPUT_DIRNAME)
        self._hosts: dict[str, _HostState] = {}
        self._session_start: Optional[float] = None
        self._session_open = False
        self._quarantine_lock = threading.Lock()

    # -- public API ---------------------------------------------------------

    def inject(self) -> SessionSummary:
        """Execute the whole session; returns per-host counts."""
        os.makedirs(self.results_dir, exist_ok=True)
        for peer in self.plan.targets:
            path = os.path.join(self.results_dir, "%s_%d.csv" % (peer.host, peer.port))
            self._hosts[str(peer)] = _HostState(peer, LogWriter(path))
        try:
            self._connect_all()
            self._run_session()
        finally:
            for host in self._hosts.values():
                if host.client is not None:
                    host.client.close()
                host.writer.close()
        summary = SessionSummary()
        for host in self._hosts.values():
            summary.hosts[str(host.peer)] = host.summary
        return summary

    # -- connection management ----------------------------------------------

    def _connect_all(self) -> None:
        for host in self._hosts.values():
            peer = host.peer
            host.client = MessageClient(
                peer,
                sender_id=self.sender_id,
                retry_interval=self.config.retry_interval_seconds,
                on_message=lambda msg, p=peer: self.record_status(p, msg),
                on_state=lambda up, h=host: self._on_state(h, up),
            )
        deadline = time.time() + self.plan.startup_timeout
        while time.time() < deadline:
            if any(h.client.connected for h in self._hosts.values()):
                return
            time.sleep(0.1)
        raise ConnectionError(
            "no target reachable within %.0f s: %s"
            % (self.plan.startup_timeout, ", ".join(str(p) for p in self.plan.targets))
        )

    def _on_state(self, host: _HostState, up: bool) -> None:
        if up:
            host.connected_once = True
        if not self._session_open:
            return
        now = int(time.time())
        if not up:
            host.lost_during_session = True
            host.client.purge_pending()
            host.writer.write(SessionEvent(timestamp=now, type=EventType.CONN_LOST))
        else:
            host.writer.write(SessionEvent(timestamp=now, type=EventType.CONN_RESTORED))
            self.recover_session(host)

    def recover_session(self, host: _HostState) -> None:
        """Re-establish a session on a peer that went away and came back."""
        elapsed = int(time.time() - self._session_start)
        host.client.send(Message(
            kind=MessageKind.COMMAND_SESSION_START,
            payload={"timestamp": elapsed},
        ))
        with host.lock:
            pending = sorted(host.dispatched.values(), key=lambda t: (t.timestamp, t.seq_num))
        for task in pending:
            window_open = task.duration == 0 or task.timestamp + task.duration > elapsed
            if window_open:
                host.client.send(Message(
                    kind=MessageKind.COMMAND_START_TASK,
                    payload=task_to_payload(task),
                ))
                log.info("re-dispatched task %d to %s", task.seq_num, host.peer)
            else:
                with host.lock:
                    host.dispatched.pop(task.seq_num, None)
                host.summary.errored += 1
                host.writer.write(SessionEvent(
                    timestamp=int(time.time()),
                    type=EventType.STATUS_ERR,
                    task=task,
                    error="missed during outage",
                ))

    # -- session ------------------------------------------------------------

    def _run_session(self) -> None:
        self._session_start = time.time()
        self._session_open = True
        start_msg = Message(kind=MessageKind.COMMAND_SESSION_START, payload={"timestamp": 0})
        for host in self._hosts.values():
            host.writer.write(SessionEvent(
                timestamp=int(self._session_start), type=EventType.SESSION_START,
            ))
            if host.client.connected:
                host.client.send(start_msg)
            else:
                host.lost_during_session = True
                host.writer.write(SessionEvent(
                    timestamp=int(self._session_start), type=EventType.CONN_LOST,
                ))

        max_window_end = self._dispatch_loop()
        self._drain(max_window_end)

        end_msg = Message(kind=MessageKind.COMMAND_SESSION_END, payload={})
        now = int(time.time())
        for host in self._hosts.values():
            with host.lock:
                leftovers = sorted(host.dispatched.values(), key=lambda t: t.seq_num)
                host.dispatched.clear()
            for task in leftovers:
                host.summary.errored += 1
                host.summary.complete = False
                host.writer.write(SessionEvent(
                    timestamp=now, type=EventType.STATUS_ERR, task=task,
                    error="no end event received",
                ))
            if host.client.connected:
                host.client.send(end_msg)
            if not host.connected_once:
                host.summary.complete = False
            host.writer.write(SessionEvent(timestamp=int(time.time()),
                                           type=EventType.SESSION_END))
        # Give the end command a moment to leave the socket buffers.
        time.sleep(0.2)
        self._session_open = False

    def _elapsed(self) -> float:
        return time.time() - self._session_start

    def _dispatch_loop(self) -> int:
        """Stream the workload, broadcasting each task ahead of its start.

        Returns the largest timestamp+duration seen (session seconds)."""
        max_window_end = 0

        def on_parse_error(line_no: int, message: str) -> None:
            now = int(time.time())
            for host in self._hosts.values():
                host.summary.errored += 1
                host.writer.write(SessionEvent(
                    timestamp=now, type=EventType.STATUS_ERR,
                    error="workload line %d: %s" % (line_no, message),
                ))

        for task in read_workload_tolerant(self.plan.workload_path, on_parse_error):
            wait = (task.timestamp - self.plan.read_ahead) - self._elapsed()
            if wait > 0:
                time.sleep(wait)
            msg = Message(kind=MessageKind.COMMAND_START_TASK, payload=task_to_payload(task))
            for host in self._hosts.values():
                with host.lock:
                    host.dispatched[task.seq_num] = task
                if host.client.connected:
                    host.client.send(msg)
                # Disconnected peers get the task at recovery time if its
                # window is still open.
            if task.duration > 0:
                max_window_end = max(max_window_end, task.timestamp + task.duration)
            else:
                max_window_end = max(max_window_end, task.timestamp)
        return max_window_end

    def _drain(self, max_window_end: int) -> None:
        """Wait for every dispatched task to report an end event, bounded by
        the last task window plus a grace period."""
        deadline = self._session_start + max_window_end + self.plan.drain_grace

        def outstanding() -> int:
            total = 0
            for host in self._hosts.values():
                with host.lock:
                    total += len(host.dispatched)
            return total

        while outstanding() > 0 and time.time() < deadline:
            time.sleep(0.2)

    # -- status collection ----------------------------------------------------

    def record_status(self, peer: PeerId, msg: Message) -> None:
        """Convert one engine status message into a host-log event."""
        host = self._hosts.get(str(peer))
        if host is None:
            self._quarantine(peer, msg)
            return
        etype = _STATUS_EVENT_TYPES.get(msg.kind)
        if etype is None:
            return  # acks and greetings carry no log entry
        payload = msg.payload
        task: Optional[Task] = None
        if "seqNum" in payload and "args" in payload:
            try:
                task = task_from_payload(payload)
            except (KeyError, ValueError):
                task = None
        timestamp = int(payload.get("abs_time", time.time()))
        event = SessionEvent(timestamp=timestamp, type=etype, task=task,
                             error=payload.get("error"))
        host.writer.write(event)

        if msg.kind == MessageKind.STATUS_TASK_START:
            host.summary.started += 1
        elif msg.kind == MessageKind.STATUS_TASK_END:
            host.summary.ended += 1
            if task is not None:
                with host.lock:
                    host.dispatched.pop(task.seq_num, None)
                for channel in ("stdout", "stderr"):
                    text = payload.get(channel)
                    if text:
                        write_task_output(self.output_dir, task, channel, text)
        elif msg.kind == MessageKind.STATUS_ERROR:
            host.summary.errored += 1
            if task is not None:
                with host.lock:
                    host.dispatched.pop(task.seq_num, None)

    def _quarantine(self, peer: PeerId, msg: Message) -> None:
        path = os.path.join(self.results_dir, "quarantine.csv")
        etype = _STATUS_EVENT_TYPES.get(msg.kind, EventType.STATUS_ERR)
        event = SessionEvent(
            timestamp=int(msg.payload.get("abs_time", time.time())),
            type=etype,
            error="unknown peer %s" % peer,
        )
        with self._quarantine_lock:
            write_log_entry(path, event)


def inject(plan: SessionPlan, config: HarnessConfig) -> SessionSummary:
    """Run one complete injection session."""
    return Controller(plan, config).inject()
