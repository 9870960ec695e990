"""Per-node injection engine.

The engine is a daemon: it listens for task commands from controllers,
executes each task in a bounded worker pool with duration enforcement and
optional core pinning, and broadcasts status messages to every connected
controller. Commands are accepted only from the current session master.
"""

from __future__ import annotations

import logging
import os
import shlex
import shutil
import signal
import socket
import subprocess
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from .core import (
    HarnessConfig,
    Message,
    MessageKind,
    Task,
    format_core_list,
    task_from_payload,
    task_to_payload,
)
from .netproto import MessageServer

log = logging.getLogger(__name__)

TERMINATION_GRACE_SECONDS = 5.0
MIN_RESTART_WINDOW_SECONDS = 1.0
# Captured task output is truncated to keep status frames under the wire cap.
MAX_OUTPUT_BYTES = 128 * 1024


def apply_core_pinning(command: str, cores: Optional[frozenset[int]]) -> str:
    """Wrap a shell command so the OS restricts it to the given CPU cores.

    Degrades to the unmodified command (with a warning) when no affinity
    launcher is available on this platform.
    """
    if not cores:
        return command
    launcher = shutil.which("taskset")
    if launcher is None:
        log.warning("no CPU affinity launcher available; running %r unpinned", command)
        return command
    return "%s -c %s %s" % (launcher, format_core_list(frozenset(cores)), command)


@dataclass
class _RunningTask:
    task: Task
    deadline: Optional[float]  # absolute monotonic-free epoch deadline, None = unconstrained
    terminate_requested: threading.Event = field(default_factory=threading.Event)
    process: Optional[subprocess.Popen] = None


class Engine:
    """Task-executing daemon bound to one TCP port."""

    def __init__(self, config: HarnessConfig, port: Optional[int] = None):
        self.config = config
        self.port = port if port is not None else config.listen_port
        self.sender_id = "%s:%d" % (socket.gethostname(), self.port)
        self._lock = threading.Lock()
        self._master: Optional[str] = None
        self._session_origin: Optional[float] = None
        self._active: dict[int, _RunningTask] = {}
        self._seen_seq: set[int] = set()
        self._pool = ThreadPoolExecutor(max_workers=config.pool_size)
        self._aux_procs: list[subprocess.Popen] = []
        self._server: Optional[MessageServer] = None
        self._stopped = threading.Event()

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        self._server = MessageServer(self.port, self._on_message)
        self.port = self._server.port
        self._spawn_aux_commands()
        log.info("engine listening on port %d", self.port)

    def run_forever(self) -> None:
        self.start()
        try:
            while not self._stopped.wait(1.0):
                pass
        finally:
            self.shutdown()

    def shutdown(self) -> None:
        self._stopped.set()
        with self._lock:
            records = list(self._active.values())
        for rec in records:
            rec.terminate_requested.set()
        self._pool.shutdown(wait=False, cancel_futures=True)
        for proc in self._aux_procs:
            _terminate_process_tree(proc)
        if self._server is not None:
            self._server.close()

    def _spawn_aux_commands(self) -> None:
        for cmd in self.config.aux_commands:
            try:
                proc = subprocess.Popen(shlex.split(cmd), start_new_session=True)
            except OSError as exc:
                log.error("failed to launch auxiliary command %r: %s", cmd, exc)
                continue
            self._aux_procs.append(proc)

    # -- message handling --------------------------------------------------

    def _status(self, kind: MessageKind, payload: dict) -> Message:
        return Message(kind=kind, payload=payload, sender_id=self.sender_id)

    def _broadcast(self, kind: MessageKind, payload: dict) -> None:
        assert self._server is not None
        self._server.broadcast(self._status(kind, payload))

    def _on_message(self, sender: str, msg: Message, reply) -> None:
        if msg.kind == MessageKind.COMMAND_SESSION_START:
            self._handle_session_start(sender, msg, reply)
        elif msg.kind == MessageKind.COMMAND_SESSION_END:
            self._handle_session_end(sender, msg, reply)
        elif msg.kind == MessageKind.COMMAND_START_TASK:
            self._handle_start_task(sender, msg, reply)
        elif msg.kind == MessageKind.COMMAND_TERMINATE_TASK:
            self._handle_terminate_task(sender, msg, reply)
        else:
            log.debug("ignoring %s from %s", msg.kind.value, sender)

    def _reject_non_master(self, sender: str, reply, what: str) -> bool:
        with self._lock:
            is_master = self._master is not None and sender == self._master
        if not is_master:
            reply(self._status(
                MessageKind.STATUS_ERROR,
                {"error": "not master: %s rejected" % what, "abs_time": int(time.time())},
            ))
            return True
        return False

    def _handle_session_start(self, sender: str, msg: Message, reply) -> None:
        elapsed = int(msg.payload.get("timestamp", 0))
        with self._lock:
            if self._master is None:
                self._master = sender
                self._session_origin = time.time() - elapsed
                self._seen_seq.clear()
                accepted = True
            elif self._master == sender:
                # Re-sent after a reconnect; refresh the origin estimate.
                self._session_origin = time.time() - elapsed
                accepted = True
            else:
                accepted = False
        if accepted:
            log.info("session opened by %s (elapsed %ds)", sender, elapsed)
            reply(self._status(MessageKind.ACK, {"abs_time": int(time.time())}))
        else:
            reply(self._status(
                MessageKind.STATUS_ERROR,
                {"error": "not master: session already open", "abs_time": int(time.time())},
            ))

    def _handle_session_end(self, sender: str, msg: Message, reply) -> None:
        if self._reject_non_master(sender, reply, "session end"):
            return
        with self._lock:
            self._master = None
            self._session_origin = None
            self._seen_seq.clear()
            records = list(self._active.values())
        for rec in records:
            rec.terminate_requested.set()
        log.info("session closed by %s", sender)
        reply(self._status(MessageKind.ACK, {"abs_time": int(time.time())}))

    def _handle_start_task(self, sender: str, msg: Message, reply) -> None:
        if self._reject_non_master(sender, reply, "task command"):
            return
        try:
            task = task_from_payload(msg.payload)
        except (KeyError, ValueError) as exc:
            reply(self._status(
                MessageKind.STATUS_ERROR,
                {"error": "bad task payload: %s" % exc, "abs_time": int(time.time())},
            ))
            return
        with self._lock:
            if task.seq_num in self._seen_seq:
                reply(self._status(MessageKind.ACK,
                                   {"seqNum": task.seq_num, "abs_time": int(time.time())}))
                return
            self._seen_seq.add(task.seq_num)
            origin = self._session_origin if self._session_origin is not None else time.time()
        scheduled = origin + task.timestamp
        late = time.time() > scheduled + 0.5
        reply(self._status(MessageKind.ACK,
                           {"seqNum": task.seq_num, "abs_time": int(time.time())}))
        self._pool.submit(self._execute_task, task, scheduled, late)

    def _handle_terminate_task(self, sender: str, msg: Message, reply) -> None:
        if self._reject_non_master(sender, reply, "terminate command"):
            return
        seq = msg.payload.get("seqNum")
        with self._lock:
            rec = self._active.get(seq) if seq is not None else None
        if rec is None:
            reply(self._status(
                MessageKind.STATUS_ERROR,
                {"error": "no such task", "seqNum": seq, "abs_time": int(time.time())},
            ))
            return
        rec.terminate_requested.set()
        reply(self._status(MessageKind.ACK, {"seqNum": seq, "abs_time": int(time.time())}))

    # -- task execution ----------------------------------------------------

    def _execute_task(self, task: Task, scheduled: float, late: bool) -> None:
        try:
            self._run_task(task, scheduled, late)
        except Exception:
            log.exception("task %d failed unexpectedly", task.seq_num)
            echo = task_to_payload(task)
            echo["error"] = "internal engine error"
            echo["abs_time"] = int(time.time())
            self._broadcast(MessageKind.STATUS_ERROR, echo)
        finally:
            with self._lock:
                self._active.pop(task.seq_num, None)

    def _run_task(self, task: Task, scheduled: float, late: bool) -> None:
        delay = scheduled - time.time()
        if delay > 0:
            if self._stopped.wait(delay):
                return
        start = time.time()
        if task.duration <= 0:
            deadline: Optional[float] = None
        elif late:
            # Command arrived after its scheduled start (recovery re-dispatch):
            # run only the remainder of the task's original window.
            deadline = max(scheduled + task.duration, start + MIN_RESTART_WINDOW_SECONDS)
        else:
            deadline = start + task.duration

        rec = _RunningTask(task=task, deadline=deadline)
        with self._lock:
            self._active[task.seq_num] = rec

        command = apply_core_pinning(task.args, task.cores)
        stdout_parts: list[bytes] = []
        stderr_parts: list[bytes] = []
        try:
            rec.process = self._spawn(command)
        except OSError as exc:
            echo = task_to_payload(task)
            echo["error"] = "failed to start: %s" % exc
            echo["abs_time"] = int(time.time())
            self._broadcast(MessageKind.STATUS_ERROR, echo)
            return

        echo = task_to_payload(task)
        echo["abs_time"] = int(time.time())
        self._broadcast(MessageKind.STATUS_TASK_START, echo)

        terminated = False
        while True:
            exited, done = self._wait_for_exit(rec, stdout_parts, stderr_parts)
            if not exited:
                _terminate_process_tree(rec.process, done)
                terminated = True
                break
            remaining = (rec.deadline - time.time()) if rec.deadline is not None else 0.0
            if (
                self.config.exact_durations
                and rec.deadline is not None
                and remaining >= MIN_RESTART_WINDOW_SECONDS
                and not rec.terminate_requested.is_set()
                and not self._stopped.is_set()
            ):
                restart_echo = task_to_payload(task)
                restart_echo["abs_time"] = int(time.time())
                self._broadcast(MessageKind.STATUS_TASK_RESTART, restart_echo)
                try:
                    rec.process = self._spawn(command)
                except OSError as exc:
                    restart_echo["error"] = "restart failed: %s" % exc
                    self._broadcast(MessageKind.STATUS_ERROR, restart_echo)
                    break
                continue
            break

        end_echo = task_to_payload(task)
        end_echo["abs_time"] = int(time.time())
        if terminated:
            end_echo["error"] = "terminated"
        out = b"".join(stdout_parts)[:MAX_OUTPUT_BYTES]
        err = b"".join(stderr_parts)[:MAX_OUTPUT_BYTES]
        if out:
            end_echo["stdout"] = out.decode("utf-8", errors="replace")
        if err:
            end_echo["stderr"] = err.decode("utf-8", errors="replace")
        self._broadcast(MessageKind.STATUS_TASK_END, end_echo)

    def _spawn(self, command: str) -> subprocess.Popen:
        return subprocess.Popen(
            command,
            shell=True,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            start_new_session=True,
        )

    def _wait_for_exit(self, rec: _RunningTask, stdout_parts: list,
                       stderr_parts: list) -> tuple[bool, threading.Event]:
        """Wait until the process exits, its deadline passes, or termination is
        requested. Returns (exited_naturally, output_collected_event)."""
        proc = rec.process
        assert proc is not None
        done = threading.Event()

        def _communicate():
            # Sole reader of the process pipes; the kill path waits on `done`
            # instead of reading them itself.
            try:
                out, err = proc.communicate()
                if out:
                    stdout_parts.append(out)
                if err:
                    stderr_parts.append(err)
            except Exception:
                pass
            done.set()

        waiter = threading.Thread(target=_communicate, daemon=True)
        waiter.start()
        while True:
            if done.wait(0.1):
                return True, done
            if rec.terminate_requested.is_set() or self._stopped.is_set():
                return False, done
            if rec.deadline is not None and time.time() >= rec.deadline:
                return False, done


def _terminate_process_tree(proc: subprocess.Popen,
                            collected: Optional[threading.Event] = None) -> None:
    """SIGTERM the task's process group, then SIGKILL after a grace window."""
    try:
        pgid = os.getpgid(proc.pid)
    except OSError:
        pgid = None

    def _signal_group(sig) -> None:
        try:
            if pgid is not None:
                os.killpg(pgid, sig)
            else:
                proc.send_signal(sig)
        except OSError:
            pass

    def _wait(timeout: float) -> bool:
        if collected is not None:
            return collected.wait(timeout)
        try:
            proc.wait(timeout=timeout)
            return True
        except subprocess.TimeoutExpired:
            return False

    if proc.poll() is None:
        _signal_group(signal.SIGTERM)
        if not _wait(TERMINATION_GRACE_SECONDS):
            _signal_group(signal.SIGKILL)
            _wait(5)
    # The direct child is gone; sweep any grandchildren left in the group.
    if pgid is not None:
        _signal_group(signal.SIGKILL)


def engine_run(config: HarnessConfig, port: Optional[int] = None) -> None:
    """Run an engine daemon until interrupted."""
    engine = Engine(config, port=port)
    engine.run_forever()
