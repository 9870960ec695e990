"""Readers and writers for workload CSV files, execution logs, per-task
output files, and the JSON configuration.

Both CSV dialects are semicolon-delimited with fixed headers; absent values
in execution logs are written as the literal "None".
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import re
from typing import IO, Iterable, Iterator, Optional

from .core import (
    EventType,
    HarnessConfig,
    SessionEvent,
    Task,
    format_core_list,
    parse_core_list,
)

log = logging.getLogger(__name__)

WORKLOAD_HEADER = "timestamp;duration;seqNum;isFault;cores;args"
LOG_HEADER = "timestamp;type;args;seqNum;duration;isFault;cores;error"


class FormatError(Exception):
    """File does not match the expected schema."""


class ConfigError(Exception):
    """Configuration value has the wrong type or shape."""


def _parse_bool(text: str, line_no: int) -> bool:
    if text == "True":
        return True
    if text == "False":
        return False
    raise FormatError("line %d: expected True/False, got %r" % (line_no, text))


def read_workload(path: str) -> Iterator[Task]:
    """Yield tasks from a workload CSV lazily, in file order."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\r\n").strip()
        if header != WORKLOAD_HEADER:
            raise FormatError("bad workload header in %s: %r" % (path, header))
        for line_no, line in enumerate(fh, start=2):
            line = line.rstrip("\r\n")
            if not line:
                continue
            fields = line.split(";", 5)
            if len(fields) != 6:
                raise FormatError("line %d: expected 6 fields, got %d" % (line_no, len(fields)))
            ts, dur, seq, is_fault, cores, args = fields
            try:
                yield Task(
                    args=args,
                    timestamp=int(ts),
                    duration=int(dur),
                    seq_num=int(seq),
                    is_fault=_parse_bool(is_fault, line_no),
                    cores=parse_core_list(cores),
                )
            except (ValueError, FormatError) as exc:
                raise FormatError("line %d: %s" % (line_no, exc)) from exc


def read_workload_tolerant(path: str, on_error) -> Iterator[Task]:
    """Like read_workload, but malformed task lines invoke on_error(line_no,
    message) and parsing continues. A bad header still raises."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\r\n").strip()
        if header != WORKLOAD_HEADER:
            raise FormatError("bad workload header in %s: %r" % (path, header))
        for line_no, line in enumerate(fh, start=2):
            line = line.rstrip("\r\n")
            if not line:
                continue
            fields = line.split(";", 5)
            if len(fields) != 6:
                on_error(line_no, "expected 6 fields, got %d" % len(fields))
                continue
            ts, dur, seq, is_fault, cores, args = fields
            try:
                yield Task(
                    args=args,
                    timestamp=int(ts),
                    duration=int(dur),
                    seq_num=int(seq),
                    is_fault=_parse_bool(is_fault, line_no),
                    cores=parse_core_list(cores),
                )
            except (ValueError, FormatError) as exc:
                on_error(line_no, str(exc))


def write_workload(path: str, tasks: Iterable[Task]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(WORKLOAD_HEADER + "\n")
        for task in tasks:
            fh.write(
                "%d;%d;%d;%s;%s;%s\n"
                % (
                    task.timestamp,
                    task.duration,
                    task.seq_num,
                    "True" if task.is_fault else "False",
                    format_core_list(task.cores),
                    task.args,
                )
            )


def _none_or(value) -> str:
    return "None" if value is None else str(value)


def format_log_entry(event: SessionEvent) -> str:
    task = event.task
    if task is None:
        args = seq = dur = fault = cores = "None"
    else:
        args = task.args
        seq = str(task.seq_num)
        dur = str(task.duration)
        fault = "True" if task.is_fault else "False"
        cores = format_core_list(task.cores) if task.cores is not None else "None"
    return ";".join(
        [str(event.timestamp), event.type.value, args, seq, dur, fault, cores,
         _none_or(event.error)]
    )


class LogWriter:
    """Appends execution-log entries to one host's CSV file, flushing per event."""

    def __init__(self, path: str):
        self.path = path
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        self._fh: IO[str] = open(path, "w", encoding="utf-8", newline="")
        self._fh.write(LOG_HEADER + "\n")
        self._fh.flush()

    def write(self, event: SessionEvent) -> None:
        self._fh.write(format_log_entry(event) + "\n")
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def close(self) -> None:
        self._fh.close()


def write_log_entry(path: str, event: SessionEvent) -> None:
    """Append one event, creating the file (with header) if needed."""
    new = not os.path.exists(path)
    with open(path, "a", encoding="utf-8", newline="") as fh:
        if new:
            fh.write(LOG_HEADER + "\n")
        fh.write(format_log_entry(event) + "\n")


def read_log(path: str) -> list[SessionEvent]:
    events: list[SessionEvent] = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\r\n").strip()
        if header != LOG_HEADER:
            raise FormatError("bad log header in %s: %r" % (path, header))
        for line_no, line in enumerate(fh, start=2):
            line = line.rstrip("\r\n")
            if not line:
                continue
            fields = line.split(";", 7)
            if len(fields) != 8:
                raise FormatError("line %d: expected 8 fields, got %d" % (line_no, len(fields)))
            ts, type_s, args, seq, dur, fault, cores, error = fields
            try:
                etype = EventType(type_s)
            except ValueError as exc:
                raise FormatError("line %d: unknown event type %r" % (line_no, type_s)) from exc
            task: Optional[Task] = None
            if args != "None" or seq != "None":
                task = Task(
                    args=args,
                    timestamp=0,
                    duration=int(dur),
                    seq_num=int(seq),
                    is_fault=_parse_bool(fault, line_no),
                    cores=parse_core_list(cores) if cores != "None" else None,
                )
            events.append(
                SessionEvent(
                    timestamp=int(ts),
                    type=etype,
                    task=task,
                    error=None if error == "None" else error,
                )
            )
    return events


def task_output_name(task: Task) -> str:
    """File basename for a task's captured output: <command-name>_<seq>.out."""
    first = task.args.split()[0] if task.args.split() else "task"
    base = os.path.basename(first) or "task"
    base = re.sub(r"[^A-Za-z0-9._-]", "_", base)
    return "%s_%d.out" % (base, task.seq_num)


def write_task_output(out_dir: str, task: Task, channel: str, text: str) -> Optional[str]:
    """Append captured stdout/stderr text to the task's output file.

    Returns the file path, or None when there was nothing to write.
    """
    if channel not in ("stdout", "stderr"):
        raise ValueError("channel must be stdout or stderr")
    if not text:
        return None
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, task_output_name(task))
    with open(path, "a", encoding="utf-8") as fh:
        if channel == "stderr":
            fh.write("--- stderr ---\n")
        fh.write(text)
        if not text.endswith("\n"):
            fh.write("\n")
    return path


_CONFIG_FIELDS = {f.name: f for f in dataclasses.fields(HarnessConfig)}


def default_config() -> HarnessConfig:
    return HarnessConfig()


def read_config(path: str) -> HarnessConfig:
    """Load a JSON config; missing keys take defaults, unknown keys warn."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("invalid JSON in %s: %s" % (path, exc)) from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> HarnessConfig:
    kwargs = {}
    for key, value in raw.items():
        if key not in _CONFIG_FIELDS:
            log.warning("ignoring unknown config key %r", key)
            continue
        if key in ("host_addresses", "aux_commands"):
            if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
                raise ConfigError("config key %r must be a list of strings" % key)
            kwargs[key] = tuple(value)
        elif key == "exact_durations":
            if not isinstance(value, bool):
                raise ConfigError("config key %r must be a boolean" % key)
            kwargs[key] = value
        elif key == "results_dir":
            if not isinstance(value, str):
                raise ConfigError("config key %r must be a string" % key)
            kwargs[key] = value
        else:
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError("config key %r must be an integer" % key)
            kwargs[key] = value
    try:
        return HarnessConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
