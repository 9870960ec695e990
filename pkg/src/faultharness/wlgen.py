"""Statistical workload generation.

Workloads are synthesized from four distributions (duration and inter-arrival
times, separately for fault and benchmark tasks), a weighted command list and
a maximum time span. Distributions can be given analytically or fitted from
measured samples. Alongside the full workload a short probe workload is
produced with one entry per distinct command.
"""

from __future__ import annotations

import json
import math
import os
import random
from dataclasses import dataclass, field
from typing import Optional, Sequence

from scipy import stats

from .core import Task, format_core_list, parse_core_list, validate_workload
from .storage import write_workload

DISTRIBUTION_KINDS = ("constant", "uniform", "exponential", "normal_truncated", "empirical")

# A fit is considered adequate when its KS statistic stays below this bound.
KS_ADEQUACY_THRESHOLD = 0.2
DEFAULT_NORMAL_FLOOR = 1.0


class SpecError(ValueError):
    """Invalid generation spec; the message names the offending field."""


@dataclass(frozen=True)
class DistributionSpec:
    """One positive-valued sampling distribution."""

    kind: str
    value: Optional[float] = None          # constant
    low: Optional[float] = None            # uniform
    high: Optional[float] = None
    rate: Optional[float] = None           # exponential
    mean: Optional[float] = None           # normal_truncated
    stddev: Optional[float] = None
    samples: Optional[tuple[float, ...]] = None  # empirical
    floor: float = DEFAULT_NORMAL_FLOOR

    def __post_init__(self) -> None:
        if self.kind not in DISTRIBUTION_KINDS:
            raise SpecError("unknown distribution kind %r" % self.kind)
        if self.kind == "constant" and (self.value is None or self.value <= 0):
            raise SpecError("constant distribution needs a positive 'value'")
        if self.kind == "uniform":
            if self.low is None or self.high is None or not 0 < self.low <= self.high:
                raise SpecError("uniform distribution needs 0 < low <= high")
        if self.kind == "exponential" and (self.rate is None or self.rate <= 0):
            raise SpecError("exponential distribution needs a positive 'rate'")
        if self.kind == "normal_truncated":
            if self.mean is None or self.stddev is None or self.mean <= 0 or self.stddev < 0:
                raise SpecError("normal_truncated needs positive 'mean' and nonnegative 'stddev'")
        if self.kind == "empirical":
            if not self.samples or any(s <= 0 for s in self.samples):
                raise SpecError("empirical distribution needs positive 'samples'")

    def sample(self, rng: random.Random) -> float:
        if self.kind == "constant":
            return self.value
        if self.kind == "uniform":
            return rng.uniform(self.low, self.high)
        if self.kind == "exponential":
            return rng.expovariate(self.rate)
        if self.kind == "normal_truncated":
            for _ in range(1000):
                draw = rng.gauss(self.mean, self.stddev)
                if draw >= self.floor:
                    return draw
            return self.floor
        return rng.choice(self.samples)


@dataclass(frozen=True)
class CommandSpec:
    command: str
    probability: float = 1.0
    cores: Optional[frozenset[int]] = None
    is_fault: bool = False

    def __post_init__(self) -> None:
        if not self.command:
            raise SpecError("command must be non-empty")
        if self.probability < 0:
            raise SpecError("probability must be >= 0 for %r" % self.command)


@dataclass(frozen=True)
class GenerationSpec:
    span: int
    commands: tuple[CommandSpec, ...]
    fault_duration: Optional[DistributionSpec] = None
    fault_interarrival: Optional[DistributionSpec] = None
    bench_duration: Optional[DistributionSpec] = None
    bench_interarrival: Optional[DistributionSpec] = None
    seed: int = 0
    probe_duration: int = 5

    def __post_init__(self) -> None:
        if self.span <= 0:
            raise SpecError("span must be positive")
        if not self.commands:
            raise SpecError("commands must be non-empty")
        if self.probe_duration <= 0:
            raise SpecError("probe_duration must be positive")
        for fault in (False, True):
            dur, inter = self._class_dists(fault)
            cmds = [c for c in self.commands if c.is_fault == fault]
            if dur is not None or inter is not None:
                if dur is None or inter is None:
                    raise SpecError(
                        "%s class needs both duration and interarrival distributions"
                        % ("fault" if fault else "bench")
                    )
                if not cmds or all(c.probability == 0 for c in cmds):
                    raise SpecError(
                        "%s distributions configured but no weighted %s command"
                        % (("fault",) * 2 if fault else ("bench",) * 2)
                    )

    def _class_dists(self, fault: bool):
        if fault:
            return self.fault_duration, self.fault_interarrival
        return self.bench_duration, self.bench_interarrival


def fit_distribution(samples: Sequence[float]) -> DistributionSpec:
    """Pick the best-fitting analytic family for measured positive samples.

    Candidates are ranked by log-likelihood; when no family achieves a KS
    statistic below the adequacy threshold the data is kept verbatim as an
    empirical distribution.
    """
    if len(samples) < 2:
        raise SpecError("fitting needs at least 2 samples")
    if any(s <= 0 for s in samples):
        raise SpecError("fitting needs positive samples")
    data = [float(s) for s in samples]

    if max(data) == min(data):
        return DistributionSpec(kind="constant", value=data[0])

    candidates: list[tuple[float, float, DistributionSpec]] = []

    lo, hi = min(data), max(data)
    uni = stats.uniform(loc=lo, scale=hi - lo)
    candidates.append(_score(data, uni, DistributionSpec(kind="uniform", low=lo, high=hi)))

    mean = sum(data) / len(data)
    expo = stats.expon(scale=mean)
    candidates.append(_score(data, expo, DistributionSpec(kind="exponential", rate=1.0 / mean)))

    std = math.sqrt(sum((x - mean) ** 2 for x in data) / len(data))
    if std > 0:
        norm = stats.norm(loc=mean, scale=std)
        candidates.append(_score(
            data, norm, DistributionSpec(kind="normal_truncated", mean=mean, stddev=std)
        ))

    best = max(candidates, key=lambda c: c[0])
    if all(ks > KS_ADEQUACY_THRESHOLD for _, ks, _ in candidates):
        return DistributionSpec(kind="empirical", samples=tuple(data))
    return best[2]


def _score(data, frozen_dist, spec: DistributionSpec):
    eps = 1e-12
    loglik = float(sum(math.log(max(p, eps)) for p in frozen_dist.pdf(data)))
    ks = float(stats.kstest(data, frozen_dist.cdf).statistic)
    if ks > KS_ADEQUACY_THRESHOLD:
        loglik = -math.inf  # inadequate fits never win on likelihood alone
    return loglik, ks, spec


def _pick_command(rng: random.Random, commands: list[CommandSpec]) -> CommandSpec:
    total = sum(c.probability for c in commands)
    point = rng.uniform(0, total)
    acc = 0.0
    for cmd in commands:
        acc += cmd.probability
        if point <= acc:
            return cmd
    return commands[-1]


def generate_workload(spec: GenerationSpec) -> tuple[list[Task], list[Task]]:
    """Synthesize (workload, probe) task lists from a generation spec.

    Deterministic for a fixed seed; timestamps are sorted and seq_nums are
    assigned 1..n over the merged fault/benchmark streams.
    """
    rng = random.Random(spec.seed)
    raw: list[tuple[int, int, CommandSpec]] = []
    for fault in (False, True):
        duration_dist, inter_dist = spec._class_dists(fault)
        if duration_dist is None:
            continue
        commands = [c for c in spec.commands if c.is_fault == fault and c.probability > 0]
        t = 0.0
        while t < spec.span:
            duration = max(1, round(duration_dist.sample(rng)))
            cmd = _pick_command(rng, commands)
            raw.append((int(round(t)), duration, cmd))
            t += inter_dist.sample(rng)

    raw.sort(key=lambda item: item[0])
    tasks = [
        Task(
            args=cmd.command,
            timestamp=ts,
            duration=duration,
            seq_num=i + 1,
            is_fault=cmd.is_fault,
            cores=cmd.cores,
        )
        for i, (ts, duration, cmd) in enumerate(raw)
    ]

    probe: list[Task] = []
    seen_commands: set[str] = set()
    step = spec.probe_duration + 1
    for cmd in spec.commands:
        if cmd.command in seen_commands:
            continue
        seen_commands.add(cmd.command)
        probe.append(Task(
            args=cmd.command,
            timestamp=len(probe) * step,
            duration=spec.probe_duration,
            seq_num=len(probe) + 1,
            is_fault=cmd.is_fault,
            cores=cmd.cores,
        ))
    return tasks, probe


def write_generated(spec: GenerationSpec, out_dir: str) -> tuple[str, str]:
    """Generate and write workload.csv and workload_probe.csv under out_dir."""
    tasks, probe = generate_workload(spec)
    findings = validate_workload(tasks) + validate_workload(probe)
    if findings:
        raise SpecError("generator produced an invalid workload: %s" % findings)
    os.makedirs(out_dir, exist_ok=True)
    workload_path = os.path.join(out_dir, "workload.csv")
    probe_path = os.path.join(out_dir, "workload_probe.csv")
    write_workload(workload_path, tasks)
    write_workload(probe_path, probe)
    return workload_path, probe_path


# -- JSON spec parsing -------------------------------------------------------

def _dist_from_dict(raw: dict, where: str) -> DistributionSpec:
    if not isinstance(raw, dict) or "kind" not in raw:
        raise SpecError("%s: expected an object with a 'kind'" % where)
    kwargs = dict(raw)
    if "samples" in kwargs and kwargs["samples"] is not None:
        kwargs["samples"] = tuple(kwargs["samples"])
    try:
        return DistributionSpec(**kwargs)
    except TypeError as exc:
        raise SpecError("%s: %s" % (where, exc)) from exc


def spec_from_dict(raw: dict) -> GenerationSpec:
    """Build a GenerationSpec from its JSON object form."""
    if not isinstance(raw, dict):
        raise SpecError("spec root must be a JSON object")
    if "span" not in raw:
        raise SpecError("missing required field 'span'")
    if "commands" not in raw or not isinstance(raw["commands"], list):
        raise SpecError("missing required field 'commands'")
    commands = []
    for i, entry in enumerate(raw["commands"]):
        if not isinstance(entry, dict) or "command" not in entry:
            raise SpecError("commands[%d]: expected an object with 'command'" % i)
        cores = entry.get("cores")
        commands.append(CommandSpec(
            command=entry["command"],
            probability=float(entry.get("probability", 1.0)),
            cores=parse_core_list(cores) if cores else None,
            is_fault=bool(entry.get("is_fault", False)),
        ))
    dists = {}
    for name in ("fault_duration", "fault_interarrival", "bench_duration", "bench_interarrival"):
        if raw.get(name) is not None:
            dists[name] = _dist_from_dict(raw[name], name)
    return GenerationSpec(
        span=int(raw["span"]),
        commands=tuple(commands),
        seed=int(raw.get("seed", 0)),
        probe_duration=int(raw.get("probe_duration", 5)),
        **dists,
    )


def read_spec(path: str) -> GenerationSpec:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SpecError("invalid JSON in %s: %s" % (path, exc)) from exc
    return spec_from_dict(raw)
