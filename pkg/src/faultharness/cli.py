"""Command-line entry points: engine daemon, controller, workload generator.

Each is installed as a console script; `python -m faultharness.cli
<engine|controller|genwl> ...` dispatches to the same mains. A default config
file path can be supplied through the FINJ_CONFIG environment variable.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from typing import Optional

from .controller import SessionPlan, inject
from .core import HarnessConfig
from .engine import engine_run
from .netproto import PeerId
from .storage import ConfigError, FormatError, read_config
from .wlgen import SpecError, read_spec, write_generated

CONFIG_ENV_VAR = "FINJ_CONFIG"


def _load_config(path: Optional[str]) -> HarnessConfig:
    path = path or os.environ.get(CONFIG_ENV_VAR)
    if path is None:
        return HarnessConfig()
    return read_config(path)


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def engine_main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="faultharness-engine",
        description="Run a task-executing engine daemon on this node.",
    )
    parser.add_argument("-p", "--port", type=int, help="listening TCP port")
    parser.add_argument("-c", "--config", help="JSON config file path")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    if args.port is not None and not 1 <= args.port <= 65535:
        parser.error("port must be in 1..65535")
    try:
        config = _load_config(args.config)
    except (ConfigError, OSError) as exc:
        print("engine: %s" % exc, file=sys.stderr)
        return 1
    try:
        engine_run(config, port=args.port)
    except OSError as exc:
        print("engine: cannot listen on port %d: %s"
              % (args.port or config.listen_port, exc), file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        pass
    return 0


def controller_main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="faultharness-controller",
        description="Replay a workload against one or more engines.",
    )
    parser.add_argument("-w", "--workload", required=True, help="workload CSV path")
    parser.add_argument("-a", "--addresses",
                        help="comma-separated engine addresses (host:port)")
    parser.add_argument("-c", "--config", help="JSON config file path")
    parser.add_argument("-o", "--results-dir", help="output directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    try:
        config = _load_config(args.config)
    except (ConfigError, OSError) as exc:
        print("controller: %s" % exc, file=sys.stderr)
        return 1
    if args.results_dir:
        config = dataclasses.replace(config, results_dir=args.results_dir)
    if not os.path.exists(args.workload):
        print("controller: file not found: %s" % args.workload, file=sys.stderr)
        return 1
    addresses = args.addresses.split(",") if args.addresses else list(config.host_addresses)
    if not addresses:
        parser.error("no engine addresses: pass -a or set host_addresses in the config")
    try:
        targets = [PeerId.parse(a.strip()) for a in addresses]
    except ValueError as exc:
        parser.error(str(exc))
    plan = SessionPlan(
        workload_path=args.workload,
        targets=targets,
        read_ahead=config.read_ahead_seconds,
    )
    try:
        summary = inject(plan, config)
    except (ConnectionError, FormatError) as exc:
        print("controller: %s" % exc, file=sys.stderr)
        return 1
    for peer, host in sorted(summary.hosts.items()):
        print("%s: started=%d ended=%d errored=%d complete=%s"
              % (peer, host.started, host.ended, host.errored, host.complete))
    return 0 if summary.clean else 1


def genwl_main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="faultharness-genwl",
        description="Generate a workload CSV and its probe from a JSON spec.",
    )
    parser.add_argument("-s", "--spec", required=True, help="generation spec JSON path")
    parser.add_argument("-o", "--out-dir", default=".", help="output directory")
    parser.add_argument("--seed", type=int, help="override the spec's seed")
    args = parser.parse_args(argv)
    _setup_logging(False)
    try:
        spec = read_spec(args.spec)
        if args.seed is not None:
            spec = dataclasses.replace(spec, seed=args.seed)
        workload_path, probe_path = write_generated(spec, args.out_dir)
    except (SpecError, OSError) as exc:
        print("genwl: %s" % exc, file=sys.stderr)
        return 1
    from .storage import read_workload

    tasks = list(read_workload(workload_path))
    n_fault = sum(1 for t in tasks if t.is_fault)
    print("workload=%s probe=%s tasks=%d faults=%d benchmarks=%d"
          % (workload_path, probe_path, len(tasks), n_fault, len(tasks) - n_fault))
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    mains = {"engine": engine_main, "controller": controller_main, "genwl": genwl_main}
    if not argv or argv[0] not in mains:
        print("usage: python -m faultharness.cli {engine|controller|genwl} ...",
              file=sys.stderr)
        return 2
    return mains[argv[0]](argv[1:])


if __name__ == "__main__":
    sys.exit(main())
