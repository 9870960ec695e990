"""CPU interference fault: spin full-load arithmetic workers.

Usage: cpuoccupy <duration_s> [n_workers]

Each worker is a separate process so the load spreads over as many cores as
the scheduler (or a pinning launcher) allows. Duration 0 runs until killed.
"""

from __future__ import annotations

import multiprocessing
import signal
import sys
import time


def _spin(duration_s: int) -> None:
    start = time.monotonic()
    x = 1.0001
    while duration_s == 0 or time.monotonic() - start < duration_s:
        for _ in range(100_000):
            x = x * 1.0000001 + 1e-9
        if x > 1e12:
            x = 1.0001


def run(duration_s: int, n_workers: int = 1) -> int:
    workers = [
        multiprocessing.Process(target=_spin, args=(duration_s,), daemon=True)
        for _ in range(n_workers)
    ]

    def _reap(signum, frame):
        # Workers must not outlive the parent: a plain kill of this process
        # would otherwise leave them spinning as orphans.
        for w in workers:
            w.terminate()
        sys.exit(128 + signum)

    signal.signal(signal.SIGTERM, _reap)
    signal.signal(signal.SIGINT, _reap)
    for w in workers:
        w.start()
    for w in workers:
        w.join()
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if not 1 <= len(argv) <= 2:
        print("usage: cpuoccupy <duration_s> [n_workers]", file=sys.stderr)
        return 2
    try:
        duration = int(argv[0])
        n_workers = int(argv[1]) if len(argv) == 2 else 1
        if duration < 0 or n_workers < 1:
            raise ValueError
    except ValueError:
        print("cpuoccupy: duration must be >= 0 and n_workers >= 1", file=sys.stderr)
        return 2
    return run(duration, n_workers)


if __name__ == "__main__":
    sys.exit(main())
