"""Deterministic arithmetic benchmark calibrated to a target wall time.

Usage: busyloop <duration_s>

Measures the local iteration rate, then performs a fixed number of
iterations sized to take roughly duration_s on an unloaded core. Prints the
number of iterations completed, so output capture can be verified.

The calibrated rate is cached on disk so that repeated runs on the same
machine burn an identical iteration count per second of requested duration.
Without the cache, transient scheduler or frequency noise during the short
calibration phase would make the workload size vary from run to run.
"""

from __future__ import annotations

import os
import statistics
import sys
import tempfile
import time

CALIBRATION_WINDOWS = 8
CALIBRATION_WINDOW_CPU_SECONDS = 0.1
BLOCK_ITERATIONS = 50_000
CACHE_MAX_AGE_SECONDS = 24 * 3600
_SANE_RATE_RANGE = (1e3, 1e12)


def _cache_path() -> str:
    return os.path.join(tempfile.gettempdir(), "busyloop_calibration.txt")


def _load_cached_rate() -> float | None:
    path = _cache_path()
    try:
        if time.time() - os.path.getmtime(path) > CACHE_MAX_AGE_SECONDS:
            return None
        with open(path, "r", encoding="ascii") as fh:
            rate = float(fh.read().strip())
    except (OSError, ValueError):
        return None
    if not _SANE_RATE_RANGE[0] <= rate <= _SANE_RATE_RANGE[1]:
        return None
    return rate


def _store_cached_rate(rate: float) -> None:
    path = _cache_path()
    try:
        fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path))
        with os.fdopen(fd, "w", encoding="ascii") as fh:
            fh.write("%.1f\n" % rate)
        os.replace(tmp, path)
    except OSError:
        pass  # caching is best-effort


def _burn(iterations: int) -> float:
    x = 1.0001
    for _ in range(iterations):
        x = x * 1.0000001 + 1e-9
    return x


def _calibrate() -> float:
    """Iterations per second of CPU time on an unloaded core.

    Measured against process CPU time rather than wall time so that
    scheduler interference does not skew the rate, and taken as the
    median over several short windows to discard transient dips and
    spikes from core migration or frequency changes.
    """
    _burn(BLOCK_ITERATIONS)  # warm-up
    rates = []
    for _ in range(CALIBRATION_WINDOWS):
        done = 0
        start = time.process_time()
        while time.process_time() - start < CALIBRATION_WINDOW_CPU_SECONDS:
            _burn(BLOCK_ITERATIONS)
            done += BLOCK_ITERATIONS
        rates.append(done / (time.process_time() - start))
    return statistics.median(rates)


def run(duration_s: int) -> int:
    rate = _load_cached_rate()
    if rate is None:
        rate = _calibrate()
        _store_cached_rate(rate)
    total = int(rate * duration_s)
    done = 0
    while done < total:
        block = min(BLOCK_ITERATIONS, total - done)
        _burn(block)
        done += block
    print("busyloop: completed %d iterations" % done)
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: busyloop <duration_s>", file=sys.stderr)
        return 2
    try:
        duration = int(argv[0])
        if duration < 1:
            raise ValueError
    except ValueError:
        print("busyloop: duration must be an integer >= 1", file=sys.stderr)
        return 2
    return run(duration)


if __name__ == "__main__":
    sys.exit(main())
