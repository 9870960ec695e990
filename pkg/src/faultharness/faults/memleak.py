"""Memory-leak fault: allocate and touch memory at a constant rate, never free.

Usage: memleak <duration_s> [rate_mib_per_s]

Resident-set growth is linear in time. With duration 0 the leak runs until
killed. Exits nonzero on allocation failure without releasing anything;
exhausting memory is the point of the fault.
"""

from __future__ import annotations

import sys
import time

MIB = 1 << 20
DEFAULT_RATE_MIB_S = 16
CHUNK_MIB = 1
TICKS_PER_SECOND = 8


def run(duration_s: int, rate_mib_s: float = DEFAULT_RATE_MIB_S) -> int:
    hoard: list[bytearray] = []
    start = time.monotonic()
    allocated_mib = 0.0
    while True:
        elapsed = time.monotonic() - start
        if duration_s > 0 and elapsed >= duration_s:
            return 0
        target_mib = elapsed * rate_mib_s
        try:
            while allocated_mib < target_mib:
                # bytearray zero-fills, so every page is touched and resident.
                hoard.append(bytearray(CHUNK_MIB * MIB))
                allocated_mib += CHUNK_MIB
        except MemoryError:
            print("memleak: allocation failed after %.1f MiB" % allocated_mib,
                  file=sys.stderr)
            return 1
        time.sleep(1.0 / TICKS_PER_SECOND)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if not 1 <= len(argv) <= 2:
        print("usage: memleak <duration_s> [rate_mib_per_s]", file=sys.stderr)
        return 2
    try:
        duration = int(argv[0])
        rate = float(argv[1]) if len(argv) == 2 else DEFAULT_RATE_MIB_S
        if duration < 0 or rate <= 0:
            raise ValueError
    except ValueError:
        print("memleak: arguments must be numeric (duration >= 0, rate > 0)",
              file=sys.stderr)
        return 2
    return run(duration, rate)


if __name__ == "__main__":
    sys.exit(main())
