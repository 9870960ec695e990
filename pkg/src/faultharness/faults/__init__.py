"""Portable fault-triggering and benchmark programs shipped with the harness.

Each submodule is an executable (`python -m faultharness.faults.<name>` or the
installed console script of the same name) taking positional arguments:

- memleak <duration_s> [rate_mib_per_s]: allocate and touch memory at a
  constant rate, never freeing.
- cpuoccupy <duration_s> [n_workers]: spin full-load arithmetic workers.
- busyloop <duration_s>: a fixed arithmetic workload calibrated to roughly
  the requested wall time; a deterministic benchmark stand-in.

A duration of 0 means "run until terminated".
"""
