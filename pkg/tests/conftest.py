import sys

import pytest

from faultharness import Engine, HarnessConfig

PYTHON = sys.executable


def busyloop_cmd(seconds: int) -> str:
    return "%s -m faultharness.faults.busyloop %d" % (PYTHON, seconds)


def memleak_cmd(seconds: int, rate: float | None = None) -> str:
    cmd = "%s -m faultharness.faults.memleak %d" % (PYTHON, seconds)
    if rate is not None:
        cmd += " %g" % rate
    return cmd


def cpuoccupy_cmd(seconds: int, workers: int = 1) -> str:
    return "%s -m faultharness.faults.cpuoccupy %d %d" % (PYTHON, seconds, workers)


@pytest.fixture
def engine_factory(tmp_path):
    """Start in-process engines on ephemeral ports; all stopped at teardown."""
    engines = []

    def start(**config_kwargs) -> Engine:
        config_kwargs.setdefault("results_dir", str(tmp_path / "results"))
        engine = Engine(HarnessConfig(**config_kwargs), port=0)
        engine.start()
        engines.append(engine)
        return engine

    yield start
    for engine in engines:
        engine.shutdown()
