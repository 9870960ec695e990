import os
import threading
import time

import pytest

from faultharness import Engine, HarnessConfig
from faultharness.controller import Controller, SessionPlan, inject
from faultharness.core import EventType, Message, MessageKind, Task
from faultharness.netproto import PeerId
from faultharness.storage import read_log, write_workload


def run_inject(plan, config):
    return inject(plan, config)


def make_plan(workload, *engines, **kw):
    kw.setdefault("read_ahead", 300)
    kw.setdefault("startup_timeout", 10)
    kw.setdefault("drain_grace", 15)
    return SessionPlan(workload_path=str(workload),
                       targets=[PeerId("127.0.0.1", e.port) for e in engines], **kw)


def event_shape(events):
    return [(e.type, e.task.seq_num if e.task else None) for e in events]


@pytest.fixture
def results_dir(tmp_path):
    return str(tmp_path / "results")


class TestInject:
    def test_single_host_session(self, tmp_path, engine_factory, results_dir):
        engine = engine_factory()
        workload = tmp_path / "wl.csv"
        write_workload(str(workload), [
            Task("echo one", 0, 0, 1),
            Task("echo two", 1, 0, 2),
        ])
        config = HarnessConfig(results_dir=results_dir, retry_interval_seconds=1)
        summary = inject(make_plan(workload, engine), config)
        host = summary.hosts["127.0.0.1:%d" % engine.port]
        assert (host.started, host.ended, host.errored) == (2, 2, 0)
        events = read_log(os.path.join(results_dir, "127.0.0.1_%d.csv" % engine.port))
        assert event_shape(events) == [
            (EventType.SESSION_START, None),
            (EventType.STATUS_START, 1),
            (EventType.STATUS_END, 1),
            (EventType.STATUS_START, 2),
            (EventType.STATUS_END, 2),
            (EventType.SESSION_END, None),
        ]

    def test_empty_workload(self, tmp_path, engine_factory, results_dir):
        engine = engine_factory()
        workload = tmp_path / "wl.csv"
        write_workload(str(workload), [])
        config = HarnessConfig(results_dir=results_dir, retry_interval_seconds=1)
        summary = inject(make_plan(workload, engine), config)
        assert summary.clean
        events = read_log(os.path.join(results_dir, "127.0.0.1_%d.csv" % engine.port))
        assert [e.type for e in events] == [EventType.SESSION_START, EventType.SESSION_END]

    def test_two_engines_get_identical_sequences(self, tmp_path, engine_factory, results_dir):
        e1, e2 = engine_factory(), engine_factory()
        workload = tmp_path / "wl.csv"
        write_workload(str(workload), [
            Task("echo a", 0, 0, 1),
            Task("sleep 1", 1, 5, 2),
        ])
        config = HarnessConfig(results_dir=results_dir, retry_interval_seconds=1)
        summary = inject(make_plan(workload, e1, e2), config)
        assert summary.clean
        logs = [
            read_log(os.path.join(results_dir, "127.0.0.1_%d.csv" % e.port))
            for e in (e1, e2)
        ]
        assert event_shape(logs[0]) == event_shape(logs[1])
        assert all(abs(a.timestamp - b.timestamp) <= 2 for a, b in zip(*logs))

    def test_no_target_reachable_aborts(self, tmp_path, results_dir):
        workload = tmp_path / "wl.csv"
        write_workload(str(workload), [Task("echo x", 0, 0, 1)])
        plan = SessionPlan(workload_path=str(workload),
                           targets=[PeerId("127.0.0.1", 1)], startup_timeout=1)
        with pytest.raises(ConnectionError):
            inject(plan, HarnessConfig(results_dir=results_dir, retry_interval_seconds=1))

    def test_mid_file_parse_error_recorded_and_skipped(self, tmp_path, engine_factory,
                                                       results_dir):
        engine = engine_factory()
        workload = tmp_path / "wl.csv"
        workload.write_text(
            "timestamp;duration;seqNum;isFault;cores;args\n"
            "0;0;1;False;;echo first\n"
            "not a task line\n"
            "1;0;2;False;;echo second\n"
        )
        config = HarnessConfig(results_dir=results_dir, retry_interval_seconds=1)
        summary = inject(make_plan(workload, engine), config)
        host = summary.hosts["127.0.0.1:%d" % engine.port]
        assert host.ended == 2
        assert host.errored == 1
        events = read_log(os.path.join(results_dir, "127.0.0.1_%d.csv" % engine.port))
        errs = [e for e in events if e.type == EventType.STATUS_ERR]
        assert len(errs) == 1 and "line 3" in errs[0].error

    def test_dispatch_order_nondecreasing(self, tmp_path, engine_factory, results_dir):
        # pool_size=1 serializes execution, so start events mirror dispatch order
        engine = engine_factory(pool_size=1)
        workload = tmp_path / "wl.csv"
        write_workload(str(workload), [Task("echo t%d" % i, i // 3, 0, i + 1)
                                       for i in range(9)])
        config = HarnessConfig(results_dir=results_dir, retry_interval_seconds=1)
        summary = Controller(make_plan(workload, engine), config).inject()
        assert summary.clean
        events = read_log(os.path.join(results_dir, "127.0.0.1_%d.csv" % engine.port))
        starts = [e.task.seq_num for e in events if e.type == EventType.STATUS_START]
        assert starts == sorted(starts)


class TestRecovery:
    def test_engine_restart_redispatches_open_window(self, tmp_path, results_dir):
        config = HarnessConfig(results_dir=results_dir, retry_interval_seconds=1)
        engine = Engine(config, port=0)
        engine.start()
        port = engine.port
        workload = tmp_path / "wl.csv"
        write_workload(str(workload), [Task("sleep 20", 0, 20, 1)])
        plan = SessionPlan(workload_path=str(workload), targets=[PeerId("127.0.0.1", port)],
                           startup_timeout=10, drain_grace=30)
        result = {}

        def run():
            result["summary"] = inject(plan, config)

        worker = threading.Thread(target=run)
        worker.start()
        time.sleep(5)
        engine.shutdown()
        time.sleep(5)
        engine2 = Engine(config, port=port)
        engine2.start()
        worker.join(timeout=90)
        engine2.shutdown()
        assert not worker.is_alive()

        events = read_log(os.path.join(results_dir, "127.0.0.1_%d.csv" % port))
        types = [e.type for e in events]
        assert EventType.CONN_LOST in types
        assert EventType.CONN_RESTORED in types
        assert types.index(EventType.CONN_LOST) < types.index(EventType.CONN_RESTORED)
        # re-dispatched start after restoration, then a final end
        starts = [i for i, t in enumerate(types) if t == EventType.STATUS_START]
        assert any(i > types.index(EventType.CONN_RESTORED) for i in starts)
        assert types[-1] == EventType.SESSION_END
        assert EventType.STATUS_END in types

    def test_outage_with_no_tasks_only_conn_events(self, tmp_path, results_dir):
        config = HarnessConfig(results_dir=results_dir, retry_interval_seconds=1)
        engine = Engine(config, port=0)
        engine.start()
        port = engine.port
        workload = tmp_path / "wl.csv"
        write_workload(str(workload), [Task("echo done", 12, 0, 1)])
        plan = SessionPlan(workload_path=str(workload), targets=[PeerId("127.0.0.1", port)],
                           startup_timeout=10, drain_grace=15, read_ahead=1)
        result = {}
        worker = threading.Thread(target=lambda: result.update(s=inject(plan, config)))
        worker.start()
        time.sleep(2)
        engine.shutdown()
        time.sleep(3)
        engine2 = Engine(config, port=port)
        engine2.start()
        worker.join(timeout=60)
        engine2.shutdown()
        assert not worker.is_alive()
        assert result["s"].clean
        events = read_log(os.path.join(results_dir, "127.0.0.1_%d.csv" % port))
        shape = event_shape(events)
        assert shape == [
            (EventType.SESSION_START, None),
            (EventType.CONN_LOST, None),
            (EventType.CONN_RESTORED, None),
            (EventType.STATUS_START, 1),
            (EventType.STATUS_END, 1),
            (EventType.SESSION_END, None),
        ]

    def test_task_missed_entirely_during_outage(self, tmp_path, results_dir):
        config = HarnessConfig(results_dir=results_dir, retry_interval_seconds=1)
        engine = Engine(config, port=0)
        engine.start()
        port = engine.port
        workload = tmp_path / "wl.csv"
        write_workload(str(workload), [Task("echo missed", 1, 2, 1)])
        plan = SessionPlan(workload_path=str(workload), targets=[PeerId("127.0.0.1", port)],
                           startup_timeout=10, drain_grace=10)
        worker = threading.Thread(target=lambda: inject(plan, config))
        worker.start()
        time.sleep(0.5)
        engine.shutdown()  # outage spans the whole task window (t=1..3)
        time.sleep(6)
        engine2 = Engine(config, port=port)
        engine2.start()
        worker.join(timeout=60)
        engine2.shutdown()
        assert not worker.is_alive()
        events = read_log(os.path.join(results_dir, "127.0.0.1_%d.csv" % port))
        missed = [e for e in events
                  if e.type == EventType.STATUS_ERR and e.error == "missed during outage"]
        assert len(missed) == 1
        assert missed[0].task.seq_num == 1


class TestRecordStatus:
    def make_controller(self, tmp_path, results_dir):
        workload = tmp_path / "wl.csv"
        write_workload(str(workload), [])
        plan = SessionPlan(workload_path=str(workload), targets=[PeerId("127.0.0.1", 1)])
        return Controller(plan, HarnessConfig(results_dir=results_dir))

    def test_unknown_peer_goes_to_quarantine(self, tmp_path, results_dir):
        controller = self.make_controller(tmp_path, results_dir)
        os.makedirs(results_dir, exist_ok=True)
        msg = Message(kind=MessageKind.STATUS_ERROR,
                      payload={"error": "boom", "abs_time": 123}, sender_id="ghost:9")
        controller.record_status(PeerId("10.0.0.9", 9), msg)
        events = read_log(os.path.join(results_dir, "quarantine.csv"))
        assert len(events) == 1
        assert "unknown peer" in events[0].error
