"""Task queues: FIFO delivery, long-poll, lease expiry, at-least-once."""

from __future__ import annotations

import threading
import time

import pytest

from duraflow.matching import (
    ACTIVITY,
    WORKFLOW,
    QueueClosed,
    TaskQueueService,
    UnknownOrExpiredLease,
)


@pytest.fixture
def queues():
    service = TaskQueueService()
    yield service
    service.close()


class TestDelivery:
    def test_enqueue_then_poll_returns_same_task(self, queues):
        queues.enqueue("q", WORKFLOW, {"run_id": "r1"})
        lease = queues.poll("q", WORKFLOW, max_wait_ms=200)
        assert lease is not None
        assert lease.payload == {"run_id": "r1"}

    def test_fifo_order_under_single_poller(self, queues):
        expected = [{"n": i} for i in range(3)]
        for payload in expected:
            queues.enqueue("q", ACTIVITY, payload)
        got = []
        for _ in range(3):
            lease = queues.poll("q", ACTIVITY, max_wait_ms=100)
            got.append(lease.payload)
            queues.complete_lease(lease.task_token)
        assert got == expected

    def test_empty_poll_times_out_after_budget(self, queues):
        start = time.monotonic()
        assert queues.poll("empty", WORKFLOW, max_wait_ms=100) is None
        assert time.monotonic() - start >= 0.1

    def test_kinds_and_queues_are_isolated(self, queues):
        queues.enqueue("q1", WORKFLOW, {"a": 1})
        assert queues.poll("q1", ACTIVITY, max_wait_ms=10) is None
        assert queues.poll("q2", WORKFLOW, max_wait_ms=10) is None
        assert queues.poll("q1", WORKFLOW, max_wait_ms=10) is not None

    def test_longpoll_wakes_on_enqueue(self, queues):
        result = {}

        def poller():
            result["lease"] = queues.poll("q", WORKFLOW, max_wait_ms=2_000)

        thread = threading.Thread(target=poller)
        thread.start()
        time.sleep(0.05)
        queues.enqueue("q", WORKFLOW, {"x": 1})
        thread.join(timeout=1.0)
        assert not thread.is_alive()
        assert result["lease"].payload == {"x": 1}


class TestLeases:
    def test_abandoned_lease_redelivers_after_expiry(self, queues):
        queues.enqueue("q", ACTIVITY, {"n": 1}, lease_ms=1_000)
        first = queues.poll("q", ACTIVITY, max_wait_ms=100)
        assert first is not None
        start = time.monotonic()
        second = queues.poll("q", ACTIVITY, max_wait_ms=2_500)
        elapsed = time.monotonic() - start
        assert second is not None
        assert second.payload == {"n": 1}
        assert second.task_token != first.task_token
        assert 0.75 <= elapsed <= 1.25  # lease 1s, tolerance +-250ms

    def test_complete_twice_raises(self, queues):
        queues.enqueue("q", ACTIVITY, {"n": 1})
        lease = queues.poll("q", ACTIVITY, max_wait_ms=100)
        queues.complete_lease(lease.task_token)
        with pytest.raises(UnknownOrExpiredLease):
            queues.complete_lease(lease.task_token)

    def test_complete_after_expiry_raises(self, queues):
        queues.enqueue("q", ACTIVITY, {"n": 1}, lease_ms=50)
        lease = queues.poll("q", ACTIVITY, max_wait_ms=100)
        time.sleep(0.1)
        with pytest.raises(UnknownOrExpiredLease):
            queues.complete_lease(lease.task_token)
        # ... and the task is back in the queue.
        assert queues.poll("q", ACTIVITY, max_wait_ms=200) is not None

    def test_fail_lease_requeues_immediately(self, queues):
        queues.enqueue("q", WORKFLOW, {"n": 1})
        lease = queues.poll("q", WORKFLOW, max_wait_ms=100)
        queues.fail_lease(lease.task_token)
        again = queues.poll("q", WORKFLOW, max_wait_ms=100)
        assert again is not None
        assert again.payload == {"n": 1}

    def test_no_duplicate_hold_while_leased(self, queues):
        for i in range(20):
            queues.enqueue("q", ACTIVITY, {"n": i}, lease_ms=10_000)
        held: set[int] = set()
        violations = []
        lock = threading.Lock()

        def worker():
            while True:
                lease = queues.poll("q", ACTIVITY, max_wait_ms=50)
                if lease is None:
                    return
                n = lease.payload["n"]
                with lock:
                    if n in held:
                        violations.append(n)
                    held.add(n)
                time.sleep(0.002)
                with lock:
                    held.discard(n)
                queues.complete_lease(lease.task_token)

        threads = [threading.Thread(target=worker) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert violations == []
        assert queues.depth("q", ACTIVITY) == 0

    def test_at_least_once_despite_abandoning_pollers(self, queues):
        # Crashing pollers are simulated by abandoning leases; the task must
        # keep coming back until someone completes it.
        queues.enqueue("q", ACTIVITY, {"n": 1}, lease_ms=40)
        deliveries = 0
        deadline = time.monotonic() + 5.0
        while time.monotonic() < deadline:
            lease = queues.poll("q", ACTIVITY, max_wait_ms=500)
            assert lease is not None, "task was lost"
            deliveries += 1
            if deliveries < 4:
                continue  # abandon: crash before completing
            queues.complete_lease(lease.task_token)
            break
        assert deliveries == 4
        assert queues.poll("q", ACTIVITY, max_wait_ms=100) is None


class TestShutdown:
    def test_enqueue_after_close_raises(self, queues):
        queues.close()
        with pytest.raises(QueueClosed):
            queues.enqueue("q", WORKFLOW, {})

    def test_poll_after_close_returns_none(self, queues):
        queues.close()
        assert queues.poll("q", WORKFLOW, max_wait_ms=1_000) is None
