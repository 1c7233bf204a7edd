"""In-memory task queues with long-polling and lease-based delivery.

Queues are derived state: histories are the durable truth and the
orchestrator rebuilds queue contents on startup. Delivery is at-least-once:
a task stays invisible while leased and returns to its queue when the lease
expires or is failed.
"""

from __future__ import annotations

import threading
import time
import uuid
from collections import deque
from dataclasses import dataclass, field
from typing import Any

from duraflow.model import EngineError, now_ms

WORKFLOW = "workflow"
ACTIVITY = "activity"

DEFAULT_LEASE_MS = 10_000


class QueueClosed(EngineError):
    code = "QueueClosed"


class UnknownOrExpiredLease(EngineError):
    code = "UnknownOrExpiredLease"


@dataclass
class _QueuedTask:
    payload: dict[str, Any]
    lease_ms: int


@dataclass
class TaskLease:
    task_token: str
    queue: str
    task_kind: str  # WORKFLOW | ACTIVITY
    payload: dict[str, Any]
    lease_deadline_ms: int
    lease_ms: int = field(default=DEFAULT_LEASE_MS)


class TaskQueueService:
    """Thread-safe queues keyed by (queue name, task kind)."""

    def __init__(self, default_lease_ms: int = DEFAULT_LEASE_MS):
        self._default_lease_ms = default_lease_ms
        self._cond = threading.Condition()
        self._queues: dict[tuple[str, str], deque[_QueuedTask]] = {}
        self._leases: dict[str, TaskLease] = {}
        self._closed = False

    def _queue(self, queue: str, task_kind: str) -> deque[_QueuedTask]:
        return self._queues.setdefault((queue, task_kind), deque())

    def enqueue(
        self,
        queue: str,
        task_kind: str,
        payload: dict[str, Any],
        lease_ms: int | None = None,
    ) -> None:
        with self._cond:
            if self._closed:
                raise QueueClosed("task queue service is shut down")
            self._queue(queue, task_kind).append(
                _QueuedTask(payload=dict(payload), lease_ms=lease_ms or self._default_lease_ms)
            )
            self._cond.notify_all()

    def poll(self, queue: str, task_kind: str, max_wait_ms: int) -> TaskLease | None:
        """Block up to max_wait_ms for a task; None when nothing arrives.

        The full budget is honored: an empty poll returns no earlier than
        max_wait_ms after the call.
        """
        deadline = time.monotonic() + max(0, max_wait_ms) / 1000.0
        with self._cond:
            while True:
                if self._closed:
                    return None
                now = now_ms()
                self._reap_locked(now)
                pending = self._queue(queue, task_kind)
                if pending:
                    task = pending.popleft()
                    lease = TaskLease(
                        task_token=f"{task_kind[:2]}-{uuid.uuid4().hex}",
                        queue=queue,
                        task_kind=task_kind,
                        payload=task.payload,
                        lease_deadline_ms=now + task.lease_ms,
                        lease_ms=task.lease_ms,
                    )
                    self._leases[lease.task_token] = lease
                    return lease
                remaining_s = deadline - time.monotonic()
                if remaining_s <= 0:
                    return None
                # Wake periodically so lease expiries are noticed without an
                # external ticker.
                self._cond.wait(min(remaining_s, 0.05))

    def get_lease(self, task_token: str) -> TaskLease | None:
        with self._cond:
            lease = self._leases.get(task_token)
            if lease is None or lease.lease_deadline_ms <= now_ms():
                return None
            return lease

    def complete_lease(self, task_token: str) -> None:
        """Remove the task permanently; errors if the lease already lapsed."""
        with self._cond:
            lease = self._leases.pop(task_token, None)
            if lease is None:
                raise UnknownOrExpiredLease(f"no live lease for token {task_token!r}")
            if lease.lease_deadline_ms <= now_ms():
                self._requeue_locked(lease)
                raise UnknownOrExpiredLease(f"lease {task_token!r} expired")

    def fail_lease(self, task_token: str) -> None:
        """Give the task back immediately with the same payload."""
        with self._cond:
            lease = self._leases.pop(task_token, None)
            if lease is None:
                raise UnknownOrExpiredLease(f"no live lease for token {task_token!r}")
            expired = lease.lease_deadline_ms <= now_ms()
            self._requeue_locked(lease)
            if expired:
                raise UnknownOrExpiredLease(f"lease {task_token!r} expired")

    def extend_lease(self, task_token: str, lease_ms: int) -> None:
        with self._cond:
            lease = self._leases.get(task_token)
            if lease is None or lease.lease_deadline_ms <= now_ms():
                raise UnknownOrExpiredLease(f"no live lease for token {task_token!r}")
            lease.lease_deadline_ms = now_ms() + lease_ms

    def reap_expired(self, now: int | None = None) -> int:
        """Requeue every task whose lease deadline passed; returns the count."""
        with self._cond:
            return self._reap_locked(now if now is not None else now_ms())

    def _reap_locked(self, now: int) -> int:
        expired = [t for t, lease in self._leases.items() if lease.lease_deadline_ms <= now]
        for token in expired:
            self._requeue_locked(self._leases.pop(token))
        if expired:
            self._cond.notify_all()
        return len(expired)

    def _requeue_locked(self, lease: TaskLease) -> None:
        if self._closed:
            return
        self._queue(lease.queue, lease.task_kind).append(
            _QueuedTask(payload=lease.payload, lease_ms=lease.lease_ms)
        )
        self._cond.notify_all()

    def depth(self, queue: str, task_kind: str) -> int:
        with self._cond:
            return len(self._queue(queue, task_kind))

    def leased_count(self) -> int:
        with self._cond:
            return len(self._leases)

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._queues.clear()
            self._leases.clear()
            self._cond.notify_all()
