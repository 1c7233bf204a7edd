"""Worker host loop: polls task queues, replays workflows, runs activities.

Activity implementations receive an ActivityInvocation and must be idempotent:
delivery is at-least-once, and a crashed worker's task is re-run elsewhere
after its lease expires. Fault directives attached to a task are enacted here,
at the executor boundary, before the real implementation runs.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable

from duraflow.client import EngineApiError, EngineClient, TransportError
from duraflow.model import ActivityTask
from duraflow.replay import ReplayError, WorkflowDefinition, replay

log = logging.getLogger(__name__)

DEFAULT_ACTIVITY_CONCURRENCY = 16


class WorkerCrashed(Exception):
    """Raised by an injected crash directive; kills the worker loop."""


@dataclass(frozen=True)
class ActivityInvocation:
    activity_type: str
    input: str
    attempt: int
    run_id: str
    workflow_id: str


ActivityHandler = Callable[[ActivityInvocation], Any]


class Worker:
    """Polls one task queue for workflow and/or activity tasks."""

    def __init__(
        self,
        client: EngineClient,
        task_queue: str,
        workflows: dict[str, WorkflowDefinition] | None = None,
        activities: dict[str, ActivityHandler] | None = None,
        concurrency: int = DEFAULT_ACTIVITY_CONCURRENCY,
        worker_id: str | None = None,
        poll_wait_ms: int = 1_000,
    ):
        self.client = client
        self.task_queue = task_queue
        self.workflows = workflows or {}
        self.activities = activities or {}
        self.worker_id = worker_id or f"worker-{id(self):x}"
        self.poll_wait_ms = poll_wait_ms
        self.crashed = False

        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self._pool = ThreadPoolExecutor(max_workers=max(1, concurrency), thread_name_prefix="activity")
        self._slots = threading.Semaphore(max(1, concurrency))

    # -- lifecycle ---------------------------------------------------------------

    def start(self) -> "Worker":
        if self.workflows:
            thread = threading.Thread(
                target=self._workflow_loop, daemon=True, name=f"{self.worker_id}-wf"
            )
            thread.start()
            self._threads.append(thread)
        if self.activities:
            thread = threading.Thread(
                target=self._activity_loop, daemon=True, name=f"{self.worker_id}-act"
            )
            thread.start()
            self._threads.append(thread)
        if not self._threads:
            raise ValueError("worker has neither workflows nor activities registered")
        return self

    def stop(self, graceful: bool = True) -> None:
        self._stop.set()
        for thread in self._threads:
            thread.join(timeout=5.0)
        self._pool.shutdown(wait=graceful)

    def crash(self) -> None:
        """Simulate a hard crash: abandon every lease, report nothing."""
        self.crashed = True
        self._stop.set()
        self._pool.shutdown(wait=False)

    def run_until_stopped(self) -> bool:
        """Block until stop/crash; returns True if the worker crashed."""
        self.start()
        try:
            while not self._stop.is_set():
                time.sleep(0.1)
        except KeyboardInterrupt:
            self.stop()
        return self.crashed

    def _backoff_sleep(self, failures: int) -> None:
        self._stop.wait(min(0.2 * (2**failures), 2.0))

    # -- workflow tasks --------------------------------------------------------------

    def _workflow_loop(self) -> None:
        transport_failures = 0
        while not self._stop.is_set():
            try:
                task = self.client.poll_workflow_task(
                    self.task_queue, self.poll_wait_ms, worker_id=self.worker_id
                )
                transport_failures = 0
            except TransportError:
                transport_failures += 1
                self._backoff_sleep(transport_failures)
                continue
            except EngineApiError as err:
                log.warning("workflow poll rejected: %s", err)
                self._stop.wait(0.2)
                continue
            if task is None or self._stop.is_set():
                continue
            self._handle_workflow_task(task)

    def _handle_workflow_task(self, task) -> None:
        defn = self.workflows.get(task.workflow_type)
        try:
            if defn is None:
                self.client.fail_workflow_task(
                    task.task_token, f"unknown workflow type: {task.workflow_type}"
                )
                return
            try:
                result = replay(defn, task.history)
            except ReplayError as err:
                # Includes NonDeterminismError and body bugs: surfaced in the
                # history as a task failure; the engine retries until a fixed
                # worker picks the workflow up again.
                self.client.fail_workflow_task(task.task_token, f"{err.code}: {err}")
                return
            self.client.complete_workflow_task(task.task_token, result.commands)
        except EngineApiError as err:
            log.info("workflow task %s rejected by server: %s", task.task_token, err)
        except TransportError as err:
            log.warning("lost server while reporting workflow task: %s", err)

    # -- activity tasks ---------------------------------------------------------------

    def _activity_loop(self) -> None:
        transport_failures = 0
        while not self._stop.is_set():
            self._slots.acquire()
            if self._stop.is_set():
                self._slots.release()
                break
            try:
                task = self.client.poll_activity_task(
                    self.task_queue, self.poll_wait_ms, worker_id=self.worker_id
                )
                transport_failures = 0
            except TransportError:
                self._slots.release()
                transport_failures += 1
                self._backoff_sleep(transport_failures)
                continue
            except EngineApiError as err:
                self._slots.release()
                log.warning("activity poll rejected: %s", err)
                self._stop.wait(0.2)
                continue
            if task is None or self._stop.is_set():
                self._slots.release()
                continue
            try:
                self._pool.submit(self._run_activity, task)
            except RuntimeError:  # pool shut down mid-crash
                self._slots.release()
                return

    def _run_activity(self, task: ActivityTask) -> None:
        try:
            self._apply_fault_directives(task)
            handler = self.activities.get(task.activity_type)
            if handler is None:
                self.client.fail_activity(
                    task.task_token, f"unknown activity type: {task.activity_type}"
                )
                return
            invocation = ActivityInvocation(
                activity_type=task.activity_type,
                input=task.input,
                attempt=task.attempt,
                run_id=task.run_id,
                workflow_id=task.workflow_id,
            )
            result = handler(invocation)
            self.client.complete_activity(task.task_token, _coerce_payload(result))
        except WorkerCrashed:
            log.warning("%s crashed by fault directive", self.worker_id)
            self.crash()
        except _InjectedError as err:
            self._report_failure(task, str(err))
        except (EngineApiError, TransportError) as err:
            log.info("activity %s result dropped: %s", task.task_token, err)
        except Exception as err:  # noqa: BLE001 - activity bugs become failures
            self._report_failure(task, f"{type(err).__name__}: {err}")
        finally:
            self._slots.release()

    def _report_failure(self, task: ActivityTask, error: str) -> None:
        try:
            self.client.fail_activity(task.task_token, error)
        except (EngineApiError, TransportError) as err:
            log.info("activity failure for %s dropped: %s", task.task_token, err)

    def _apply_fault_directives(self, task: ActivityTask) -> None:
        for directive in task.fault_directives:
            kind = directive.get("kind")
            if kind == "latency":
                time.sleep(int(directive.get("delay_ms", 0)) / 1000.0)
            elif kind == "error":
                raise _InjectedError(str(directive.get("error", "injected fault")))
            elif kind == "crash":
                raise WorkerCrashed()


class _InjectedError(Exception):
    pass


def _coerce_payload(result: Any) -> str:
    if result is None:
        return ""
    if isinstance(result, str):
        return result
    return json.dumps(result)
