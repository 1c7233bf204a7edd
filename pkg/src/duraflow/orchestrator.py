"""The engine core: converts worker-submitted commands into history events,
schedules workflow/activity tasks, drives retries and durable timers, and
recovers all derived state from histories on startup.

Every mutation of a run is serialized through a per-run lock and lands as one
conditional append, so the history is the only durable state and queues,
timers and leases can always be rebuilt from it.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import threading
from typing import Any, Callable

from duraflow.faults import FaultTable
from duraflow.matching import ACTIVITY, WORKFLOW, TaskQueueService, UnknownOrExpiredLease
from duraflow.model import (
    ActivityTask,
    Command,
    CompleteWorkflow,
    EngineError,
    EventKind,
    FailWorkflow,
    HistoryCorrupt,
    HistoryEvent,
    HistoryState,
    RecordMarker,
    ScheduleActivity,
    StartTimer,
    WorkflowTask,
    now_ms,
    pending_items,
    validate_command_batch,
)
from duraflow.store import HistoryStore, TerminalHistory, UnknownRun

log = logging.getLogger(__name__)

WORKFLOW_TASK_LEASE_MS = 10_000
WORKFLOW_TASK_RETRY_MS = 1_000
DEFAULT_TICK_MS = 50


class NotRunning(EngineError):
    code = "NotRunning"


class InvalidCommandBatch(EngineError):
    code = "InvalidCommandBatch"


class Engine:
    """Single-process orchestrator over one history store."""

    def __init__(
        self,
        store: HistoryStore,
        tick_ms: int = DEFAULT_TICK_MS,
        workflow_task_lease_ms: int = WORKFLOW_TASK_LEASE_MS,
        workflow_task_retry_ms: int = WORKFLOW_TASK_RETRY_MS,
    ):
        self.store = store
        self.matching = TaskQueueService(default_lease_ms=workflow_task_lease_ms)
        self.faults = FaultTable()
        self.tick_ms = tick_ms
        self.workflow_task_lease_ms = workflow_task_lease_ms
        self.workflow_task_retry_ms = workflow_task_retry_ms

        self._mutex = threading.Lock()
        self._run_locks: dict[str, threading.Lock] = {}
        self._wt_bindings: dict[str, tuple[str, int]] = {}  # token -> (run_id, started_id)
        self._timer_heap: list[tuple[int, str, int]] = []  # (fire_at, run_id, seq)
        self._action_heap: list[tuple[int, int, Callable[[], None]]] = []
        self._action_counter = itertools.count()
        self._heap_lock = threading.Lock()
        self._stop = threading.Event()
        self._tick_thread: threading.Thread | None = None

    # -- lifecycle -------------------------------------------------------------

    def start(self) -> "Engine":
        self.recover_on_startup()
        self._tick_thread = threading.Thread(target=self._tick_loop, daemon=True, name="engine-tick")
        self._tick_thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._tick_thread is not None:
            self._tick_thread.join(timeout=2.0)
        self.matching.close()

    def _tick_loop(self) -> None:
        while not self._stop.wait(self.tick_ms / 1000.0):
            try:
                self.matching.reap_expired()
                self.timer_tick()
                self._run_due_actions()
            except Exception:  # noqa: BLE001 - the tick loop must survive anything
                log.exception("engine tick failed; retrying next tick")

    # -- internal mutation plumbing ---------------------------------------------

    def _run_lock(self, run_id: str) -> threading.Lock:
        with self._mutex:
            return self._run_locks.setdefault(run_id, threading.Lock())

    def _mutate(
        self,
        run_id: str,
        build: Callable[[HistoryState, list[HistoryEvent]], tuple[list, list] | None],
        auto_schedule: bool = True,
    ) -> bool:
        """Read-plan-append under the run lock.

        ``build`` returns (event batch, post-append actions) or None for a
        no-op. When the post-batch state still needs a workflow task, one is
        scheduled inside the same append.
        """
        with self._run_lock(run_id):
            events = self.store.get_history(run_id)
            state = HistoryState.from_events(events)
            plan = build(state, events)
            if plan is None:
                return False
            batch, post_actions = plan
            if auto_schedule:
                candidate = self._candidate_state(events, batch, state.next_event_id)
                if candidate.needs_workflow_task():
                    batch = batch + [(EventKind.WORKFLOW_TASK_SCHEDULED, {})]
                    post_actions = post_actions + [
                        lambda: self._enqueue_workflow_task(run_id, state.task_queue)
                    ]
            if batch:
                self.store.append(run_id, state.next_event_id, batch)
            for action in post_actions:
                action()
            return True

    @staticmethod
    def _candidate_state(
        events: list[HistoryEvent], batch: list, next_event_id: int
    ) -> HistoryState:
        ts = now_ms()
        provisional = [
            HistoryEvent(event_id=next_event_id + i, timestamp_ms=ts, kind=kind, attrs=attrs)
            for i, (kind, attrs) in enumerate(batch)
        ]
        return HistoryState.from_events(events + provisional)

    def _enqueue_workflow_task(self, run_id: str, task_queue: str) -> None:
        self.matching.enqueue(
            task_queue, WORKFLOW, {"run_id": run_id}, lease_ms=self.workflow_task_lease_ms
        )

    def _enqueue_activity(
        self, task_queue: str, run_id: str, scheduled_event_id: int, seq: int,
        attempt: int, lease_ms: int,
    ) -> None:
        self.matching.enqueue(
            task_queue,
            ACTIVITY,
            {
                "run_id": run_id,
                "scheduled_event_id": scheduled_event_id,
                "seq": seq,
                "attempt": attempt,
            },
            lease_ms=lease_ms,
        )

    def _schedule_action(self, due_ms: int, action: Callable[[], None]) -> None:
        with self._heap_lock:
            heapq.heappush(self._action_heap, (due_ms, next(self._action_counter), action))

    def _run_due_actions(self) -> None:
        now = now_ms()
        due: list[Callable[[], None]] = []
        with self._heap_lock:
            while self._action_heap and self._action_heap[0][0] <= now:
                due.append(heapq.heappop(self._action_heap)[2])
        for action in due:
            try:
                action()
            except (UnknownRun, TerminalHistory, HistoryCorrupt):
                pass  # run vanished or closed; nothing left to do
            except Exception:  # noqa: BLE001
                log.exception("delayed action failed")

    # -- control-plane operations -------------------------------------------------

    def start_workflow(
        self, workflow_type: str, workflow_id: str, input_payload: str, task_queue: str
    ) -> str:
        run_id = self.store.create_execution(workflow_id, workflow_type, task_queue, input_payload)
        # The started event is an unprocessed trigger, so the auto-scheduler
        # appends the first WorkflowTaskScheduled and enqueues it.
        self._mutate(run_id, lambda state, events: ([], []))
        return run_id

    def signal_workflow(self, run_id: str, signal_name: str, payload: str) -> None:
        def build(state: HistoryState, events):
            if not state.is_running:
                raise NotRunning(f"run {run_id} is {state.status.value}")
            return (
                [
                    (
                        EventKind.WORKFLOW_EXECUTION_SIGNALED,
                        {"signal_name": signal_name, "payload": payload},
                    )
                ],
                [],
            )

        self._mutate(run_id, build)

    def terminate_workflow(self, run_id: str, reason: str) -> None:
        def build(state: HistoryState, events):
            if not state.is_running:
                raise NotRunning(f"run {run_id} is {state.status.value}")
            return ([(EventKind.WORKFLOW_EXECUTION_TERMINATED, {"reason": reason})], [])

        self._mutate(run_id, build)

    def nudge_workflow(self, run_id: str) -> bool:
        """Re-enqueue the pending workflow task, if any (operator escape hatch)."""

        def build(state: HistoryState, events):
            if not state.is_running:
                raise NotRunning(f"run {run_id} is {state.status.value}")
            if state.wt_scheduled_open:
                # Re-enqueue; duplicate refs are discarded at delivery time.
                return ([], [lambda: self._enqueue_workflow_task(run_id, state.task_queue)])
            return ([], [])  # auto-scheduler adds a task when triggers are pending

        return self._mutate(run_id, build)

    def resolve_run_id(self, workflow_id_or_run_id: str) -> str:
        try:
            self.store.get_history(workflow_id_or_run_id)
            return workflow_id_or_run_id
        except (UnknownRun, HistoryCorrupt):
            run_id = self.store.latest_run(workflow_id_or_run_id)
            if run_id is None:
                raise UnknownRun(f"no execution {workflow_id_or_run_id!r}") from None
            return run_id

    # -- workflow task delivery -----------------------------------------------------

    def poll_workflow_task(
        self, queue: str, max_wait_ms: int, worker_id: str | None = None
    ) -> WorkflowTask | None:
        deadline = now_ms() + max(0, max_wait_ms)
        while True:
            remaining = deadline - now_ms()
            lease = self.matching.poll(queue, WORKFLOW, max(0, remaining))
            if lease is None:
                return None
            task = self._deliver_workflow_task(lease)
            if task is not None:
                return task
            if now_ms() >= deadline:
                return None

    def _deliver_workflow_task(self, lease) -> WorkflowTask | None:
        run_id = lease.payload["run_id"]
        captured: dict[str, Any] = {}

        def build(state: HistoryState, events):
            if not state.is_running:
                return None
            if state.wt_scheduled_open:
                batch = [(EventKind.WORKFLOW_TASK_STARTED, {})]
            elif state.wt_started_open:
                # This ref was redelivered after its lease lapsed: close the
                # dead task in-history and hand out a fresh one.
                batch = [
                    (EventKind.WORKFLOW_TASK_FAILED, {"error": "workflow task lease expired"}),
                    (EventKind.WORKFLOW_TASK_SCHEDULED, {}),
                    (EventKind.WORKFLOW_TASK_STARTED, {}),
                ]
            else:
                return None  # stale duplicate ref
            captured["started_event_id"] = state.next_event_id + len(batch) - 1
            captured["previous_started_event_id"] = state.wt_last_completed_started_id
            captured["state"] = state
            return (batch, [])

        try:
            delivered = self._mutate(run_id, build, auto_schedule=False)
        except (UnknownRun, HistoryCorrupt, TerminalHistory):
            delivered = False
        if not delivered:
            self._drop_lease(lease.task_token)
            return None

        state: HistoryState = captured["state"]
        history = self.store.get_history(run_id)
        self._wt_bindings[lease.task_token] = (run_id, captured["started_event_id"])
        return WorkflowTask(
            task_token=lease.task_token,
            run_id=run_id,
            workflow_id=state.workflow_id,
            workflow_type=state.workflow_type,
            task_queue=state.task_queue,
            history=history,
            previous_started_event_id=captured["previous_started_event_id"],
            started_event_id=captured["started_event_id"],
        )

    def _drop_lease(self, token: str) -> None:
        try:
            self.matching.complete_lease(token)
        except UnknownOrExpiredLease:
            pass

    def _claim_lease(self, token: str, expected_kind: str):
        lease = self.matching.get_lease(token)
        if lease is None or lease.task_kind != expected_kind:
            raise UnknownOrExpiredLease(f"no live {expected_kind} lease for token {token!r}")
        self.matching.complete_lease(token)
        return lease

    def complete_workflow_task(self, task_token: str, commands: list[Command]) -> None:
        lease = self._claim_lease(task_token, WORKFLOW)
        binding = self._wt_bindings.pop(task_token, None)
        run_id = lease.payload["run_id"]

        def build(state: HistoryState, events):
            if not state.is_running:
                return None  # e.g. terminated meanwhile; completion is ignored
            if (
                binding is None
                or not state.wt_started_open
                or state.wt_open_started_event_id != binding[1]
            ):
                raise UnknownOrExpiredLease(f"workflow task {task_token!r} was superseded")
            try:
                validate_command_batch(commands, state.max_command_seq)
            except ValueError as exc:
                raise InvalidCommandBatch(str(exc)) from exc

            batch: list[tuple[EventKind, dict]] = [(EventKind.WORKFLOW_TASK_COMPLETED, {})]
            post: list[Callable[[], None]] = []
            for command in commands:
                event_id = state.next_event_id + len(batch)
                if isinstance(command, ScheduleActivity):
                    batch.append(
                        (
                            EventKind.ACTIVITY_TASK_SCHEDULED,
                            {
                                "seq": command.seq,
                                "activity_type": command.activity_type,
                                "input": command.input,
                                "retry_policy": command.retry_policy.to_dict(),
                                "start_to_close_timeout_ms": command.start_to_close_timeout_ms,
                            },
                        )
                    )
                    post.append(
                        lambda c=command, eid=event_id: self._enqueue_activity(
                            state.task_queue, run_id, eid, c.seq, 1, c.start_to_close_timeout_ms
                        )
                    )
                elif isinstance(command, StartTimer):
                    batch.append(
                        (
                            EventKind.TIMER_STARTED,
                            {"seq": command.seq, "duration_ms": command.duration_ms},
                        )
                    )
                    post.append(
                        lambda c=command: self._add_timer(
                            run_id, c.seq, now_ms() + c.duration_ms
                        )
                    )
                elif isinstance(command, RecordMarker):
                    batch.append(
                        (EventKind.MARKER_RECORDED, {"seq": command.seq, "value": command.value})
                    )
                elif isinstance(command, CompleteWorkflow):
                    batch.append(
                        (EventKind.WORKFLOW_EXECUTION_COMPLETED, {"result": command.result})
                    )
                elif isinstance(command, FailWorkflow):
                    batch.append((EventKind.WORKFLOW_EXECUTION_FAILED, {"error": command.error}))
                else:
                    raise InvalidCommandBatch(f"unsupported command {command!r}")
            return (batch, post)

        try:
            self._mutate(run_id, build)
        except InvalidCommandBatch as exc:
            # The lease is already consumed, so the open task must be closed
            # in-history or the run would wedge; the retry replays the same
            # code and keeps failing until a fixed worker shows up.
            self._fail_open_workflow_task(run_id, binding, f"invalid command batch: {exc}")
            raise

    def _fail_open_workflow_task(
        self, run_id: str, binding: tuple[str, int] | None, error: str
    ) -> None:
        def build(state: HistoryState, events):
            if not state.is_running or not state.wt_started_open:
                return None
            if binding is not None and state.wt_open_started_event_id != binding[1]:
                return None
            return ([(EventKind.WORKFLOW_TASK_FAILED, {"error": error})], [])

        self._mutate(run_id, build, auto_schedule=False)
        self._schedule_action(
            now_ms() + self.workflow_task_retry_ms,
            lambda: self._ensure_workflow_task(run_id),
        )

    def fail_workflow_task(self, task_token: str, error: str) -> None:
        lease = self._claim_lease(task_token, WORKFLOW)
        binding = self._wt_bindings.pop(task_token, None)
        run_id = lease.payload["run_id"]

        def build(state: HistoryState, events):
            if not state.is_running:
                return None
            if (
                binding is None
                or not state.wt_started_open
                or state.wt_open_started_event_id != binding[1]
            ):
                raise UnknownOrExpiredLease(f"workflow task {task_token!r} was superseded")
            return ([(EventKind.WORKFLOW_TASK_FAILED, {"error": error})], [])

        # No auto-scheduling here: the retry comes after a fixed backoff, so a
        # fixed worker can pick the workflow up again without a hot loop.
        self._mutate(run_id, build, auto_schedule=False)
        self._schedule_action(
            now_ms() + self.workflow_task_retry_ms,
            lambda: self._ensure_workflow_task(run_id),
        )

    def _ensure_workflow_task(self, run_id: str) -> None:
        self._mutate(run_id, lambda state, events: ([], []))

    # -- activity task delivery ------------------------------------------------------

    def poll_activity_task(
        self, queue: str, max_wait_ms: int, worker_id: str | None = None
    ) -> ActivityTask | None:
        deadline = now_ms() + max(0, max_wait_ms)
        while True:
            remaining = deadline - now_ms()
            lease = self.matching.poll(queue, ACTIVITY, max(0, remaining))
            if lease is None:
                return None
            task = self._deliver_activity_task(lease, worker_id)
            if task is not None:
                return task
            if now_ms() >= deadline:
                return None

    def _deliver_activity_task(self, lease, worker_id: str | None) -> ActivityTask | None:
        run_id = lease.payload["run_id"]
        seq = lease.payload["seq"]
        captured: dict[str, Any] = {}

        def build(state: HistoryState, events):
            if not state.is_running:
                return None
            activity = state.activities.get(seq)
            if activity is None or activity.closed:
                return None
            attempt = activity.current_attempt
            if lease.payload.get("attempt", attempt) < attempt:
                return None  # stale ref from a superseded attempt
            if attempt in activity.started_attempts:
                # The previous delivery of this attempt never reported back:
                # its lease expired, which is the start-to-close timeout.
                return self._activity_failure_plan(
                    run_id, activity, attempt, "TimeoutError: start-to-close exceeded"
                )
            captured["activity"] = activity
            captured["attempt"] = attempt
            return ([(EventKind.ACTIVITY_TASK_STARTED, {"seq": seq, "attempt": attempt})], [])

        try:
            delivered = self._mutate(run_id, build)
        except (UnknownRun, HistoryCorrupt, TerminalHistory):
            delivered = False
        if not delivered or "activity" not in captured:
            self._drop_lease(lease.task_token)
            return None

        activity = captured["activity"]
        directives = self.faults.directives_for(activity.activity_type, worker_id)
        return ActivityTask(
            task_token=lease.task_token,
            run_id=run_id,
            workflow_id=self.store.workflow_id_for(run_id),
            scheduled_event_id=activity.scheduled_event_id,
            seq=seq,
            activity_type=activity.activity_type,
            input=activity.input,
            attempt=captured["attempt"],
            start_to_close_timeout_ms=activity.start_to_close_timeout_ms,
            fault_directives=directives,
        )

    def _activity_failure_plan(self, run_id: str, activity, attempt: int, error: str):
        """Event batch + follow-up for one failed attempt (worker-reported or
        timeout): either a backoff retry or the final failure the workflow owns."""
        policy = activity.retry_policy
        is_final = not policy.allows_retry_after(attempt)
        batch = [
            (
                EventKind.ACTIVITY_TASK_FAILED,
                {"seq": activity.seq, "attempt": attempt, "error": error, "is_final": is_final},
            )
        ]
        post: list[Callable[[], None]] = []
        if not is_final:
            delay = policy.retry_delay_ms(attempt)
            next_attempt = attempt + 1
            seq = activity.seq
            post.append(
                lambda: self._schedule_action(
                    now_ms() + delay,
                    lambda: self._retry_activity(run_id, seq, next_attempt),
                )
            )
        return (batch, post)

    def _retry_activity(self, run_id: str, seq: int, attempt: int) -> None:
        """Re-enqueue a retry attempt if the activity is still pending."""
        try:
            state = self.store.get_state(run_id)
        except (UnknownRun, HistoryCorrupt):
            return
        if not state.is_running:
            return
        activity = state.activities.get(seq)
        if activity is None or activity.closed or activity.current_attempt != attempt:
            return
        self._enqueue_activity(
            state.task_queue,
            run_id,
            activity.scheduled_event_id,
            seq,
            attempt,
            activity.start_to_close_timeout_ms,
        )

    def fail_activity(self, task_token: str, error: str) -> None:
        lease = self._claim_lease(task_token, ACTIVITY)
        run_id = lease.payload["run_id"]
        seq = lease.payload["seq"]

        def build(state: HistoryState, events):
            if not state.is_running:
                return None
            activity = state.activities.get(seq)
            if activity is None or activity.closed:
                return None
            attempt = activity.current_attempt
            if attempt not in activity.started_attempts:
                return None  # attempt was never started in-history; nothing to fail
            return self._activity_failure_plan(run_id, activity, attempt, error)

        self._mutate(run_id, build)

    def complete_activity(self, task_token: str, result: str) -> None:
        lease = self._claim_lease(task_token, ACTIVITY)
        run_id = lease.payload["run_id"]
        seq = lease.payload["seq"]

        def build(state: HistoryState, events):
            if not state.is_running:
                return None  # terminated: acknowledged but ignored
            activity = state.activities.get(seq)
            if activity is None or activity.closed:
                return None  # duplicate completion: first one won
            return (
                [(EventKind.ACTIVITY_TASK_COMPLETED, {"seq": seq, "result": result})],
                [],
            )

        self._mutate(run_id, build)

    # -- timers ------------------------------------------------------------------------

    def _add_timer(self, run_id: str, seq: int, fire_at_ms: int) -> None:
        with self._heap_lock:
            heapq.heappush(self._timer_heap, (fire_at_ms, run_id, seq))

    def timer_tick(self, now: int | None = None) -> list[tuple[str, int]]:
        """Fire all due timers; idempotent per (run, seq)."""
        now = now if now is not None else now_ms()
        due: list[tuple[int, str, int]] = []
        with self._heap_lock:
            while self._timer_heap and self._timer_heap[0][0] <= now:
                due.append(heapq.heappop(self._timer_heap))
        fired: list[tuple[str, int]] = []
        for _, run_id, seq in due:
            def build(state: HistoryState, events, seq=seq):
                if not state.is_running:
                    return None
                timer = state.timers.get(seq)
                if timer is None or timer.fired:
                    return None
                return ([(EventKind.TIMER_FIRED, {"seq": seq})], [])

            try:
                if self._mutate(run_id, build):
                    fired.append((run_id, seq))
            except (UnknownRun, HistoryCorrupt, TerminalHistory):
                continue
        return fired

    # -- recovery ---------------------------------------------------------------------

    def recover_on_startup(self) -> None:
        """Rebuild queues and timers implied by every Running history."""
        for run_id in self.store.run_ids():
            try:
                self._recover_run(run_id)
            except HistoryCorrupt as exc:
                log.warning("skipping corrupt run %s: %s", run_id, exc)

    def _recover_run(self, run_id: str) -> None:
        state = self.store.get_state(run_id)
        if not state.is_running:
            return
        for timer in state.pending_timers():
            self._add_timer(run_id, timer.seq, timer.started_ts + timer.duration_ms)
        for activity in state.pending_activities():
            self._enqueue_activity(
                state.task_queue,
                run_id,
                activity.scheduled_event_id,
                activity.seq,
                activity.current_attempt,
                activity.start_to_close_timeout_ms,
            )
        if state.wt_scheduled_open:
            self._enqueue_workflow_task(run_id, state.task_queue)
        elif state.wt_started_open:
            # The in-flight task's lease died with the previous process.
            def build(s: HistoryState, events):
                if not s.is_running or not s.wt_started_open:
                    return None
                return (
                    [(EventKind.WORKFLOW_TASK_FAILED, {"error": "server restarted"})],
                    [],
                )

            self._mutate(run_id, build)
        else:
            self._ensure_workflow_task(run_id)

    # -- read-side ---------------------------------------------------------------------

    def describe(self, run_id: str) -> dict[str, Any]:
        history = self.store.get_history(run_id)
        state = HistoryState.from_events(history)
        return {
            **state.summary(run_id).to_dict(),
            "history_length": len(history),
            "pending_items": [item.to_dict() for item in pending_items(history)],
            "workflow_task": {
                "failure_count": state.wt_failure_count,
                "last_failure": state.wt_last_failure,
                "scheduled": state.wt_scheduled_open,
                "running": state.wt_started_open,
            },
        }
