"""Domain vocabulary for the engine: events, commands, tasks, policies.

Everything here is a pure value or a pure fold over an execution's
append-only event history. No I/O, no clocks beyond the `now_ms` helper.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Any


def now_ms() -> int:
    return int(time.time() * 1000)


class EngineError(Exception):
    """Base class for all engine errors."""

    code = "EngineError"

    def to_dict(self) -> dict[str, str]:
        return {"code": self.code, "message": str(self)}


class HistoryCorrupt(EngineError):
    """The event history violates a structural invariant."""

    code = "HistoryCorrupt"


class WorkflowStatus(str, Enum):
    RUNNING = "Running"
    COMPLETED = "Completed"
    FAILED = "Failed"
    TERMINATED = "Terminated"


class EventKind(str, Enum):
    WORKFLOW_EXECUTION_STARTED = "WorkflowExecutionStarted"
    WORKFLOW_TASK_SCHEDULED = "WorkflowTaskScheduled"
    WORKFLOW_TASK_STARTED = "WorkflowTaskStarted"
    WORKFLOW_TASK_COMPLETED = "WorkflowTaskCompleted"
    WORKFLOW_TASK_FAILED = "WorkflowTaskFailed"
    ACTIVITY_TASK_SCHEDULED = "ActivityTaskScheduled"
    ACTIVITY_TASK_STARTED = "ActivityTaskStarted"
    ACTIVITY_TASK_COMPLETED = "ActivityTaskCompleted"
    ACTIVITY_TASK_FAILED = "ActivityTaskFailed"
    TIMER_STARTED = "TimerStarted"
    TIMER_FIRED = "TimerFired"
    WORKFLOW_EXECUTION_SIGNALED = "WorkflowExecutionSignaled"
    MARKER_RECORDED = "MarkerRecorded"
    WORKFLOW_EXECUTION_COMPLETED = "WorkflowExecutionCompleted"
    WORKFLOW_EXECUTION_FAILED = "WorkflowExecutionFailed"
    WORKFLOW_EXECUTION_TERMINATED = "WorkflowExecutionTerminated"


TERMINAL_EVENT_KINDS = frozenset(
    {
        EventKind.WORKFLOW_EXECUTION_COMPLETED,
        EventKind.WORKFLOW_EXECUTION_FAILED,
        EventKind.WORKFLOW_EXECUTION_TERMINATED,
    }
)

# Command events are the durable record of workflow decisions; replay matches
# emitted commands against them in order.
COMMAND_EVENT_KINDS = frozenset(
    {
        EventKind.ACTIVITY_TASK_SCHEDULED,
        EventKind.TIMER_STARTED,
        EventKind.MARKER_RECORDED,
    }
)

_TERMINAL_STATUS_BY_KIND = {
    EventKind.WORKFLOW_EXECUTION_COMPLETED: WorkflowStatus.COMPLETED,
    EventKind.WORKFLOW_EXECUTION_FAILED: WorkflowStatus.FAILED,
    EventKind.WORKFLOW_EXECUTION_TERMINATED: WorkflowStatus.TERMINATED,
}


@dataclass(frozen=True)
class HistoryEvent:
    """One immutable entry in an execution's append-only event log."""

    event_id: int
    timestamp_ms: int
    kind: EventKind
    attrs: dict[str, Any] = field(default_factory=dict)

    def to_record(self) -> dict[str, Any]:
        return {
            "event_id": self.event_id,
            "timestamp_ms": self.timestamp_ms,
            "kind": self.kind.value,
            "attrs": self.attrs,
        }

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> HistoryEvent:
        try:
            return cls(
                event_id=int(record["event_id"]),
                timestamp_ms=int(record["timestamp_ms"]),
                kind=EventKind(record["kind"]),
                attrs=dict(record.get("attrs") or {}),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise HistoryCorrupt(f"malformed event record: {exc}") from exc


@dataclass(frozen=True)
class RetryPolicy:
    """Exponential-backoff parameters for activity re-execution.

    ``max_attempts == 0`` means unlimited attempts.
    """

    initial_interval_ms: int = 1_000
    backoff_coefficient: float = 2.0
    max_interval_ms: int = 60_000
    max_attempts: int = 5

    def __post_init__(self) -> None:
        if self.initial_interval_ms <= 0 or self.max_interval_ms <= 0:
            raise ValueError("retry intervals must be positive")
        if self.initial_interval_ms > self.max_interval_ms:
            raise ValueError("initial_interval_ms must not exceed max_interval_ms")
        if self.backoff_coefficient < 1.0:
            raise ValueError("backoff_coefficient must be >= 1.0")
        if self.max_attempts < 0:
            raise ValueError("max_attempts must be >= 0 (0 = unlimited)")

    def retry_delay_ms(self, failed_attempt: int) -> int:
        """Delay before the attempt following ``failed_attempt`` (1-based)."""
        delay = self.initial_interval_ms * self.backoff_coefficient ** (failed_attempt - 1)
        return int(min(delay, self.max_interval_ms))

    def allows_retry_after(self, failed_attempt: int) -> bool:
        return self.max_attempts == 0 or failed_attempt < self.max_attempts

    def to_dict(self) -> dict[str, Any]:
        return {
            "initial_interval_ms": self.initial_interval_ms,
            "backoff_coefficient": self.backoff_coefficient,
            "max_interval_ms": self.max_interval_ms,
            "max_attempts": self.max_attempts,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> RetryPolicy:
        if not data:
            return DEFAULT_RETRY_POLICY
        return cls(
            initial_interval_ms=int(data.get("initial_interval_ms", 1_000)),
            backoff_coefficient=float(data.get("backoff_coefficient", 2.0)),
            max_interval_ms=int(data.get("max_interval_ms", 60_000)),
            max_attempts=int(data.get("max_attempts", 5)),
        )


DEFAULT_RETRY_POLICY = RetryPolicy()

DEFAULT_START_TO_CLOSE_TIMEOUT_MS = 10_000


# ---------------------------------------------------------------------------
# Commands: a workflow's declared intent, produced by replay, converted to
# events by the orchestrator.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScheduleActivity:
    seq: int
    activity_type: str
    input: str
    retry_policy: RetryPolicy = DEFAULT_RETRY_POLICY
    start_to_close_timeout_ms: int = DEFAULT_START_TO_CLOSE_TIMEOUT_MS


@dataclass(frozen=True)
class StartTimer:
    seq: int
    duration_ms: int


@dataclass(frozen=True)
class RecordMarker:
    seq: int
    value: Any


@dataclass(frozen=True)
class CompleteWorkflow:
    result: str


@dataclass(frozen=True)
class FailWorkflow:
    error: str


Command = ScheduleActivity | StartTimer | RecordMarker | CompleteWorkflow | FailWorkflow

TERMINAL_COMMANDS = (CompleteWorkflow, FailWorkflow)


def command_to_dict(command: Command) -> dict[str, Any]:
    if isinstance(command, ScheduleActivity):
        return {
            "kind": "ScheduleActivity",
            "seq": command.seq,
            "activity_type": command.activity_type,
            "input": command.input,
            "retry_policy": command.retry_policy.to_dict(),
            "start_to_close_timeout_ms": command.start_to_close_timeout_ms,
        }
    if isinstance(command, StartTimer):
        return {"kind": "StartTimer", "seq": command.seq, "duration_ms": command.duration_ms}
    if isinstance(command, RecordMarker):
        return {"kind": "RecordMarker", "seq": command.seq, "value": command.value}
    if isinstance(command, CompleteWorkflow):
        return {"kind": "CompleteWorkflow", "result": command.result}
    if isinstance(command, FailWorkflow):
        return {"kind": "FailWorkflow", "error": command.error}
    raise TypeError(f"not a command: {command!r}")


def command_from_dict(data: dict[str, Any]) -> Command:
    kind = data.get("kind")
    if kind == "ScheduleActivity":
        return ScheduleActivity(
            seq=int(data["seq"]),
            activity_type=str(data["activity_type"]),
            input=str(data.get("input", "")),
            retry_policy=RetryPolicy.from_dict(data.get("retry_policy")),
            start_to_close_timeout_ms=int(
                data.get("start_to_close_timeout_ms", DEFAULT_START_TO_CLOSE_TIMEOUT_MS)
            ),
        )
    if kind == "StartTimer":
        return StartTimer(seq=int(data["seq"]), duration_ms=int(data["duration_ms"]))
    if kind == "RecordMarker":
        return RecordMarker(seq=int(data["seq"]), value=data.get("value"))
    if kind == "CompleteWorkflow":
        return CompleteWorkflow(result=str(data.get("result", "")))
    if kind == "FailWorkflow":
        return FailWorkflow(error=str(data.get("error", "")))
    raise ValueError(f"unknown command kind: {kind!r}")


# ---------------------------------------------------------------------------
# Tasks handed to workers.
# ---------------------------------------------------------------------------


@dataclass
class WorkflowTask:
    """A unit of workflow progress: full history for replay plus a lease token."""

    task_token: str
    run_id: str
    workflow_id: str
    workflow_type: str
    task_queue: str
    history: list[HistoryEvent]
    previous_started_event_id: int
    started_event_id: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_token": self.task_token,
            "run_id": self.run_id,
            "workflow_id": self.workflow_id,
            "workflow_type": self.workflow_type,
            "task_queue": self.task_queue,
            "history": [e.to_record() for e in self.history],
            "previous_started_event_id": self.previous_started_event_id,
            "started_event_id": self.started_event_id,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> WorkflowTask:
        return cls(
            task_token=data["task_token"],
            run_id=data["run_id"],
            workflow_id=data["workflow_id"],
            workflow_type=data["workflow_type"],
            task_queue=data["task_queue"],
            history=[HistoryEvent.from_record(r) for r in data["history"]],
            previous_started_event_id=int(data["previous_started_event_id"]),
            started_event_id=int(data["started_event_id"]),
        )


@dataclass
class ActivityTask:
    """One activity invocation, delivered at-least-once under a lease."""

    task_token: str
    run_id: str
    workflow_id: str
    scheduled_event_id: int
    seq: int
    activity_type: str
    input: str
    attempt: int
    start_to_close_timeout_ms: int
    fault_directives: list[dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "task_token": self.task_token,
            "run_id": self.run_id,
            "workflow_id": self.workflow_id,
            "scheduled_event_id": self.scheduled_event_id,
            "seq": self.seq,
            "activity_type": self.activity_type,
            "input": self.input,
            "attempt": self.attempt,
            "start_to_close_timeout_ms": self.start_to_close_timeout_ms,
            "fault_directives": self.fault_directives,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ActivityTask:
        return cls(
            task_token=data["task_token"],
            run_id=data["run_id"],
            workflow_id=data["workflow_id"],
            scheduled_event_id=int(data["scheduled_event_id"]),
            seq=int(data["seq"]),
            activity_type=data["activity_type"],
            input=data.get("input", ""),
            attempt=int(data["attempt"]),
            start_to_close_timeout_ms=int(data["start_to_close_timeout_ms"]),
            fault_directives=list(data.get("fault_directives") or []),
        )


@dataclass(frozen=True)
class ExecutionSummary:
    workflow_id: str
    run_id: str
    workflow_type: str
    task_queue: str
    status: WorkflowStatus
    start_time_ms: int
    close_time_ms: int | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "workflow_id": self.workflow_id,
            "run_id": self.run_id,
            "workflow_type": self.workflow_type,
            "task_queue": self.task_queue,
            "status": self.status.value,
            "start_time_ms": self.start_time_ms,
            "close_time_ms": self.close_time_ms,
        }


# ---------------------------------------------------------------------------
# History folds. HistoryState is the one strict fold; validation happens as a
# side effect of folding, so a state can only be built from a legal history.
# ---------------------------------------------------------------------------


@dataclass
class ActivityFailureRecord:
    attempt: int
    error: str
    is_final: bool
    timestamp_ms: int
    event_id: int


@dataclass
class ActivityState:
    seq: int
    scheduled_event_id: int
    scheduled_ts: int
    activity_type: str
    input: str
    retry_policy: RetryPolicy
    start_to_close_timeout_ms: int
    started_attempts: list[int] = field(default_factory=list)
    last_started_ts: int | None = None
    failures: list[ActivityFailureRecord] = field(default_factory=list)
    completed: bool = False
    result: str | None = None
    completed_ts: int | None = None

    @property
    def nonfinal_failure_count(self) -> int:
        return sum(1 for f in self.failures if not f.is_final)

    @property
    def finally_failed(self) -> bool:
        return any(f.is_final for f in self.failures)

    @property
    def closed(self) -> bool:
        return self.completed or self.finally_failed

    @property
    def current_attempt(self) -> int:
        """The attempt now pending or in flight (1-based)."""
        return self.nonfinal_failure_count + 1

    @property
    def last_failure(self) -> ActivityFailureRecord | None:
        return self.failures[-1] if self.failures else None


@dataclass
class TimerState:
    seq: int
    started_event_id: int
    started_ts: int
    duration_ms: int
    fired: bool = False


@dataclass
class SignalRecord:
    event_id: int
    timestamp_ms: int
    signal_name: str
    payload: str


# Events that require a workflow task so the workflow code can react.
_TRIGGER_KINDS = frozenset(
    {
        EventKind.WORKFLOW_EXECUTION_STARTED,
        EventKind.WORKFLOW_EXECUTION_SIGNALED,
        EventKind.ACTIVITY_TASK_COMPLETED,
        EventKind.TIMER_FIRED,
    }
)


@dataclass
class HistoryState:
    """Strict fold of a history: current status plus all per-item bookkeeping.

    Raises HistoryCorrupt while folding if the history breaks an invariant,
    so holding a HistoryState implies the history was well formed.
    """

    workflow_id: str = ""
    workflow_type: str = ""
    task_queue: str = ""
    input: str = ""
    status: WorkflowStatus = WorkflowStatus.RUNNING
    next_event_id: int = 1
    start_time_ms: int = 0
    close_time_ms: int | None = None
    activities: dict[int, ActivityState] = field(default_factory=dict)
    timers: dict[int, TimerState] = field(default_factory=dict)
    signals: list[SignalRecord] = field(default_factory=list)
    markers: dict[int, Any] = field(default_factory=dict)
    max_command_seq: int = 0
    # Workflow-task bookkeeping.
    wt_scheduled_open: bool = False
    wt_started_open: bool = False
    wt_open_started_event_id: int = 0
    wt_processed_boundary: int = 0
    wt_last_completed_started_id: int = 0
    wt_failure_count: int = 0
    wt_last_failure: str | None = None
    last_trigger_event_id: int = 0

    @classmethod
    def from_events(cls, events: list[HistoryEvent]) -> HistoryState:
        state = cls()
        for event in events:
            state.apply(event)
        return state

    def apply(self, event: HistoryEvent) -> None:
        if event.event_id != self.next_event_id:
            raise HistoryCorrupt(
                f"event ids must be dense: expected {self.next_event_id}, got {event.event_id}"
            )
        if self.status is not WorkflowStatus.RUNNING:
            raise HistoryCorrupt("events appended after a terminal event")
        if self.next_event_id == 1 and event.kind is not EventKind.WORKFLOW_EXECUTION_STARTED:
            raise HistoryCorrupt(f"event 1 must be WorkflowExecutionStarted, got {event.kind.value}")

        handler = getattr(self, "_apply_" + event.kind.name.lower())
        handler(event)

        if event.kind in _TRIGGER_KINDS or (
            event.kind is EventKind.ACTIVITY_TASK_FAILED and event.attrs.get("is_final")
        ):
            self.last_trigger_event_id = event.event_id
        self.next_event_id += 1

    # -- event handlers -----------------------------------------------------

    def _apply_workflow_execution_started(self, event: HistoryEvent) -> None:
        if self.next_event_id != 1:
            raise HistoryCorrupt("WorkflowExecutionStarted only legal as event 1")
        attrs = event.attrs
        for field_name in ("workflow_type", "input", "task_queue"):
            if field_name not in attrs:
                raise HistoryCorrupt(f"started event missing {field_name}")
        self.workflow_type = attrs["workflow_type"]
        self.input = attrs["input"]
        self.task_queue = attrs["task_queue"]
        self.workflow_id = attrs.get("workflow_id", "")
        self.start_time_ms = event.timestamp_ms

    def _apply_workflow_task_scheduled(self, event: HistoryEvent) -> None:
        if self.wt_scheduled_open:
            raise HistoryCorrupt("workflow task scheduled while another is scheduled")
        if self.wt_started_open:
            raise HistoryCorrupt("workflow task scheduled while another is running")
        self.wt_scheduled_open = True

    def _apply_workflow_task_started(self, event: HistoryEvent) -> None:
        if not self.wt_scheduled_open:
            raise HistoryCorrupt("workflow task started without a scheduled task")
        self.wt_scheduled_open = False
        self.wt_started_open = True
        self.wt_open_started_event_id = event.event_id

    def _apply_workflow_task_completed(self, event: HistoryEvent) -> None:
        if not self.wt_started_open:
            raise HistoryCorrupt("workflow task completed without a started task")
        self.wt_started_open = False
        self.wt_processed_boundary = self.wt_open_started_event_id
        self.wt_last_completed_started_id = self.wt_open_started_event_id

    def _apply_workflow_task_failed(self, event: HistoryEvent) -> None:
        if not self.wt_started_open:
            raise HistoryCorrupt("workflow task failed without a started task")
        self.wt_started_open = False
        self.wt_failure_count += 1
        self.wt_last_failure = str(event.attrs.get("error", ""))

    def _next_command_seq(self, event: HistoryEvent) -> int:
        seq = event.attrs.get("seq")
        if not isinstance(seq, int) or seq != self.max_command_seq + 1:
            raise HistoryCorrupt(
                f"command seq must be dense: expected {self.max_command_seq + 1}, got {seq!r}"
            )
        return seq

    def _apply_activity_task_scheduled(self, event: HistoryEvent) -> None:
        seq = self._next_command_seq(event)
        attrs = event.attrs
        self.activities[seq] = ActivityState(
            seq=seq,
            scheduled_event_id=event.event_id,
            scheduled_ts=event.timestamp_ms,
            activity_type=str(attrs.get("activity_type", "")),
            input=str(attrs.get("input", "")),
            retry_policy=RetryPolicy.from_dict(attrs.get("retry_policy")),
            start_to_close_timeout_ms=int(
                attrs.get("start_to_close_timeout_ms", DEFAULT_START_TO_CLOSE_TIMEOUT_MS)
            ),
        )
        self.max_command_seq = seq

    def _activity_for(self, event: HistoryEvent) -> ActivityState:
        seq = event.attrs.get("seq")
        activity = self.activities.get(seq)
        if activity is None:
            raise HistoryCorrupt(f"{event.kind.value} references unknown activity seq {seq!r}")
        if activity.closed:
            raise HistoryCorrupt(f"activity seq {seq} already closed")
        return activity

    def _apply_activity_task_started(self, event: HistoryEvent) -> None:
        activity = self._activity_for(event)
        attempt = int(event.attrs.get("attempt", 0))
        if attempt != activity.current_attempt:
            raise HistoryCorrupt(
                f"activity seq {activity.seq} started attempt {attempt}, "
                f"expected {activity.current_attempt}"
            )
        if attempt in activity.started_attempts:
            raise HistoryCorrupt(f"activity seq {activity.seq} attempt {attempt} started twice")
        activity.started_attempts.append(attempt)
        activity.last_started_ts = event.timestamp_ms

    def _apply_activity_task_completed(self, event: HistoryEvent) -> None:
        activity = self._activity_for(event)
        if not activity.started_attempts:
            raise HistoryCorrupt(f"activity seq {activity.seq} completed without starting")
        activity.completed = True
        activity.result = str(event.attrs.get("result", ""))
        activity.completed_ts = event.timestamp_ms

    def _apply_activity_task_failed(self, event: HistoryEvent) -> None:
        activity = self._activity_for(event)
        attempt = int(event.attrs.get("attempt", 0))
        if attempt != activity.current_attempt or attempt not in activity.started_attempts:
            raise HistoryCorrupt(
                f"activity seq {activity.seq} failure for attempt {attempt} out of order"
            )
        activity.failures.append(
            ActivityFailureRecord(
                attempt=attempt,
                error=str(event.attrs.get("error", "")),
                is_final=bool(event.attrs.get("is_final", False)),
                timestamp_ms=event.timestamp_ms,
                event_id=event.event_id,
            )
        )

    def _apply_timer_started(self, event: HistoryEvent) -> None:
        seq = self._next_command_seq(event)
        duration = int(event.attrs.get("duration_ms", 0))
        if duration <= 0:
            raise HistoryCorrupt(f"timer seq {seq} has non-positive duration")
        self.timers[seq] = TimerState(
            seq=seq,
            started_event_id=event.event_id,
            started_ts=event.timestamp_ms,
            duration_ms=duration,
        )
        self.max_command_seq = seq

    def _apply_timer_fired(self, event: HistoryEvent) -> None:
        seq = event.attrs.get("seq")
        timer = self.timers.get(seq)
        if timer is None:
            raise HistoryCorrupt(f"TimerFired references unknown timer seq {seq!r}")
        if timer.fired:
            raise HistoryCorrupt(f"timer seq {seq} fired twice")
        timer.fired = True

    def _apply_workflow_execution_signaled(self, event: HistoryEvent) -> None:
        self.signals.append(
            SignalRecord(
                event_id=event.event_id,
                timestamp_ms=event.timestamp_ms,
                signal_name=str(event.attrs.get("signal_name", "")),
                payload=str(event.attrs.get("payload", "")),
            )
        )

    def _apply_marker_recorded(self, event: HistoryEvent) -> None:
        seq = self._next_command_seq(event)
        self.markers[seq] = event.attrs.get("value")
        self.max_command_seq = seq

    def _close(self, event: HistoryEvent) -> None:
        self.status = _TERMINAL_STATUS_BY_KIND[event.kind]
        self.close_time_ms = event.timestamp_ms

    def _apply_workflow_execution_completed(self, event: HistoryEvent) -> None:
        self._close(event)

    def _apply_workflow_execution_failed(self, event: HistoryEvent) -> None:
        self._close(event)

    def _apply_workflow_execution_terminated(self, event: HistoryEvent) -> None:
        self._close(event)

    # -- derived views -------------------------------------------------------

    @property
    def is_running(self) -> bool:
        return self.status is WorkflowStatus.RUNNING

    def pending_activities(self) -> list[ActivityState]:
        return [a for a in self.activities.values() if not a.closed]

    def pending_timers(self) -> list[TimerState]:
        return [t for t in self.timers.values() if not t.fired]

    def has_unprocessed_triggers(self) -> bool:
        return self.last_trigger_event_id > self.wt_processed_boundary

    def needs_workflow_task(self) -> bool:
        return (
            self.is_running
            and not self.wt_scheduled_open
            and not self.wt_started_open
            and self.has_unprocessed_triggers()
        )

    def summary(self, run_id: str) -> ExecutionSummary:
        return ExecutionSummary(
            workflow_id=self.workflow_id,
            run_id=run_id,
            workflow_type=self.workflow_type,
            task_queue=self.task_queue,
            status=self.status,
            start_time_ms=self.start_time_ms,
            close_time_ms=self.close_time_ms,
        )


@dataclass(frozen=True)
class PendingItem:
    seq: int
    kind: str  # "activity" | "timer"
    scheduled_event_id: int
    attempt: int
    label: str
    since_ts: int
    last_error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "kind": self.kind,
            "scheduled_event_id": self.scheduled_event_id,
            "attempt": self.attempt,
            "label": self.label,
            "since_ts": self.since_ts,
            "last_error": self.last_error,
        }


def validate_history(events: list[HistoryEvent]) -> HistoryState:
    """Check all history invariants; returns the resulting fold."""
    if not events:
        raise HistoryCorrupt("history must contain at least the started event")
    return HistoryState.from_events(events)


def fold_status(events: list[HistoryEvent]) -> WorkflowStatus:
    """Current execution status: Running unless a terminal event exists."""
    return validate_history(events).status


def pending_items(events: list[HistoryEvent]) -> list[PendingItem]:
    """Every scheduled activity without a completion/final failure and every
    timer that has not fired, in schedule order."""
    state = validate_history(events)
    items: list[PendingItem] = []
    for activity in state.activities.values():
        if activity.closed:
            continue
        last = activity.last_failure
        items.append(
            PendingItem(
                seq=activity.seq,
                kind="activity",
                scheduled_event_id=activity.scheduled_event_id,
                attempt=activity.current_attempt,
                label=activity.activity_type,
                since_ts=activity.scheduled_ts,
                last_error=last.error if last else None,
            )
        )
    for timer in state.timers.values():
        if timer.fired:
            continue
        items.append(
            PendingItem(
                seq=timer.seq,
                kind="timer",
                scheduled_event_id=timer.started_event_id,
                attempt=1,
                label=f"timer({timer.duration_ms}ms)",
                since_ts=timer.started_ts,
            )
        )
    items.sort(key=lambda item: item.seq)
    return items


def validate_command_batch(commands: list[Command], max_recorded_seq: int) -> None:
    """Command invariants: dense seqs continuing the history, terminal last."""
    expected_seq = max_recorded_seq + 1
    for index, command in enumerate(commands):
        if isinstance(command, TERMINAL_COMMANDS):
            if index != len(commands) - 1:
                raise ValueError("terminal command must be last in the batch")
            continue
        if command.seq != expected_seq:
            raise ValueError(
                f"command seq must be dense: expected {expected_seq}, got {command.seq}"
            )
        expected_seq += 1
        if isinstance(command, StartTimer) and command.duration_ms <= 0:
            raise ValueError("timer duration must be positive")
        if isinstance(command, ScheduleActivity) and not command.activity_type:
            raise ValueError("activity_type must be non-empty")
