"""Deterministic re-execution of workflow definitions against history.

A workflow body is an ``async def body(ctx, input)``. Every await suspends on
an engine-controlled future; the replay driver resolves futures strictly in
recorded-event order and only advances the body while a workflow task is
active, so two replays of the same (definition, history) pair are
bit-identical. Commands the body emits are matched, in order, against the
command events already in history; the first mismatch is a non-determinism
error, and anything past the end of history becomes the new command batch.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Awaitable, Callable, Coroutine, Generator

from duraflow.model import (
    DEFAULT_RETRY_POLICY,
    DEFAULT_START_TO_CLOSE_TIMEOUT_MS,
    Command,
    CompleteWorkflow,
    EngineError,
    EventKind,
    FailWorkflow,
    HistoryEvent,
    RecordMarker,
    RetryPolicy,
    ScheduleActivity,
    StartTimer,
    command_to_dict,
    validate_history,
)


class ReplayError(EngineError):
    code = "ReplayError"


class NonDeterminismError(ReplayError):
    """The body's commands diverged from the recorded history."""

    code = "NonDeterminismError"

    def __init__(self, seq: int, expected: str, actual: str):
        super().__init__(
            f"workflow code diverged from history at seq {seq}: "
            f"expected {expected}, got {actual}"
        )
        self.seq = seq
        self.expected = expected
        self.actual = actual


class WorkflowTaskError(ReplayError):
    """The body raised: a workflow bug, surfaced via task failure and retried."""

    code = "WorkflowTaskError"


class ContextMisuse(ReplayError):
    code = "ContextMisuse"


class ActivityFailure(Exception):
    """Raised into the body when an activity exhausts its retries."""

    def __init__(self, error: str):
        super().__init__(error)
        self.error = error


class WorkflowFailure(Exception):
    """Raised by a body to fail the whole workflow with a business error."""

    def __init__(self, error: str):
        super().__init__(error)
        self.error = error


@dataclass(frozen=True)
class WorkflowDefinition:
    workflow_type: str
    body: Callable[["WorkflowContext", str], Coroutine[Any, Any, Any]]


class WorkflowFuture:
    """Single-assignment future awaitable from workflow code only."""

    __slots__ = ("_resolved", "_value", "_error", "_order", "label")

    def __init__(self, label: str = ""):
        self._resolved = False
        self._value: Any = None
        self._error: BaseException | None = None
        self._order = -1
        self.label = label

    def done(self) -> bool:
        return self._resolved

    def result(self) -> Any:
        if not self._resolved:
            raise ContextMisuse(f"future {self.label or '?'} not resolved yet")
        if self._error is not None:
            raise self._error
        return self._value

    def _resolve(self, value: Any, order: int) -> None:
        self._resolved = True
        self._value = value
        self._order = order

    def _reject(self, error: BaseException, order: int) -> None:
        self._resolved = True
        self._error = error
        self._order = order

    def __await__(self) -> Generator["_Blocker", None, Any]:
        while not self._resolved:
            yield _Blocker((self,))
        if self._error is not None:
            raise self._error
        return self._value


class _Blocker:
    """What workflow awaits yield to the driver: a set of candidate futures."""

    __slots__ = ("futures",)

    def __init__(self, futures: tuple[WorkflowFuture, ...]):
        self.futures = futures

    def ready(self) -> bool:
        return any(f._resolved for f in self.futures)


class _WaitAny:
    __slots__ = ("futures",)

    def __init__(self, futures: tuple[WorkflowFuture, ...]):
        self.futures = futures

    def __await__(self) -> Generator[_Blocker, None, WorkflowFuture]:
        while not any(f._resolved for f in self.futures):
            yield _Blocker(self.futures)
        winner = min(
            (f for f in self.futures if f._resolved),
            key=lambda f: f._order,
        )
        return winner


def _describe_command(command: Command) -> str:
    if isinstance(command, ScheduleActivity):
        return f"ScheduleActivity[seq={command.seq}, type={command.activity_type}]"
    if isinstance(command, StartTimer):
        return f"StartTimer[seq={command.seq}, duration_ms={command.duration_ms}]"
    if isinstance(command, RecordMarker):
        return f"RecordMarker[seq={command.seq}]"
    return type(command).__name__


def _describe_event(event: HistoryEvent) -> str:
    attrs = event.attrs
    if event.kind is EventKind.ACTIVITY_TASK_SCHEDULED:
        return f"ScheduleActivity[seq={attrs.get('seq')}, type={attrs.get('activity_type')}]"
    if event.kind is EventKind.TIMER_STARTED:
        return f"StartTimer[seq={attrs.get('seq')}, duration_ms={attrs.get('duration_ms')}]"
    if event.kind is EventKind.MARKER_RECORDED:
        return f"RecordMarker[seq={attrs.get('seq')}]"
    return event.kind.value


class WorkflowContext:
    """Capability handed to workflow bodies.

    All nondeterminism must flow through activities or side_effect; workflow
    code must not touch clocks, randomness, or I/O directly.
    """

    def __init__(self, input_payload: str, recorded_commands: deque[HistoryEvent]):
        self._input = input_payload
        self._recorded = recorded_commands
        self._next_seq = 1
        self._new_commands: list[Command] = []
        self._activity_futures: dict[int, WorkflowFuture] = {}
        self._timer_futures: dict[int, WorkflowFuture] = {}
        self._signal_buffers: dict[str, deque[str]] = {}
        self._signal_waiters: dict[str, deque[WorkflowFuture]] = {}
        self._wt_time_ms = 0
        self._resolution_counter = 0
        self._active = False
        self._poisoned: NonDeterminismError | None = None

    # -- driver plumbing -----------------------------------------------------

    def _check_active(self) -> None:
        if not self._active:
            raise ContextMisuse("workflow context used outside of replay")

    def _next_order(self) -> int:
        self._resolution_counter += 1
        return self._resolution_counter

    def _diverge(self, seq: int, expected: str, actual: str) -> NonDeterminismError:
        # Poison the context so a body that swallows the exception still
        # cannot mask the divergence.
        error = NonDeterminismError(seq=seq, expected=expected, actual=actual)
        self._poisoned = error
        return error

    def _emit(self, command: Command) -> HistoryEvent | None:
        """Match a command against the recorded history or collect it as new."""
        if self._recorded:
            recorded = self._recorded.popleft()
            if not _matches(command, recorded):
                raise self._diverge(
                    seq=getattr(command, "seq", 0),
                    expected=_describe_event(recorded),
                    actual=_describe_command(command),
                )
            return recorded
        self._new_commands.append(command)
        return None

    # -- workflow-facing API ---------------------------------------------------

    def start_activity(
        self,
        activity_type: str,
        input: str = "",
        retry_policy: RetryPolicy | None = None,
        start_to_close_timeout_ms: int | None = None,
    ) -> WorkflowFuture:
        """Schedule an activity and return its future without awaiting it."""
        self._check_active()
        seq = self._next_seq
        self._next_seq += 1
        command = ScheduleActivity(
            seq=seq,
            activity_type=activity_type,
            input=input,
            retry_policy=retry_policy or DEFAULT_RETRY_POLICY,
            start_to_close_timeout_ms=start_to_close_timeout_ms
            or DEFAULT_START_TO_CLOSE_TIMEOUT_MS,
        )
        self._emit(command)
        future = WorkflowFuture(label=f"activity:{activity_type}@{seq}")
        self._activity_futures[seq] = future
        return future

    async def execute_activity(
        self,
        activity_type: str,
        input: str = "",
        retry_policy: RetryPolicy | None = None,
        start_to_close_timeout_ms: int | None = None,
    ) -> str:
        return await self.start_activity(
            activity_type, input, retry_policy, start_to_close_timeout_ms
        )

    def start_timer(self, duration_ms: int) -> WorkflowFuture:
        self._check_active()
        seq = self._next_seq
        self._next_seq += 1
        self._emit(StartTimer(seq=seq, duration_ms=duration_ms))
        future = WorkflowFuture(label=f"timer@{seq}")
        self._timer_futures[seq] = future
        return future

    async def sleep(self, duration_ms: int) -> None:
        await self.start_timer(duration_ms)

    def wait_signal(self, signal_name: str) -> WorkflowFuture:
        """Future for the next delivery of the named signal (FIFO per name)."""
        self._check_active()
        future = WorkflowFuture(label=f"signal:{signal_name}")
        buffered = self._signal_buffers.get(signal_name)
        if buffered:
            future._resolve(buffered.popleft(), self._next_order())
        else:
            self._signal_waiters.setdefault(signal_name, deque()).append(future)
        return future

    async def await_signal(self, signal_name: str) -> str:
        return await self.wait_signal(signal_name)

    def side_effect(self, producer: Callable[[], Any]) -> Any:
        """Run a nondeterministic producer once, record its value, and return
        the recorded value on every later replay."""
        self._check_active()
        seq = self._next_seq
        self._next_seq += 1
        if self._recorded:
            recorded = self._recorded.popleft()
            probe = RecordMarker(seq=seq, value=None)
            if not _matches(probe, recorded):
                raise self._diverge(
                    seq=seq,
                    expected=_describe_event(recorded),
                    actual=_describe_command(probe),
                )
            return recorded.attrs.get("value")
        value = producer()
        try:
            json.dumps(value)
        except (TypeError, ValueError) as exc:
            raise ContextMisuse(f"side_effect value must be JSON-serializable: {exc}") from exc
        self._new_commands.append(RecordMarker(seq=seq, value=value))
        return value

    def workflow_time(self) -> int:
        """Timestamp of the current workflow task's started event, in ms.

        Stable across replays; use instead of wall clocks inside bodies.
        """
        self._check_active()
        return self._wt_time_ms

    def wait_any(self, *futures: WorkflowFuture) -> Awaitable[WorkflowFuture]:
        """Await until any future resolves; returns the first one that did."""
        if not futures:
            raise ValueError("wait_any requires at least one future")
        return _WaitAny(tuple(futures))

    # -- event application (driver side) ---------------------------------------

    def _on_activity_completed(self, seq: int, result: str) -> None:
        future = self._activity_futures.get(seq)
        if future is not None and not future.done():
            future._resolve(result, self._next_order())

    def _on_activity_failed(self, seq: int, error: str) -> None:
        future = self._activity_futures.get(seq)
        if future is not None and not future.done():
            future._reject(ActivityFailure(error), self._next_order())

    def _on_timer_fired(self, seq: int) -> None:
        future = self._timer_futures.get(seq)
        if future is not None and not future.done():
            future._resolve(None, self._next_order())

    def _on_signal(self, signal_name: str, payload: str) -> None:
        waiters = self._signal_waiters.get(signal_name)
        if waiters:
            waiters.popleft()._resolve(payload, self._next_order())
        else:
            self._signal_buffers.setdefault(signal_name, deque()).append(payload)


def _matches(command: Command, event: HistoryEvent) -> bool:
    """Replay matching rule: seq and kind must agree, plus activity_type for
    activities and duration for timers. Input payloads are not compared."""
    attrs = event.attrs
    if isinstance(command, ScheduleActivity):
        return (
            event.kind is EventKind.ACTIVITY_TASK_SCHEDULED
            and attrs.get("seq") == command.seq
            and attrs.get("activity_type") == command.activity_type
        )
    if isinstance(command, StartTimer):
        return (
            event.kind is EventKind.TIMER_STARTED
            and attrs.get("seq") == command.seq
            and attrs.get("duration_ms") == command.duration_ms
        )
    if isinstance(command, RecordMarker):
        return event.kind is EventKind.MARKER_RECORDED and attrs.get("seq") == command.seq
    return False


@dataclass
class ReplayResult:
    commands: list[Command] = field(default_factory=list)

    def to_dicts(self) -> list[dict[str, Any]]:
        return [command_to_dict(c) for c in self.commands]


def replay(defn: WorkflowDefinition, history: list[HistoryEvent]) -> ReplayResult:
    """Re-execute a workflow body against its history.

    Returns the batch of new commands the body produced past the end of
    history (with a terminal command appended if the body finished). Raises
    NonDeterminismError on divergence and WorkflowTaskError when the body
    raises anything that is not an activity/workflow failure.
    """
    state = validate_history(history)
    if state.workflow_type != defn.workflow_type:
        raise ReplayError(
            f"definition is for {defn.workflow_type!r} but history was started "
            f"as {state.workflow_type!r}"
        )

    recorded = deque(e for e in history if e.kind in _RECORDED_COMMAND_KINDS)
    ctx = WorkflowContext(input_payload=state.input, recorded_commands=recorded)
    coroutine = defn.body(ctx, state.input)

    driver = _Driver(ctx, coroutine)
    try:
        for event in history:
            kind = event.kind
            if kind is EventKind.WORKFLOW_TASK_STARTED:
                ctx._wt_time_ms = event.timestamp_ms
                driver.drain()
            elif kind is EventKind.ACTIVITY_TASK_COMPLETED:
                ctx._on_activity_completed(event.attrs["seq"], str(event.attrs.get("result", "")))
            elif kind is EventKind.ACTIVITY_TASK_FAILED:
                if event.attrs.get("is_final"):
                    ctx._on_activity_failed(event.attrs["seq"], str(event.attrs.get("error", "")))
            elif kind is EventKind.TIMER_FIRED:
                ctx._on_timer_fired(event.attrs["seq"])
            elif kind is EventKind.WORKFLOW_EXECUTION_SIGNALED:
                ctx._on_signal(
                    str(event.attrs.get("signal_name", "")),
                    str(event.attrs.get("payload", "")),
                )
        if ctx._wt_time_ms == 0:
            ctx._wt_time_ms = history[0].timestamp_ms
        driver.drain()
    finally:
        ctx._active = False
        driver.close()

    commands = list(ctx._new_commands)
    if driver.finished:
        if driver.failure is not None:
            commands.append(FailWorkflow(error=driver.failure))
        else:
            result = driver.return_value
            commands.append(CompleteWorkflow(result="" if result is None else str(result)))
    if ctx._recorded:
        leftover = ctx._recorded[0]
        raise NonDeterminismError(
            seq=int(leftover.attrs.get("seq", 0)),
            expected=_describe_event(leftover),
            actual="workflow code produced no matching command",
        )
    return ReplayResult(commands=commands)


_RECORDED_COMMAND_KINDS = frozenset(
    {
        EventKind.ACTIVITY_TASK_SCHEDULED,
        EventKind.TIMER_STARTED,
        EventKind.MARKER_RECORDED,
    }
)


class _Driver:
    """Single-coroutine scheduler: runs the body while its blocker is ready."""

    def __init__(self, ctx: WorkflowContext, coroutine: Coroutine[Any, Any, Any]):
        self._ctx = ctx
        self._coroutine = coroutine
        self._blocker: _Blocker | None = None
        self.finished = False
        self.return_value: Any = None
        self.failure: str | None = None

    def drain(self) -> None:
        """Advance the body until it blocks on an unresolved future or ends."""
        if self.finished:
            return
        while self._blocker is None or self._blocker.ready():
            self._ctx._active = True
            try:
                self._blocker = self._coroutine.send(None)
            except StopIteration as stop:
                self._raise_if_poisoned()
                self.finished = True
                self.return_value = stop.value
                return
            except NonDeterminismError:
                raise
            except (ActivityFailure, WorkflowFailure) as failure:
                self._raise_if_poisoned()
                self.finished = True
                self.failure = failure.error
                return
            except ContextMisuse:
                raise
            except Exception as exc:  # noqa: BLE001 - body bugs become task failures
                self._raise_if_poisoned()
                raise WorkflowTaskError(f"{type(exc).__name__}: {exc}") from exc
            finally:
                self._ctx._active = False
            self._raise_if_poisoned()

    def _raise_if_poisoned(self) -> None:
        if self._ctx._poisoned is not None:
            raise self._ctx._poisoned

    def close(self) -> None:
        if not self.finished:
            self._coroutine.close()
