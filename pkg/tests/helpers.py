"""Shared test utilities: a history builder and a small-step workflow
simulator that together act as engine-independent oracles."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Any

from duraflow.model import (
    Command,
    CompleteWorkflow,
    EventKind,
    FailWorkflow,
    HistoryEvent,
    RecordMarker,
    RetryPolicy,
    ScheduleActivity,
    StartTimer,
)
from duraflow.replay import ReplayResult, WorkflowDefinition, replay


class HistoryBuilder:
    """Hand-construct legal histories event by event."""

    def __init__(
        self,
        workflow_type: str = "cancelTicket",
        input_payload: str = "",
        task_queue: str = "demo-q",
        workflow_id: str = "wf-1",
        start_ts: int = 1_000_000,
        ts_step: int = 10,
    ):
        self.events: list[HistoryEvent] = []
        self._ts = start_ts
        self._ts_step = ts_step
        self.add(
            EventKind.WORKFLOW_EXECUTION_STARTED,
            {
                "workflow_type": workflow_type,
                "input": input_payload,
                "task_queue": task_queue,
                "workflow_id": workflow_id,
            },
        )

    def add(self, kind: EventKind, attrs: dict[str, Any] | None = None, ts: int | None = None):
        if ts is not None:
            self._ts = ts
        self.events.append(
            HistoryEvent(
                event_id=len(self.events) + 1,
                timestamp_ms=self._ts,
                kind=kind,
                attrs=attrs or {},
            )
        )
        self._ts += self._ts_step
        return self

    # Workflow-task lifecycle ------------------------------------------------

    def wt_scheduled(self, ts: int | None = None):
        return self.add(EventKind.WORKFLOW_TASK_SCHEDULED, ts=ts)

    def wt_started(self, ts: int | None = None):
        return self.add(EventKind.WORKFLOW_TASK_STARTED, ts=ts)

    def wt_cycle(self, ts: int | None = None):
        return self.wt_scheduled(ts=ts).wt_started()

    def wt_completed(self):
        return self.add(EventKind.WORKFLOW_TASK_COMPLETED)

    def wt_failed(self, error: str = "boom"):
        return self.add(EventKind.WORKFLOW_TASK_FAILED, {"error": error})

    # Activities ---------------------------------------------------------------

    def activity_scheduled(
        self,
        seq: int,
        activity_type: str,
        input_payload: str = "",
        retry_policy: RetryPolicy | None = None,
        start_to_close_timeout_ms: int = 10_000,
        ts: int | None = None,
    ):
        return self.add(
            EventKind.ACTIVITY_TASK_SCHEDULED,
            {
                "seq": seq,
                "activity_type": activity_type,
                "input": input_payload,
                "retry_policy": (retry_policy or RetryPolicy()).to_dict(),
                "start_to_close_timeout_ms": start_to_close_timeout_ms,
            },
            ts=ts,
        )

    def activity_started(self, seq: int, attempt: int = 1, ts: int | None = None):
        return self.add(EventKind.ACTIVITY_TASK_STARTED, {"seq": seq, "attempt": attempt}, ts=ts)

    def activity_completed(self, seq: int, result: str = "", ts: int | None = None):
        return self.add(EventKind.ACTIVITY_TASK_COMPLETED, {"seq": seq, "result": result}, ts=ts)

    def activity_failed(
        self,
        seq: int,
        attempt: int = 1,
        error: str = "boom",
        is_final: bool = False,
        ts: int | None = None,
    ):
        return self.add(
            EventKind.ACTIVITY_TASK_FAILED,
            {"seq": seq, "attempt": attempt, "error": error, "is_final": is_final},
            ts=ts,
        )

    # Timers / signals / markers --------------------------------------------

    def timer_started(self, seq: int, duration_ms: int, ts: int | None = None):
        return self.add(EventKind.TIMER_STARTED, {"seq": seq, "duration_ms": duration_ms}, ts=ts)

    def timer_fired(self, seq: int, ts: int | None = None):
        return self.add(EventKind.TIMER_FIRED, {"seq": seq}, ts=ts)

    def signaled(self, name: str, payload: str = ""):
        return self.add(
            EventKind.WORKFLOW_EXECUTION_SIGNALED, {"signal_name": name, "payload": payload}
        )

    def marker(self, seq: int, value: Any):
        return self.add(EventKind.MARKER_RECORDED, {"seq": seq, "value": value})

    # Terminal -----------------------------------------------------------------

    def completed(self, result: str = ""):
        return self.add(EventKind.WORKFLOW_EXECUTION_COMPLETED, {"result": result})

    def failed(self, error: str = ""):
        return self.add(EventKind.WORKFLOW_EXECUTION_FAILED, {"error": error})

    def terminated(self, reason: str = ""):
        return self.add(EventKind.WORKFLOW_EXECUTION_TERMINATED, {"reason": reason})

    def build(self) -> list[HistoryEvent]:
        return list(self.events)


# ---------------------------------------------------------------------------
# Generated workflow bodies + small-step simulator.
#
# The simulator plays the orchestrator's role without any engine code beyond
# replay itself: it converts commands to events and invents activity results,
# which makes it an independent oracle for replay semantics.
# ---------------------------------------------------------------------------

OpSpec = tuple  # ("activity", name) | ("timer", ms) | ("side_effect", key) | ("parallel", [names])


@dataclass
class GeneratedWorkflow:
    workflow_type: str
    ops: list[OpSpec]

    def definition(self) -> WorkflowDefinition:
        ops = list(self.ops)

        async def body(ctx, input_payload: str):
            results: list[Any] = []
            for op in ops:
                tag = op[0]
                if tag == "activity":
                    results.append(await ctx.execute_activity(op[1], input=f"in:{op[1]}"))
                elif tag == "timer":
                    await ctx.sleep(op[1])
                elif tag == "side_effect":
                    key = op[1]
                    results.append(ctx.side_effect(lambda k=key: f"sv:{k}"))
                elif tag == "parallel":
                    futures = [ctx.start_activity(name, input=f"in:{name}") for name in op[1]]
                    for future in futures:
                        results.append(await future)
                else:
                    raise AssertionError(f"unknown op {op!r}")
            return json.dumps(results)

        return WorkflowDefinition(workflow_type=self.workflow_type, body=body)


def random_generated_workflow(rng: random.Random, type_name: str = "gen") -> GeneratedWorkflow:
    ops: list[OpSpec] = []
    pool = [f"act{chr(ord('A') + i)}" for i in range(6)]
    for i in range(rng.randint(1, 6)):
        roll = rng.random()
        if roll < 0.45:
            ops.append(("activity", rng.choice(pool)))
        elif roll < 0.6:
            ops.append(("timer", rng.randint(10, 500)))
        elif roll < 0.75:
            ops.append(("side_effect", f"k{i}"))
        else:
            size = rng.randint(2, 3)
            ops.append(("parallel", rng.sample(pool, size)))
    if not any(op[0] in ("activity", "parallel") for op in ops):
        ops.append(("activity", rng.choice(pool)))
    return GeneratedWorkflow(workflow_type=type_name, ops=ops)


@dataclass
class SimulationTrace:
    history: list[HistoryEvent]
    task_boundaries: list[int] = field(default_factory=list)  # history lengths at WT starts
    completed: bool = False
    result: str | None = None
    failure: str | None = None


def simulate_to_completion(
    defn: WorkflowDefinition,
    rng: random.Random | None = None,
    workflow_id: str = "gen-1",
    max_steps: int = 200,
) -> SimulationTrace:
    """Drive replay against a synthetic history until the body completes.

    Activity completions within a command batch are applied in an order chosen
    by ``rng`` so that parallel schedules see varied interleavings.
    """
    rng = rng or random.Random(0)
    builder = HistoryBuilder(
        workflow_type=defn.workflow_type, workflow_id=workflow_id, input_payload="{}"
    )
    trace = SimulationTrace(history=builder.events)

    for _ in range(max_steps):
        builder.wt_cycle()
        trace.task_boundaries.append(len(builder.events))
        result = replay(defn, builder.build())
        builder.wt_completed()

        terminal: Command | None = None
        pending_activity_seqs: list[int] = []
        pending_timer_seqs: list[int] = []
        for command in result.commands:
            if isinstance(command, ScheduleActivity):
                builder.activity_scheduled(command.seq, command.activity_type, command.input)
                pending_activity_seqs.append(command.seq)
            elif isinstance(command, StartTimer):
                builder.timer_started(command.seq, command.duration_ms)
                pending_timer_seqs.append(command.seq)
            elif isinstance(command, RecordMarker):
                builder.marker(command.seq, command.value)
            elif isinstance(command, (CompleteWorkflow, FailWorkflow)):
                terminal = command
            else:
                raise AssertionError(f"unexpected command {command!r}")

        if terminal is not None:
            if isinstance(terminal, CompleteWorkflow):
                builder.completed(terminal.result)
                trace.completed = True
                trace.result = terminal.result
            else:
                builder.failed(terminal.error)
                trace.completed = True
                trace.failure = terminal.error
            trace.history = builder.build()
            return trace

        if not pending_activity_seqs and not pending_timer_seqs:
            raise AssertionError("workflow made no progress and is not terminal")

        rng.shuffle(pending_activity_seqs)
        for seq in pending_activity_seqs:
            builder.activity_started(seq, attempt=1)
            builder.activity_completed(seq, result=f"res:{seq}")
        for seq in pending_timer_seqs:
            builder.timer_fired(seq)

    raise AssertionError("simulation did not terminate")


def mutate_workflow(
    rng: random.Random, generated: GeneratedWorkflow
) -> GeneratedWorkflow | None:
    """Produce a schedule-order or schedule-type mutant, or None if the ops
    offer no detectable mutation."""
    ops = [list(op) if op[0] == "parallel" else op for op in generated.ops]
    candidates: list[tuple[str, int, int]] = []
    for i, op in enumerate(ops):
        if op[0] == "activity":
            candidates.append(("retype", i, 0))
        if op[0] == "parallel":
            candidates.append(("reorder", i, 0))
            candidates.append(("retype_parallel", i, 0))
    for i in range(len(ops) - 1):
        a, b = ops[i], ops[i + 1]
        if a[0] == "activity" and b[0] == "activity" and a[1] != b[1]:
            candidates.append(("swap", i, i + 1))
    if not candidates:
        return None

    kind, i, j = rng.choice(candidates)
    mutated = [tuple(op) if not isinstance(op, tuple) else op for op in generated.ops]
    mutated = [list(op) for op in mutated]
    if kind == "retype":
        mutated[i] = ["activity", mutated[i][1] + "_mut"]
    elif kind == "retype_parallel":
        names = list(mutated[i][1])
        pick = rng.randrange(len(names))
        names[pick] = names[pick] + "_mut"
        mutated[i] = ["parallel", names]
    elif kind == "reorder":
        names = list(mutated[i][1])
        names.reverse()
        if names == list(mutated[i][1]):
            return None
        mutated[i] = ["parallel", names]
    elif kind == "swap":
        mutated[i], mutated[j] = mutated[j], mutated[i]
    ops_out: list[OpSpec] = [
        ("parallel", list(op[1])) if op[0] == "parallel" else tuple(op) for op in mutated
    ]
    return GeneratedWorkflow(workflow_type=generated.workflow_type, ops=ops_out)


def replay_commands_fingerprint(result: ReplayResult) -> str:
    return json.dumps(result.to_dicts(), sort_keys=True)
