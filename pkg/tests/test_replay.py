"""Replay engine: command matching, suspension, divergence detection."""

from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from duraflow.model import (
    CompleteWorkflow,
    FailWorkflow,
    RecordMarker,
    ScheduleActivity,
)
from duraflow.replay import (
    ActivityFailure,
    ContextMisuse,
    NonDeterminismError,
    ReplayError,
    WorkflowDefinition,
    WorkflowFailure,
    WorkflowTaskError,
    replay,
)
from helpers import (
    HistoryBuilder,
    mutate_workflow,
    random_generated_workflow,
    replay_commands_fingerprint,
    simulate_to_completion,
)


def _cancel_ticket_fixed() -> WorkflowDefinition:
    async def body(ctx, input_payload):
        order = json.loads(input_payload or "{}")
        payload = json.dumps({"order_id": order.get("order_id", "o1")})
        await ctx.execute_activity("setOrderCancellingActivity", payload)
        await ctx.execute_activity("drawBackMoneyActivity", payload)
        await ctx.execute_activity("setOrderCancelledActivity", payload)
        return json.dumps({"refunded": True})

    return WorkflowDefinition(workflow_type="cancelTicket", body=body)


def _cancel_ticket_swapped() -> WorkflowDefinition:
    async def body(ctx, input_payload):
        await ctx.execute_activity("drawBackMoneyActivity", "{}")
        await ctx.execute_activity("setOrderCancellingActivity", "{}")
        return ""

    return WorkflowDefinition(workflow_type="cancelTicket", body=body)


class TestFirstActivation:
    def test_fresh_history_schedules_first_activity(self):
        history = HistoryBuilder().wt_cycle().build()
        result = replay(_cancel_ticket_fixed(), history)
        assert len(result.commands) == 1
        command = result.commands[0]
        assert isinstance(command, ScheduleActivity)
        assert command.seq == 1
        assert command.activity_type == "setOrderCancellingActivity"

    def test_sequential_progress(self):
        history = (
            HistoryBuilder()
            .wt_cycle()
            .wt_completed()
            .activity_scheduled(1, "setOrderCancellingActivity")
            .activity_started(1)
            .activity_completed(1, result="{}")
            .wt_cycle()
            .build()
        )
        result = replay(_cancel_ticket_fixed(), history)
        assert [c.activity_type for c in result.commands] == ["drawBackMoneyActivity"]
        assert result.commands[0].seq == 2


def _full_success_history(include_terminal: bool) -> list:
    builder = HistoryBuilder()
    names = ["setOrderCancellingActivity", "drawBackMoneyActivity", "setOrderCancelledActivity"]
    for seq, name in enumerate(names, start=1):
        builder.wt_cycle().wt_completed()
        builder.activity_scheduled(seq, name)
        builder.activity_started(seq)
        builder.activity_completed(seq, result="{}")
    builder.wt_cycle()
    if include_terminal:
        builder.wt_completed().completed(json.dumps({"refunded": True}))
    return builder.build()


class TestCompletion:
    def test_success_history_yields_complete_command(self):
        result = replay(_cancel_ticket_fixed(), _full_success_history(include_terminal=False))
        assert len(result.commands) == 1
        assert isinstance(result.commands[0], CompleteWorkflow)
        assert json.loads(result.commands[0].result) == {"refunded": True}

    def test_terminal_history_still_replays_to_complete(self):
        result = replay(_cancel_ticket_fixed(), _full_success_history(include_terminal=True))
        assert isinstance(result.commands[0], CompleteWorkflow)


class TestDivergence:
    def test_reordered_activities_detected(self):
        history = (
            HistoryBuilder()
            .wt_cycle()
            .wt_completed()
            .activity_scheduled(1, "setOrderCancellingActivity")
            .activity_started(1)
            .activity_completed(1)
            .wt_cycle()
            .build()
        )
        with pytest.raises(NonDeterminismError) as err:
            replay(_cancel_ticket_swapped(), history)
        assert err.value.seq == 1
        assert "setOrderCancelling" in err.value.expected
        assert "drawBackMoney" in err.value.actual

    def test_timer_duration_mismatch_detected(self):
        async def with_timer(ctx, _):
            await ctx.sleep(100)
            return ""

        async def with_other_timer(ctx, _):
            await ctx.sleep(999)
            return ""

        history = (
            HistoryBuilder(workflow_type="t")
            .wt_cycle()
            .wt_completed()
            .timer_started(1, 100)
            .build()
        )
        replay(WorkflowDefinition("t", with_timer), history)  # sanity: matches
        with pytest.raises(NonDeterminismError):
            replay(WorkflowDefinition("t", with_other_timer), history)

    def test_removed_command_detected_as_leftover_history(self):
        async def empty_body(ctx, _):
            return ""

        history = (
            HistoryBuilder(workflow_type="t")
            .wt_cycle()
            .wt_completed()
            .activity_scheduled(1, "actA")
            .build()
        )
        with pytest.raises(NonDeterminismError):
            replay(WorkflowDefinition("t", empty_body), history)

    def test_body_swallowing_divergence_still_detected(self):
        async def sneaky(ctx, _):
            try:
                await ctx.execute_activity("wrongActivity")
            except Exception:
                pass
            return ""

        history = (
            HistoryBuilder(workflow_type="t")
            .wt_cycle()
            .wt_completed()
            .activity_scheduled(1, "rightActivity")
            .build()
        )
        with pytest.raises(NonDeterminismError):
            replay(WorkflowDefinition("t", sneaky), history)

    def test_workflow_type_mismatch_rejected(self):
        history = HistoryBuilder(workflow_type="other").wt_cycle().build()
        with pytest.raises(ReplayError):
            replay(_cancel_ticket_fixed(), history)


class TestSideEffect:
    def test_side_effect_records_once_and_replays(self):
        calls = []

        async def body(ctx, _):
            value = ctx.side_effect(lambda: calls.append(1) or 0.42)
            await ctx.execute_activity("actA", input=str(value))
            return ""

        defn = WorkflowDefinition("t", body)
        fresh = HistoryBuilder(workflow_type="t").wt_cycle().build()
        first = replay(defn, fresh)
        assert calls == [1]
        assert isinstance(first.commands[0], RecordMarker)
        assert first.commands[0].value == 0.42
        assert isinstance(first.commands[1], ScheduleActivity)

        recorded = (
            HistoryBuilder(workflow_type="t")
            .wt_cycle()
            .wt_completed()
            .marker(1, 0.42)
            .activity_scheduled(2, "actA")
            .wt_cycle()
            .build()
        )
        calls.clear()
        second = replay(defn, recorded)
        assert calls == []  # producer not re-invoked
        assert second.commands == []

    def test_unserializable_side_effect_rejected(self):
        async def body(ctx, _):
            ctx.side_effect(lambda: object())
            return ""

        history = HistoryBuilder(workflow_type="t").wt_cycle().build()
        with pytest.raises(ContextMisuse):
            replay(WorkflowDefinition("t", body), history)


class TestConcurrency:
    def test_concurrent_schedules_in_program_order(self):
        async def faulty_shape(ctx, _):
            draw = ctx.start_activity("drawBackMoneyActivity")
            set_cancelled = ctx.start_activity("setOrderCancelledActivity")
            await draw
            await set_cancelled
            return ""

        history = HistoryBuilder(workflow_type="t").wt_cycle().build()
        result = replay(WorkflowDefinition("t", faulty_shape), history)
        assert [(c.seq, c.activity_type) for c in result.commands] == [
            (1, "drawBackMoneyActivity"),
            (2, "setOrderCancelledActivity"),
        ]

    def test_wait_any_picks_first_resolved_in_history_order(self):
        async def race(ctx, _):
            timer = ctx.start_timer(500)
            signal = ctx.wait_signal("payment")
            winner = await ctx.wait_any(signal, timer)
            return "signal" if winner is signal else "timer"

        timer_wins = (
            HistoryBuilder(workflow_type="t")
            .wt_cycle()
            .wt_completed()
            .timer_started(1, 500)
            .timer_fired(1)
            .wt_cycle()
            .build()
        )
        result = replay(WorkflowDefinition("t", race), timer_wins)
        assert isinstance(result.commands[0], CompleteWorkflow)
        assert result.commands[0].result == "timer"

        signal_wins = (
            HistoryBuilder(workflow_type="t")
            .wt_cycle()
            .wt_completed()
            .timer_started(1, 500)
            .signaled("payment", "paid")
            .wt_cycle()
            .build()
        )
        result = replay(WorkflowDefinition("t", race), signal_wins)
        assert result.commands[0].result == "signal"


class TestSignals:
    def test_signals_fifo_per_name(self):
        async def body(ctx, _):
            first = await ctx.await_signal("go")
            second = await ctx.await_signal("go")
            return json.dumps([first, second])

        history = (
            HistoryBuilder(workflow_type="t")
            .wt_cycle()
            .wt_completed()
            .signaled("go", "a")
            .signaled("go", "b")
            .wt_cycle()
            .build()
        )
        result = replay(WorkflowDefinition("t", body), history)
        assert json.loads(result.commands[0].result) == ["a", "b"]

    def test_unsignaled_body_suspends_with_no_commands(self):
        async def body(ctx, _):
            await ctx.await_signal("missing")
            return ""

        history = HistoryBuilder(workflow_type="t").wt_cycle().build()
        result = replay(WorkflowDefinition("t", body), history)
        assert result.commands == []


class TestFailurePaths:
    def test_final_activity_failure_surfaces_to_body(self):
        async def body(ctx, _):
            try:
                await ctx.execute_activity("actA")
            except ActivityFailure as failure:
                return f"caught:{failure.error}"
            return "no-failure"

        history = (
            HistoryBuilder(workflow_type="t")
            .wt_cycle()
            .wt_completed()
            .activity_scheduled(1, "actA")
            .activity_started(1)
            .activity_failed(1, attempt=1, error="exhausted", is_final=True)
            .wt_cycle()
            .build()
        )
        result = replay(WorkflowDefinition("t", body), history)
        assert result.commands[0].result == "caught:exhausted"

    def test_uncaught_activity_failure_fails_workflow(self):
        async def body(ctx, _):
            await ctx.execute_activity("actA")
            return ""

        history = (
            HistoryBuilder(workflow_type="t")
            .wt_cycle()
            .wt_completed()
            .activity_scheduled(1, "actA")
            .activity_started(1)
            .activity_failed(1, attempt=1, error="exhausted", is_final=True)
            .wt_cycle()
            .build()
        )
        result = replay(WorkflowDefinition("t", body), history)
        assert isinstance(result.commands[0], FailWorkflow)
        assert result.commands[0].error == "exhausted"

    def test_workflow_failure_becomes_fail_command(self):
        async def body(ctx, _):
            raise WorkflowFailure("payment timeout")

        history = HistoryBuilder(workflow_type="t").wt_cycle().build()
        result = replay(WorkflowDefinition("t", body), history)
        assert result.commands == [FailWorkflow(error="payment timeout")]

    def test_body_bug_raises_workflow_task_error(self):
        async def body(ctx, _):
            raise RuntimeError("null pointer, basically")

        history = HistoryBuilder(workflow_type="t").wt_cycle().build()
        with pytest.raises(WorkflowTaskError) as err:
            replay(WorkflowDefinition("t", body), history)
        assert "RuntimeError" in str(err.value)

    def test_context_use_outside_replay_rejected(self):
        captured = {}

        async def body(ctx, _):
            captured["ctx"] = ctx
            return ""

        history = HistoryBuilder(workflow_type="t").wt_cycle().build()
        replay(WorkflowDefinition("t", body), history)
        with pytest.raises(ContextMisuse):
            captured["ctx"].start_activity("late")


class TestWorkflowTime:
    def test_workflow_time_is_current_task_started_ts(self):
        seen = []

        async def body(ctx, _):
            seen.append(ctx.workflow_time())
            await ctx.execute_activity("actA")
            seen.append(ctx.workflow_time())
            return ""

        history = (
            HistoryBuilder(workflow_type="t", start_ts=50_000)
            .wt_cycle()
            .wt_completed()
            .activity_scheduled(1, "actA")
            .activity_started(1)
            .activity_completed(1)
            .wt_cycle(ts=90_000)
            .build()
        )
        first_started = next(
            e.timestamp_ms for e in history if e.kind.value == "WorkflowTaskStarted"
        )
        replay(WorkflowDefinition("t", body), history)
        assert seen[0] == first_started
        assert seen[1] == 90_010  # the second WT started event's timestamp

    def test_workflow_time_stable_across_replays(self):
        async def body(ctx, _):
            value = ctx.side_effect(lambda: "x")
            await ctx.execute_activity("actA", input=str(ctx.workflow_time()))
            return ""

        history = (
            HistoryBuilder(workflow_type="t")
            .wt_cycle()
            .wt_completed()
            .marker(1, "x")
            .activity_scheduled(2, "actA")
            .wt_cycle()
            .build()
        )
        defn = WorkflowDefinition("t", body)
        assert replay_commands_fingerprint(replay(defn, history)) == replay_commands_fingerprint(
            replay(defn, history)
        )


# ---------------------------------------------------------------------------
# Properties over generated workflows (the same machinery the acceptance
# suite uses at larger scale).
# ---------------------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=99_999))
def test_replay_idempotent_on_every_prefix(seed):
    rng = random.Random(seed)
    generated = random_generated_workflow(rng)
    defn = generated.definition()
    trace = simulate_to_completion(defn, rng=random.Random(seed + 1))
    assert trace.completed
    for boundary in trace.task_boundaries:
        prefix = trace.history[:boundary]
        first = replay(defn, prefix)
        second = replay(defn, prefix)
        assert replay_commands_fingerprint(first) == replay_commands_fingerprint(second)


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=99_999))
def test_progress_to_completion(seed):
    rng = random.Random(seed)
    generated = random_generated_workflow(rng)
    trace = simulate_to_completion(generated.definition(), rng=rng)
    assert trace.completed
    assert trace.failure is None


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=0, max_value=99_999))
def test_mutated_bodies_always_detected(seed):
    rng = random.Random(seed)
    generated = random_generated_workflow(rng)
    trace = simulate_to_completion(generated.definition(), rng=random.Random(seed))
    mutant = mutate_workflow(rng, generated)
    if mutant is None:
        return
    with pytest.raises(NonDeterminismError):
        replay(mutant.definition(), trace.history)
