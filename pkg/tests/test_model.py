"""Core model: history folds, validation, retry policy math."""

from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from duraflow.model import (
    CompleteWorkflow,
    EventKind,
    FailWorkflow,
    HistoryCorrupt,
    HistoryEvent,
    HistoryState,
    RetryPolicy,
    ScheduleActivity,
    StartTimer,
    WorkflowStatus,
    fold_status,
    pending_items,
    validate_command_batch,
)
from helpers import HistoryBuilder


class TestFoldStatus:
    def test_started_only_is_running(self):
        assert fold_status(HistoryBuilder().build()) is WorkflowStatus.RUNNING

    def test_terminal_completed(self):
        history = HistoryBuilder().wt_cycle().wt_completed().completed("{}").build()
        assert fold_status(history) is WorkflowStatus.COMPLETED

    def test_terminal_failed_and_terminated(self):
        assert fold_status(HistoryBuilder().failed("x").build()) is WorkflowStatus.FAILED
        assert fold_status(HistoryBuilder().terminated("op").build()) is WorkflowStatus.TERMINATED

    def test_non_dense_ids_rejected(self):
        events = HistoryBuilder().wt_scheduled().build()
        gappy = [events[0], HistoryEvent(3, events[1].timestamp_ms, events[1].kind, {})]
        with pytest.raises(HistoryCorrupt):
            fold_status(gappy)

    def test_first_event_must_be_started(self):
        bogus = [HistoryEvent(1, 0, EventKind.WORKFLOW_TASK_SCHEDULED, {})]
        with pytest.raises(HistoryCorrupt):
            fold_status(bogus)

    def test_events_after_terminal_rejected(self):
        builder = HistoryBuilder().completed()
        builder.add(EventKind.WORKFLOW_TASK_SCHEDULED)
        with pytest.raises(HistoryCorrupt):
            fold_status(builder.build())

    def test_deterministic(self):
        history = (
            HistoryBuilder()
            .wt_cycle()
            .wt_completed()
            .activity_scheduled(1, "setOrderCancellingActivity")
            .build()
        )
        assert fold_status(history) == fold_status(list(history))


class TestPendingItems:
    def test_scheduled_activity_is_pending(self):
        history = (
            HistoryBuilder()
            .wt_cycle()
            .wt_completed()
            .activity_scheduled(1, "setOrderCancellingActivity")
            .build()
        )
        items = pending_items(history)
        assert len(items) == 1
        assert items[0].seq == 1
        assert items[0].kind == "activity"
        assert items[0].attempt == 1
        assert items[0].label == "setOrderCancellingActivity"

    def test_completed_run_has_nothing_pending(self):
        history = (
            HistoryBuilder()
            .wt_cycle()
            .wt_completed()
            .activity_scheduled(1, "a")
            .activity_started(1)
            .activity_completed(1)
            .wt_cycle()
            .wt_completed()
            .completed()
            .build()
        )
        assert pending_items(history) == []

    def test_failed_attempt_bumps_attempt_counter(self):
        # Enumerated by hand: one non-final failure means attempt 2 is pending.
        history = (
            HistoryBuilder()
            .wt_cycle()
            .wt_completed()
            .activity_scheduled(1, "drawBackMoneyActivity")
            .activity_started(1, attempt=1)
            .activity_failed(1, attempt=1, error="order already cancelled", is_final=False)
            .build()
        )
        items = pending_items(history)
        assert len(items) == 1
        assert items[0].attempt == 2
        assert items[0].last_error == "order already cancelled"

    def test_timer_pending_until_fired(self):
        builder = HistoryBuilder().wt_cycle().wt_completed().timer_started(1, 500)
        assert [i.kind for i in pending_items(builder.build())] == ["timer"]
        builder.timer_fired(1)
        assert pending_items(builder.build()) == []

    def test_final_failure_closes_item(self):
        history = (
            HistoryBuilder()
            .wt_cycle()
            .wt_completed()
            .activity_scheduled(1, "a")
            .activity_started(1, attempt=1)
            .activity_failed(1, attempt=1, error="x", is_final=True)
            .build()
        )
        assert pending_items(history) == []


class TestHistoryInvariants:
    def test_duplicate_completion_rejected(self):
        builder = (
            HistoryBuilder()
            .wt_cycle()
            .wt_completed()
            .activity_scheduled(1, "a")
            .activity_started(1)
            .activity_completed(1)
        )
        builder.add(EventKind.ACTIVITY_TASK_COMPLETED, {"seq": 1, "result": ""})
        with pytest.raises(HistoryCorrupt):
            fold_status(builder.build())

    def test_activity_events_need_prior_schedule(self):
        builder = HistoryBuilder().wt_cycle().wt_completed()
        builder.add(EventKind.ACTIVITY_TASK_STARTED, {"seq": 9, "attempt": 1})
        with pytest.raises(HistoryCorrupt):
            fold_status(builder.build())

    def test_timer_fired_needs_started(self):
        builder = HistoryBuilder().wt_cycle().wt_completed()
        builder.add(EventKind.TIMER_FIRED, {"seq": 3})
        with pytest.raises(HistoryCorrupt):
            fold_status(builder.build())

    def test_command_seq_must_be_dense(self):
        builder = HistoryBuilder().wt_cycle().wt_completed()
        builder.add(
            EventKind.ACTIVITY_TASK_SCHEDULED,
            {"seq": 2, "activity_type": "a", "input": ""},
        )
        with pytest.raises(HistoryCorrupt):
            fold_status(builder.build())

    def test_workflow_task_grammar(self):
        builder = HistoryBuilder()
        builder.add(EventKind.WORKFLOW_TASK_STARTED)
        with pytest.raises(HistoryCorrupt):
            fold_status(builder.build())


class TestRetryPolicy:
    def test_backoff_schedule_matches_bruteforce(self):
        policy = RetryPolicy(
            initial_interval_ms=1_000,
            backoff_coefficient=2.0,
            max_interval_ms=10_000,
            max_attempts=5,
        )
        # Independent oracle: brute-force loop over the formula.
        expected = []
        delay = 1_000.0
        for _ in range(4):
            expected.append(int(min(delay, 10_000)))
            delay *= 2.0
        assert [policy.retry_delay_ms(a) for a in (1, 2, 3, 4)] == expected == [
            1_000,
            2_000,
            4_000,
            8_000,
        ]

    def test_max_interval_caps_delay(self):
        policy = RetryPolicy(1_000, 2.0, 3_000, 0)
        assert policy.retry_delay_ms(10) == 3_000

    def test_attempt_budget(self):
        policy = RetryPolicy(max_attempts=5)
        assert policy.allows_retry_after(4)
        assert not policy.allows_retry_after(5)
        unlimited = RetryPolicy(max_attempts=0)
        assert unlimited.allows_retry_after(10_000)

    def test_validation(self):
        with pytest.raises(ValueError):
            RetryPolicy(initial_interval_ms=0)
        with pytest.raises(ValueError):
            RetryPolicy(initial_interval_ms=100, max_interval_ms=50)
        with pytest.raises(ValueError):
            RetryPolicy(backoff_coefficient=0.5)

    def test_roundtrip(self):
        policy = RetryPolicy(500, 1.5, 4_000, 7)
        assert RetryPolicy.from_dict(policy.to_dict()) == policy


class TestCommandBatchValidation:
    def test_terminal_must_be_last(self):
        with pytest.raises(ValueError):
            validate_command_batch(
                [CompleteWorkflow(result=""), ScheduleActivity(1, "a", "")],
                max_recorded_seq=0,
            )

    def test_dense_seqs_enforced(self):
        with pytest.raises(ValueError):
            validate_command_batch([ScheduleActivity(3, "a", "")], max_recorded_seq=1)
        validate_command_batch(
            [ScheduleActivity(2, "a", ""), StartTimer(3, 100), FailWorkflow("e")],
            max_recorded_seq=1,
        )


# ---------------------------------------------------------------------------
# Property: random legal event sequences keep all invariants, and every
# prefix of a legal history is legal.
# ---------------------------------------------------------------------------


def _random_legal_history(rng: random.Random) -> list[HistoryEvent]:
    builder = HistoryBuilder(workflow_type="fuzz", workflow_id=f"wf-{rng.randint(0, 9)}")
    open_activities: dict[int, int] = {}  # seq -> next attempt
    started_activities: set[int] = set()
    open_timers: list[int] = []
    next_seq = 1
    wt_state = "idle"  # idle | scheduled | started

    for _ in range(rng.randint(0, 40)):
        choices: list[str] = []
        if wt_state == "idle":
            choices.append("wt_schedule")
        if wt_state == "scheduled":
            choices.append("wt_start")
        if wt_state == "started":
            choices += ["wt_complete", "wt_fail", "schedule_activity", "start_timer", "marker"]
        if started_activities:
            choices += ["activity_complete", "activity_fail"]
        if open_activities:
            choices.append("activity_start")
        if open_timers:
            choices.append("timer_fire")
        choices.append("signal")
        if wt_state == "idle" and rng.random() < 0.05:
            choices.append("terminal")

        action = rng.choice(choices)
        if action == "wt_schedule":
            builder.wt_scheduled()
            wt_state = "scheduled"
        elif action == "wt_start":
            builder.wt_started()
            wt_state = "started"
        elif action == "wt_complete":
            builder.wt_completed()
            wt_state = "idle"
        elif action == "wt_fail":
            builder.wt_failed("fuzz")
            wt_state = "idle"
        elif action == "schedule_activity":
            builder.activity_scheduled(next_seq, f"act{next_seq}")
            open_activities[next_seq] = 1
            next_seq += 1
        elif action == "start_timer":
            builder.timer_started(next_seq, rng.randint(1, 1_000))
            open_timers.append(next_seq)
            next_seq += 1
        elif action == "marker":
            builder.marker(next_seq, {"v": rng.random()})
            next_seq += 1
        elif action == "activity_start":
            seq = rng.choice(sorted(open_activities))
            builder.activity_started(seq, attempt=open_activities[seq])
            started_activities.add(seq)
            del open_activities[seq]
        elif action == "activity_complete":
            seq = rng.choice(sorted(started_activities))
            builder.activity_completed(seq, result="ok")
            started_activities.discard(seq)
        elif action == "activity_fail":
            seq = rng.choice(sorted(started_activities))
            state = HistoryState.from_events(builder.build())
            attempt = state.activities[seq].current_attempt
            final = rng.random() < 0.3
            builder.activity_failed(seq, attempt=attempt, error="fuzz", is_final=final)
            started_activities.discard(seq)
            if not final:
                open_activities[seq] = attempt + 1
        elif action == "timer_fire":
            seq = open_timers.pop(rng.randrange(len(open_timers)))
            builder.timer_fired(seq)
        elif action == "signal":
            builder.signaled(f"sig{rng.randint(0, 3)}", payload="p")
        elif action == "terminal":
            builder.completed() if rng.random() < 0.5 else builder.failed("f")
            break
    return builder.build()


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_random_legal_histories_fold_cleanly(seed):
    history = _random_legal_history(random.Random(seed))
    state = HistoryState.from_events(history)  # must not raise
    assert state.next_event_id == len(history) + 1
    # Folds are deterministic.
    assert fold_status(history) == fold_status(list(history))
    assert [i.to_dict() for i in pending_items(history)] == [
        i.to_dict() for i in pending_items(list(history))
    ]
    # Prefix closure: every prefix is itself a legal history.
    for cut in range(1, len(history) + 1):
        HistoryState.from_events(history[:cut])


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_pending_attempt_counts_match_failures(seed):
    history = _random_legal_history(random.Random(seed))
    state = HistoryState.from_events(history)
    for item in pending_items(history):
        if item.kind != "activity":
            continue
        activity = state.activities[item.seq]
        assert item.attempt == activity.nonfinal_failure_count + 1
