"""History store: conditional append, durability, torn-write recovery."""

from __future__ import annotations

import json
import random
import threading

import pytest

from duraflow.model import EventKind, HistoryCorrupt, WorkflowStatus
from duraflow.store import (
    AlreadyRunning,
    HistoryStore,
    TerminalHistory,
    UnknownRun,
    VersionConflict,
)


@pytest.fixture
def store(tmp_path):
    return HistoryStore(tmp_path / "data", fsync=False)


def _create(store, workflow_id="order-cancel-1", workflow_type="cancelTicket"):
    return store.create_execution(workflow_id, workflow_type, "cancel-q", "{}")


class TestCreate:
    def test_create_persists_started_event(self, store):
        run_id = _create(store)
        history = store.get_history(run_id)
        assert len(history) == 1
        assert history[0].kind is EventKind.WORKFLOW_EXECUTION_STARTED
        assert history[0].event_id == 1

    def test_duplicate_running_workflow_id_rejected(self, store):
        _create(store)
        with pytest.raises(AlreadyRunning):
            _create(store)

    def test_new_run_allowed_after_completion(self, store):
        r1 = _create(store)
        store.append(r1, 2, [(EventKind.WORKFLOW_EXECUTION_COMPLETED, {"result": ""})])
        r2 = _create(store)
        assert r2 != r1
        assert store.latest_run("order-cancel-1") == r2


class TestAppend:
    def test_append_returns_next_id(self, store):
        run_id = _create(store)
        assert store.append(run_id, 2, [(EventKind.WORKFLOW_TASK_SCHEDULED, {})]) == 3

    def test_version_conflict_reports_actual(self, store):
        run_id = _create(store)
        store.append(run_id, 2, [(EventKind.WORKFLOW_TASK_SCHEDULED, {})])
        with pytest.raises(VersionConflict) as err:
            store.append(run_id, 2, [(EventKind.WORKFLOW_TASK_STARTED, {})])
        assert err.value.actual_next_event_id == 3

    def test_concurrent_appends_exactly_one_winner(self, store):
        run_id = _create(store)
        results = []
        barrier = threading.Barrier(8)

        def contend():
            barrier.wait()
            try:
                store.append(run_id, 2, [(EventKind.WORKFLOW_TASK_SCHEDULED, {})])
                results.append("win")
            except VersionConflict as vc:
                results.append(vc.actual_next_event_id)

        threads = [threading.Thread(target=contend) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert results.count("win") == 1
        assert all(r == 3 for r in results if r != "win")
        assert len(store.get_history(run_id)) == 2

    def test_append_after_terminal_rejected(self, store):
        run_id = _create(store)
        store.append(run_id, 2, [(EventKind.WORKFLOW_EXECUTION_TERMINATED, {"reason": "op"})])
        with pytest.raises(TerminalHistory):
            store.append(run_id, 3, [(EventKind.WORKFLOW_TASK_SCHEDULED, {})])

    def test_illegal_batch_rejected_without_side_effects(self, store):
        run_id = _create(store)
        with pytest.raises(HistoryCorrupt):
            store.append(run_id, 2, [(EventKind.WORKFLOW_TASK_STARTED, {})])
        assert len(store.get_history(run_id)) == 1

    def test_unknown_run(self, store):
        with pytest.raises(UnknownRun):
            store.get_history("nope")
        with pytest.raises(UnknownRun):
            store.append("nope", 1, [(EventKind.WORKFLOW_TASK_SCHEDULED, {})])


class TestListing:
    def test_list_by_status(self, store):
        r1 = _create(store, "wf-a")
        r2 = _create(store, "wf-b", workflow_type="bookTicket")
        store.append(r2, 2, [(EventKind.WORKFLOW_EXECUTION_COMPLETED, {"result": ""})])
        running = store.list_executions(status=WorkflowStatus.RUNNING)
        assert [s.run_id for s in running] == [r1]
        booked = store.list_executions(workflow_type="bookTicket")
        assert [s.run_id for s in booked] == [r2]
        assert len(store.list_executions()) == 2


class TestRecovery:
    def _reopen(self, store) -> HistoryStore:
        return HistoryStore(store.data_dir, fsync=False)

    def test_reopen_preserves_histories(self, store):
        run_id = _create(store)
        store.append(run_id, 2, [(EventKind.WORKFLOW_TASK_SCHEDULED, {})])
        reopened = self._reopen(store)
        assert [e.to_record() for e in reopened.get_history(run_id)] == [
            e.to_record() for e in store.get_history(run_id)
        ]

    def test_torn_trailing_record_truncated(self, store):
        run_id = _create(store)
        store.append(run_id, 2, [(EventKind.WORKFLOW_TASK_SCHEDULED, {})])
        path = store.data_dir / "executions" / f"{run_id}.events"
        with path.open("ab") as fh:
            fh.write(b'{"event_id": 3, "timestamp_ms": 1, "ki')  # torn write
        reopened = self._reopen(store)
        assert len(reopened.get_history(run_id)) == 2
        # The torn bytes are gone: appending works at the expected position.
        assert reopened.append(run_id, 3, [(EventKind.WORKFLOW_TASK_STARTED, {})]) == 4

    def test_partial_batch_without_commit_marker_dropped(self, store):
        run_id = _create(store)
        path = store.data_dir / "executions" / f"{run_id}.events"
        # A two-event batch whose eob line never made it to disk.
        orphan = {
            "event_id": 2,
            "timestamp_ms": 5,
            "kind": "WorkflowTaskScheduled",
            "attrs": {},
        }
        with path.open("ab") as fh:
            fh.write((json.dumps(orphan) + "\n").encode())
        reopened = self._reopen(store)
        assert len(reopened.get_history(run_id)) == 1

    def test_mid_file_garbage_quarantines_run(self, store):
        run_id = _create(store)
        path = store.data_dir / "executions" / f"{run_id}.events"
        good = path.read_bytes()
        path.write_bytes(b"not json at all\n" + good)
        reopened = self._reopen(store)
        assert run_id in reopened.corrupt_runs
        with pytest.raises(HistoryCorrupt):
            reopened.get_history(run_id)

    def test_quarantine_isolates_only_bad_run(self, store):
        bad = _create(store, "wf-bad")
        good = _create(store, "wf-good")
        path = store.data_dir / "executions" / f"{bad}.events"
        payload = path.read_bytes()
        path.write_bytes(b"garbage\n" + payload)
        reopened = self._reopen(store)
        assert bad in reopened.corrupt_runs
        assert len(reopened.get_history(good)) == 1

    def test_random_truncation_yields_valid_batch_prefix(self, store):
        # Crash-recovery oracle: cutting the file at any byte must leave a
        # valid prefix of whole batches after reopen.
        run_id = _create(store)
        store.append(run_id, 2, [(EventKind.WORKFLOW_TASK_SCHEDULED, {})])
        store.append(
            run_id,
            3,
            [
                (EventKind.WORKFLOW_TASK_STARTED, {}),
                (EventKind.WORKFLOW_TASK_COMPLETED, {}),
                (EventKind.ACTIVITY_TASK_SCHEDULED, {"seq": 1, "activity_type": "a", "input": ""}),
            ],
        )
        path = store.data_dir / "executions" / f"{run_id}.events"
        full = path.read_bytes()
        batch_lengths = [1, 2, 5]  # events visible after each whole batch
        rng = random.Random(7)
        cuts = sorted(rng.sample(range(len(full) + 1), min(40, len(full) + 1)))
        for cut in cuts:
            path.write_bytes(full[:cut])
            reopened = HistoryStore(store.data_dir, fsync=False)
            if run_id in reopened.corrupt_runs:
                pytest.fail(f"cut at {cut} quarantined the run")
            try:
                events = reopened.get_history(run_id)
            except UnknownRun:
                events = []
            assert len(events) in (0, *batch_lengths)
        path.write_bytes(full)

    def test_index_reconciled_against_files(self, store, tmp_path):
        run_id = _create(store)
        # Simulate a crash that lost the events file after the index update.
        (store.data_dir / "executions" / f"{run_id}.events").unlink()
        reopened = self._reopen(store)
        with pytest.raises(UnknownRun):
            reopened.get_history(run_id)
        # workflow_id is free again
        reopened.create_execution("order-cancel-1", "cancelTicket", "q", "{}")
