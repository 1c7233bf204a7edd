"""Durable, append-only, crash-safe storage of per-execution event histories.

Layout under the data directory:

    executions/<run_id>.events   one JSON record per line:
                                 {event_id, timestamp_ms, kind, attrs}
    index.json                   {workflow_id: [run_id, ...]} in creation order

Histories are the single source of truth; the index only serves uniqueness
checks and listing, and is reconciled against the event files on open. The
last record of every append batch carries an "eob" marker so that a torn
write can never surface a partially-durable batch: recovery truncates the
file back to the last complete batch.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import uuid
from pathlib import Path
from typing import Any, Iterable

from duraflow.model import (
    EngineError,
    EventKind,
    ExecutionSummary,
    HistoryCorrupt,
    HistoryEvent,
    HistoryState,
    WorkflowStatus,
    now_ms,
)

log = logging.getLogger(__name__)


class StorageFailure(EngineError):
    code = "StorageFailure"


class UnknownRun(EngineError):
    code = "UnknownRun"


class AlreadyRunning(EngineError):
    code = "AlreadyRunning"

    def __init__(self, workflow_id: str, run_id: str):
        super().__init__(f"workflow_id {workflow_id!r} already has running execution {run_id}")
        self.workflow_id = workflow_id
        self.run_id = run_id


class VersionConflict(EngineError):
    code = "VersionConflict"

    def __init__(self, actual_next_event_id: int):
        super().__init__(f"expected_next_event_id stale; actual is {actual_next_event_id}")
        self.actual_next_event_id = actual_next_event_id


class TerminalHistory(EngineError):
    code = "TerminalHistory"


class HistoryStore:
    """File-backed event history store with conditional (single-writer) append."""

    def __init__(self, data_dir: str | Path, fsync: bool = True):
        self.data_dir = Path(data_dir)
        self.fsync = fsync
        self._executions_dir = self.data_dir / "executions"
        self._index_path = self.data_dir / "index.json"
        self._executions_dir.mkdir(parents=True, exist_ok=True)

        self._mutex = threading.Lock()  # guards index + cache/lock maps
        self._run_locks: dict[str, threading.Lock] = {}
        self._cache: dict[str, list[HistoryEvent]] = {}
        self._index: dict[str, list[str]] = {}
        self.corrupt_runs: dict[str, str] = {}

        self._load()

    # -- open-time recovery ---------------------------------------------------

    def _load(self) -> None:
        if self._index_path.exists():
            try:
                self._index = {
                    str(k): [str(r) for r in v]
                    for k, v in json.loads(self._index_path.read_text()).items()
                }
            except (json.JSONDecodeError, AttributeError) as exc:
                raise StorageFailure(f"index.json unreadable: {exc}") from exc

        on_disk: set[str] = set()
        for path in sorted(self._executions_dir.glob("*.events")):
            run_id = path.stem
            on_disk.add(run_id)
            try:
                events = self._recover_file(path)
                HistoryState.from_events(events)
            except HistoryCorrupt as exc:
                log.warning("run %s quarantined: %s", run_id, exc)
                self.corrupt_runs[run_id] = str(exc)
                continue
            if not events:
                # create_execution died before writing the started event
                path.unlink()
                on_disk.discard(run_id)
                continue
            self._cache[run_id] = events

        # Reconcile: drop index entries without a file, adopt orphan files.
        indexed = {r for runs in self._index.values() for r in runs}
        changed = False
        for workflow_id, runs in list(self._index.items()):
            kept = [r for r in runs if r in on_disk]
            if kept != runs:
                self._index[workflow_id] = kept
                changed = True
            if not kept:
                del self._index[workflow_id]
        for run_id, events in self._cache.items():
            if run_id not in indexed:
                workflow_id = events[0].attrs.get("workflow_id", "")
                if workflow_id:
                    self._index.setdefault(workflow_id, []).append(run_id)
                    changed = True
        if changed:
            self._write_index()

    def _recover_file(self, path: Path) -> list[HistoryEvent]:
        """Load one event file, truncating any torn (unacknowledged) tail.

        A record is only durable once its batch's eob marker line is complete;
        everything after the last complete batch is discarded. A malformed
        record with further data behind it is real corruption, not a torn
        write, and quarantines the run.
        """
        raw = path.read_bytes()
        events: list[HistoryEvent] = []
        batch: list[HistoryEvent] = []
        keep_bytes = 0
        offset = 0
        while offset < len(raw):
            newline = raw.find(b"\n", offset)
            if newline == -1:
                break  # torn trailing record
            line = raw[offset:newline]
            offset = newline + 1
            try:
                record = json.loads(line)
                event = HistoryEvent.from_record(record)
            except (json.JSONDecodeError, HistoryCorrupt) as exc:
                if offset < len(raw):
                    raise HistoryCorrupt(f"garbage record mid-file in {path.name}: {exc}")
                break  # complete-looking but unparseable final line: treat as torn
            batch.append(event)
            if record.get("eob"):
                events.extend(batch)
                batch = []
                keep_bytes = offset
        if keep_bytes < len(raw):
            with path.open("r+b") as fh:
                fh.truncate(keep_bytes)
                self._sync(fh)
        return events

    # -- helpers ---------------------------------------------------------------

    def _sync(self, fh) -> None:
        fh.flush()
        if self.fsync:
            os.fsync(fh.fileno())

    def _run_path(self, run_id: str) -> Path:
        return self._executions_dir / f"{run_id}.events"

    def _run_lock(self, run_id: str) -> threading.Lock:
        with self._mutex:
            return self._run_locks.setdefault(run_id, threading.Lock())

    def _write_index(self) -> None:
        tmp = self._index_path.with_suffix(".json.tmp")
        with tmp.open("w") as fh:
            json.dump(self._index, fh, indent=0, sort_keys=True)
            self._sync(fh)
        os.replace(tmp, self._index_path)

    def _write_events(self, path: Path, events: list[HistoryEvent]) -> None:
        lines = []
        for i, event in enumerate(events):
            record = event.to_record()
            if i == len(events) - 1:
                record["eob"] = 1
            lines.append(json.dumps(record, separators=(",", ":")))
        data = ("\n".join(lines) + "\n").encode()
        try:
            with path.open("ab") as fh:
                fh.write(data)
                self._sync(fh)
        except OSError as exc:
            raise StorageFailure(f"append to {path} failed: {exc}") from exc

    # -- operations -------------------------------------------------------------

    def create_execution(
        self,
        workflow_id: str,
        workflow_type: str,
        task_queue: str,
        input_payload: str,
        run_id: str | None = None,
    ) -> str:
        """Create a new execution history holding exactly the started event."""
        if not workflow_id:
            raise ValueError("workflow_id must be non-empty")
        run_id = run_id or uuid.uuid4().hex
        with self._mutex:
            for existing in self._index.get(workflow_id, []):
                events = self._cache.get(existing)
                if events and HistoryState.from_events(events).is_running:
                    raise AlreadyRunning(workflow_id, existing)
            started = HistoryEvent(
                event_id=1,
                timestamp_ms=now_ms(),
                kind=EventKind.WORKFLOW_EXECUTION_STARTED,
                attrs={
                    "workflow_type": workflow_type,
                    "input": input_payload,
                    "task_queue": task_queue,
                    "workflow_id": workflow_id,
                },
            )
            self._write_events(self._run_path(run_id), [started])
            self._cache[run_id] = [started]
            self._index.setdefault(workflow_id, []).append(run_id)
            self._write_index()
        return run_id

    def append(
        self,
        run_id: str,
        expected_next_event_id: int,
        new_events: Iterable[tuple[EventKind, dict[str, Any]]],
    ) -> int:
        """Conditionally append a batch; durable before return.

        Returns the next event id after the append. Exactly one writer wins
        under concurrent appends with the same expectation.
        """
        batch = list(new_events)
        if not batch:
            raise ValueError("append requires a non-empty batch")
        with self._run_lock(run_id):
            events = self._cache.get(run_id)
            if events is None:
                self._raise_unknown(run_id)
            actual_next = len(events) + 1
            if expected_next_event_id != actual_next:
                raise VersionConflict(actual_next)
            state = HistoryState.from_events(events)
            if not state.is_running:
                raise TerminalHistory(f"run {run_id} is {state.status.value}")
            ts = now_ms()
            materialized = [
                HistoryEvent(event_id=actual_next + i, timestamp_ms=ts, kind=kind, attrs=attrs)
                for i, (kind, attrs) in enumerate(batch)
            ]
            for event in materialized:
                state.apply(event)  # reject illegal batches before touching disk
            self._write_events(self._run_path(run_id), materialized)
            events.extend(materialized)
            return state.next_event_id

    def _raise_unknown(self, run_id: str) -> None:
        if run_id in self.corrupt_runs:
            raise HistoryCorrupt(f"run {run_id} quarantined: {self.corrupt_runs[run_id]}")
        raise UnknownRun(f"no execution with run_id {run_id!r}")

    def get_history(self, run_id: str, from_event_id: int = 1) -> list[HistoryEvent]:
        with self._run_lock(run_id):
            events = self._cache.get(run_id)
            if events is None:
                self._raise_unknown(run_id)
            if from_event_id <= 1:
                return list(events)
            return [e for e in events if e.event_id >= from_event_id]

    def get_state(self, run_id: str) -> HistoryState:
        return HistoryState.from_events(self.get_history(run_id))

    def run_ids(self) -> list[str]:
        with self._mutex:
            return sorted(self._cache)

    def workflow_id_for(self, run_id: str) -> str:
        events = self.get_history(run_id)
        return events[0].attrs.get("workflow_id", "")

    def latest_run(self, workflow_id: str) -> str | None:
        with self._mutex:
            runs = self._index.get(workflow_id)
            return runs[-1] if runs else None

    def list_executions(
        self,
        status: WorkflowStatus | None = None,
        workflow_type: str | None = None,
    ) -> list[ExecutionSummary]:
        summaries = []
        for run_id in self.run_ids():
            try:
                state = self.get_state(run_id)
            except (UnknownRun, HistoryCorrupt):
                continue
            if status is not None and state.status is not status:
                continue
            if workflow_type is not None and state.workflow_type != workflow_type:
                continue
            summaries.append(state.summary(run_id))
        summaries.sort(key=lambda s: (s.start_time_ms, s.run_id))
        return summaries
