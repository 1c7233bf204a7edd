"""Debugging views derived from a history: where a workflow is blocked
(stack trace) and what ran when (trace graph). Pure functions of the history;
equal histories give identical output."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from duraflow.model import (
    EventKind,
    HistoryEvent,
    WorkflowStatus,
    validate_history,
)


@dataclass(frozen=True)
class StackEntry:
    seq: int
    kind: str  # "activity" | "timer"
    label: str
    state: str  # "Scheduled" | "Started" | "Retrying"
    attempt: int
    waiting_since: int
    last_error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "kind": self.kind,
            "label": self.label,
            "state": self.state,
            "attempt": self.attempt,
            "waiting_since": self.waiting_since,
            "last_error": self.last_error,
        }


@dataclass
class StackTrace:
    workflow_type: str
    status: WorkflowStatus
    entries: list[StackEntry] = field(default_factory=list)

    def render(self) -> str:
        if not self.entries:
            return f"{self.workflow_type}: no pending awaits ({self.status.value})"
        lines = []
        for entry in self.entries:
            line = (
                f"{self.workflow_type}@{entry.seq}: awaiting {entry.label} "
                f"(attempt {entry.attempt})"
            )
            if entry.state == "Retrying" and entry.last_error:
                line += f" [retrying after: {entry.last_error}]"
            lines.append(line)
        return "\n".join(lines)

    def to_dict(self) -> dict[str, Any]:
        return {
            "workflow_type": self.workflow_type,
            "status": self.status.value,
            "entries": [e.to_dict() for e in self.entries],
            "text": self.render(),
        }


def build_stack_trace(history: list[HistoryEvent]) -> StackTrace:
    """Pending awaits enriched with attempt state and the most recent error."""
    state = validate_history(history)
    trace = StackTrace(workflow_type=state.workflow_type, status=state.status)
    if not state.is_running:
        return trace

    for activity in state.activities.values():
        if activity.closed:
            continue
        if activity.nonfinal_failure_count > 0:
            entry_state = "Retrying"
        elif activity.current_attempt in activity.started_attempts:
            entry_state = "Started"
        else:
            entry_state = "Scheduled"
        last = activity.last_failure
        trace.entries.append(
            StackEntry(
                seq=activity.seq,
                kind="activity",
                label=activity.activity_type,
                state=entry_state,
                attempt=activity.current_attempt,
                waiting_since=activity.scheduled_ts,
                last_error=last.error if last else None,
            )
        )
    for timer in state.timers.values():
        if timer.fired:
            continue
        trace.entries.append(
            StackEntry(
                seq=timer.seq,
                kind="timer",
                label=f"timer({timer.duration_ms}ms)",
                state="Started",
                attempt=1,
                waiting_since=timer.started_ts,
            )
        )
    trace.entries.sort(key=lambda e: e.seq)
    return trace


@dataclass(frozen=True)
class TraceNode:
    id: str
    kind: str  # "workflow" | "activity" | "timer" | "signal"
    label: str
    status: str  # "scheduled" | "running" | "completed" | "failed" | "fired"
    start_ts: int
    end_ts: int | None = None
    attempt: int = 1
    last_error: str | None = None
    first_failure_ts: int | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "kind": self.kind,
            "label": self.label,
            "status": self.status,
            "start_ts": self.start_ts,
            "end_ts": self.end_ts,
            "attempt": self.attempt,
            "last_error": self.last_error,
            "first_failure_ts": self.first_failure_ts,
        }


@dataclass
class TraceGraph:
    nodes: list[TraceNode] = field(default_factory=list)
    edges: list[tuple[str, str]] = field(default_factory=list)

    def node(self, node_id: str) -> TraceNode:
        for node in self.nodes:
            if node.id == node_id:
                return node
        raise KeyError(node_id)

    def node_by_label(self, label: str) -> TraceNode:
        for node in self.nodes:
            if node.label == label:
                return node
        raise KeyError(label)

    def to_dict(self) -> dict[str, Any]:
        return {
            "nodes": [n.to_dict() for n in self.nodes],
            "edges": [{"from": a, "to": b} for a, b in self.edges],
        }


_WORKFLOW_NODE_STATUS = {
    WorkflowStatus.RUNNING: "running",
    WorkflowStatus.COMPLETED: "completed",
    WorkflowStatus.FAILED: "failed",
    WorkflowStatus.TERMINATED: "failed",
}


def _activity_node(activity) -> TraceNode:
    if activity.completed:
        status = "completed"
        end_ts = activity.completed_ts
    elif activity.failures:
        status = "failed"
        end_ts = activity.failures[-1].timestamp_ms if activity.finally_failed else None
    elif activity.current_attempt in activity.started_attempts:
        status = "running"
        end_ts = None
    else:
        status = "scheduled"
        end_ts = None
    last = activity.last_failure
    return TraceNode(
        id=f"act:{activity.seq}",
        kind="activity",
        label=activity.activity_type,
        status=status,
        start_ts=activity.scheduled_ts,
        end_ts=end_ts,
        attempt=activity.current_attempt,
        last_error=last.error if last else None,
        first_failure_ts=activity.failures[0].timestamp_ms if activity.failures else None,
    )


def build_trace_graph(history: list[HistoryEvent]) -> TraceGraph:
    """DAG of everything the execution scheduled, wired by completion order.

    Items scheduled in the same command batch are siblings; their
    predecessors are whichever items completed (or fired) since the previous
    batch, falling back to the workflow node itself.
    """
    state = validate_history(history)
    graph = TraceGraph()

    graph.nodes.append(
        TraceNode(
            id="wf",
            kind="workflow",
            label=state.workflow_type or "workflow",
            status=_WORKFLOW_NODE_STATUS[state.status],
            start_ts=state.start_time_ms,
            end_ts=state.close_time_ms,
        )
    )

    # Nodes in schedule (event) order so the graph layers left-to-right.
    for event in history:
        if event.kind is EventKind.ACTIVITY_TASK_SCHEDULED:
            graph.nodes.append(_activity_node(state.activities[event.attrs["seq"]]))
        elif event.kind is EventKind.TIMER_STARTED:
            timer = state.timers[event.attrs["seq"]]
            graph.nodes.append(
                TraceNode(
                    id=f"timer:{timer.seq}",
                    kind="timer",
                    label=f"timer({timer.duration_ms}ms)",
                    status="fired" if timer.fired else "scheduled",
                    start_ts=timer.started_ts,
                    end_ts=timer.started_ts + timer.duration_ms if timer.fired else None,
                )
            )
        elif event.kind is EventKind.WORKFLOW_EXECUTION_SIGNALED:
            graph.nodes.append(
                TraceNode(
                    id=f"sig:{event.event_id}",
                    kind="signal",
                    label=str(event.attrs.get("signal_name", "")),
                    status="fired",
                    start_ts=event.timestamp_ms,
                    end_ts=event.timestamp_ms,
                )
            )

    # Edges: walk the history batching consecutive schedule events.
    frontier: list[str] = ["wf"]
    completed_since: list[str] = []
    in_batch = False
    for event in history:
        if event.kind in (EventKind.ACTIVITY_TASK_SCHEDULED, EventKind.TIMER_STARTED):
            if not in_batch:
                in_batch = True
                if completed_since:
                    frontier = completed_since
                    completed_since = []
            prefix = "act" if event.kind is EventKind.ACTIVITY_TASK_SCHEDULED else "timer"
            node_id = f"{prefix}:{event.attrs['seq']}"
            for source in frontier:
                graph.edges.append((source, node_id))
            continue
        in_batch = False
        if event.kind is EventKind.ACTIVITY_TASK_COMPLETED:
            completed_since.append(f"act:{event.attrs['seq']}")
        elif event.kind is EventKind.ACTIVITY_TASK_FAILED and event.attrs.get("is_final"):
            completed_since.append(f"act:{event.attrs['seq']}")
        elif event.kind is EventKind.TIMER_FIRED:
            completed_since.append(f"timer:{event.attrs['seq']}")
        elif event.kind is EventKind.WORKFLOW_EXECUTION_SIGNALED:
            graph.edges.append(("wf", f"sig:{event.event_id}"))
    return graph


_DOT_COLORS = {
    "completed": "palegreen",
    "fired": "palegreen",
    "failed": "lightcoral",
    "running": "lightgray",
    "scheduled": "lightgray",
}

_DOT_SHAPES = {
    "workflow": "box",
    "activity": "ellipse",
    "timer": "diamond",
    "signal": "cds",
}


def export_dot(graph: TraceGraph) -> str:
    """Render the trace graph as DOT with status-colored nodes."""

    def escape(text: str) -> str:
        return text.replace("\\", "\\\\").replace('"', '\\"')

    lines = ["digraph trace {", "  rankdir=LR;"]
    for node in graph.nodes:
        parts = [node.label, node.status]
        if node.kind == "activity" and node.attempt > 1:
            parts.append(f"attempt {node.attempt}")
        label = "\\n".join(escape(part) for part in parts)
        lines.append(
            f'  "{escape(node.id)}" [label="{label}" shape={_DOT_SHAPES[node.kind]} '
            f"style=filled fillcolor={_DOT_COLORS[node.status]}];"
        )
    for source, target in graph.edges:
        lines.append(f'  "{escape(source)}" -> "{escape(target)}";')
    lines.append("}")
    return "\n".join(lines)
