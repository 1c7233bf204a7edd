"""duraflow: a miniature durable workflow orchestration engine.

Workflow state lives entirely in per-execution append-only event histories;
workflow code is re-executed deterministically against its history, side
effects are isolated in retried activities, and a fault harness plus trace
views make failures reproducible and debuggable.
"""

from duraflow.model import (
    ActivityTask,
    Command,
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
    WorkflowTask,
    fold_status,
    pending_items,
)
from duraflow.replay import (
    ActivityFailure,
    NonDeterminismError,
    WorkflowContext,
    WorkflowDefinition,
    WorkflowFailure,
    WorkflowTaskError,
    replay,
)

__all__ = [
    "ActivityFailure",
    "ActivityTask",
    "Command",
    "CompleteWorkflow",
    "EventKind",
    "FailWorkflow",
    "HistoryCorrupt",
    "HistoryEvent",
    "HistoryState",
    "NonDeterminismError",
    "RetryPolicy",
    "ScheduleActivity",
    "StartTimer",
    "WorkflowContext",
    "WorkflowDefinition",
    "WorkflowFailure",
    "WorkflowStatus",
    "WorkflowTask",
    "WorkflowTaskError",
    "fold_status",
    "pending_items",
    "replay",
]

__version__ = "0.1.0"
