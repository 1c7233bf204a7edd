// Wire types for the engine's /api/v1 JSON payloads. The console renders
// these verbatim; it never invents client-side state.

export type WorkflowStatus = "Running" | "Completed" | "Failed" | "Terminated";

export interface ExecutionSummary {
  workflow_id: string;
  run_id: string;
  workflow_type: string;
  task_queue: string;
  status: WorkflowStatus;
  start_time_ms: number;
  close_time_ms: number | null;
}

export interface PendingItem {
  seq: number;
  kind: "activity" | "timer";
  scheduled_event_id: number;
  attempt: number;
  label: string;
  since_ts: number;
  last_error: string | null;
}

export interface WorkflowTaskInfo {
  failure_count: number;
  last_failure: string | null;
  scheduled: boolean;
  running: boolean;
}

export interface DescribeResponse extends ExecutionSummary {
  history_length: number;
  pending_items: PendingItem[];
  workflow_task: WorkflowTaskInfo;
}

export interface HistoryEventRecord {
  event_id: number;
  timestamp_ms: number;
  kind: string;
  attrs: Record<string, unknown>;
}

export interface StackEntry {
  seq: number;
  kind: "activity" | "timer";
  label: string;
  state: "Scheduled" | "Started" | "Retrying";
  attempt: number;
  waiting_since: number;
  last_error: string | null;
}

export interface StackTraceResponse {
  run_id: string;
  workflow_type: string;
  status: WorkflowStatus;
  entries: StackEntry[];
  text: string;
}

export type NodeStatus = "scheduled" | "running" | "completed" | "failed" | "fired";

export interface TraceNode {
  id: string;
  kind: "workflow" | "activity" | "timer" | "signal";
  label: string;
  status: NodeStatus;
  start_ts: number;
  end_ts: number | null;
  attempt: number;
  last_error: string | null;
  first_failure_ts: number | null;
}

export interface TraceEdge {
  from: string;
  to: string;
}

export interface TraceGraphResponse {
  run_id: string;
  nodes: TraceNode[];
  edges: TraceEdge[];
}

export interface FaultRecord {
  fault_id: string;
  target: string;
  kind: "Latency" | "Unavailable" | "ErrorNTimes" | "CrashWorker";
  enabled: boolean;
  delay_ms: number;
  duration_ms: number;
  n: number;
  error: string;
  injected_at_ms: number;
  remaining: number;
}

export interface FaultRequest {
  target: string;
  kind: string;
  delay_ms?: number;
  duration_ms?: number;
  n?: number;
  error?: string;
}

export interface TimelineNote {
  t_ms: number;
  note: string;
}

export interface ScenarioReportPayload {
  scenario: string;
  outcome: string;
  timeline: TimelineNote[];
  runs: Record<string, string>;
  details: Record<string, unknown>;
  started_at_ms: number;
  finished_at_ms: number | null;
  done?: boolean;
}
