// Thin client over the engine API. Every console action maps 1:1 to one of
// these calls; fetch is injectable so tests can verify the exact requests.

import type {
  DescribeResponse,
  ExecutionSummary,
  FaultRecord,
  FaultRequest,
  HistoryEventRecord,
  ScenarioReportPayload,
  StackTraceResponse,
  TraceGraphResponse,
} from "./types.js";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    public readonly status: number,
    public readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

export class ApiClient {
  private readonly base: string;
  private readonly fetchFn: FetchLike;

  constructor(baseUrl: string = "", fetchFn?: FetchLike) {
    this.base = baseUrl.replace(/\/$/, "");
    this.fetchFn = fetchFn ?? ((url, init) => fetch(url, init));
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "Content-Type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const response = await this.fetchFn(`${this.base}/api/v1${path}`, init);
    if (response.status === 204) {
      return undefined as T;
    }
    const payload = await response.json().catch(() => ({}));
    if (!response.ok) {
      const error = (payload as { error?: { code?: string; message?: string } }).error ?? {};
      throw new ApiError(
        response.status,
        error.code ?? "UnknownError",
        error.message ?? `HTTP ${response.status}`,
      );
    }
    return payload as T;
  }

  listExecutions(status?: string, workflowType?: string): Promise<ExecutionSummary[]> {
    const params = new URLSearchParams();
    if (status) params.set("status", status);
    if (workflowType) params.set("type", workflowType);
    const query = params.toString();
    return this.request<{ executions: ExecutionSummary[] }>(
      "GET",
      `/workflows${query ? `?${query}` : ""}`,
    ).then((r) => r.executions);
  }

  describe(runId: string): Promise<DescribeResponse> {
    return this.request("GET", `/workflows/${encodeURIComponent(runId)}`);
  }

  history(runId: string): Promise<HistoryEventRecord[]> {
    return this.request<{ events: HistoryEventRecord[] }>(
      "GET",
      `/workflows/${encodeURIComponent(runId)}/history`,
    ).then((r) => r.events);
  }

  stackTrace(runId: string): Promise<StackTraceResponse> {
    return this.request("GET", `/workflows/${encodeURIComponent(runId)}/stack-trace`);
  }

  traceGraph(runId: string): Promise<TraceGraphResponse> {
    return this.request("GET", `/workflows/${encodeURIComponent(runId)}/trace-graph`);
  }

  signal(runId: string, name: string, payload: string): Promise<void> {
    return this.request("POST", `/workflows/${encodeURIComponent(runId)}/signal`, {
      name,
      payload,
    });
  }

  terminate(runId: string, reason: string): Promise<void> {
    return this.request("POST", `/workflows/${encodeURIComponent(runId)}/terminate`, {
      reason,
    });
  }

  nudge(runId: string): Promise<void> {
    return this.request("POST", `/workflows/${encodeURIComponent(runId)}/nudge`, {});
  }

  listFaults(): Promise<FaultRecord[]> {
    return this.request<{ faults: FaultRecord[] }>("GET", "/faults").then((r) => r.faults);
  }

  injectFault(spec: FaultRequest): Promise<string> {
    return this.request<{ fault_id: string }>("POST", "/faults", spec).then(
      (r) => r.fault_id,
    );
  }

  clearFault(faultId: string): Promise<void> {
    return this.request("DELETE", `/faults/${encodeURIComponent(faultId)}`);
  }

  listScenarios(): Promise<string[]> {
    return this.request<{ scenarios: string[] }>("GET", "/scenarios").then(
      (r) => r.scenarios,
    );
  }

  runScenario(name: string): Promise<string> {
    return this.request<{ scenario_run_id: string }>(
      "POST",
      `/scenarios/${encodeURIComponent(name)}:run`,
      {},
    ).then((r) => r.scenario_run_id);
  }

  scenarioReport(scenarioRunId: string): Promise<ScenarioReportPayload> {
    return this.request("GET", `/scenarios/runs/${encodeURIComponent(scenarioRunId)}`);
  }
}
