// Thin client over the engine API. Every console action maps 1:1 to one of
// these calls; fetch is injectable so tests can verify the exact requests.
export class ApiError extends Error {
    status;
    code;
    constructor(status, code, message) {
        super(message);
        this.status = status;
        this.code = code;
    }
}
export class ApiClient {
    base;
    fetchFn;
    constructor(baseUrl = "", fetchFn) {
        this.base = baseUrl.replace(/\/$/, "");
        this.fetchFn = fetchFn ?? ((url, init) => fetch(url, init));
    }
    async request(method, path, body) {
        const init = { method };
        if (body !== undefined) {
            init.headers = { "Content-Type": "application/json" };
            init.body = JSON.stringify(body);
        }
        const response = await this.fetchFn(`${this.base}/api/v1${path}`, init);
        if (response.status === 204) {
            return undefined;
        }
        const payload = await response.json().catch(() => ({}));
        if (!response.ok) {
            const error = payload.error ?? {};
            throw new ApiError(response.status, error.code ?? "UnknownError", error.message ?? `HTTP ${response.status}`);
        }
        return payload;
    }
    listExecutions(status, workflowType) {
        const params = new URLSearchParams();
        if (status)
            params.set("status", status);
        if (workflowType)
            params.set("type", workflowType);
        const query = params.toString();
        return this.request("GET", `/workflows${query ? `?${query}` : ""}`).then((r) => r.executions);
    }
    describe(runId) {
        return this.request("GET", `/workflows/${encodeURIComponent(runId)}`);
    }
    history(runId) {
        return this.request("GET", `/workflows/${encodeURIComponent(runId)}/history`).then((r) => r.events);
    }
    stackTrace(runId) {
        return this.request("GET", `/workflows/${encodeURIComponent(runId)}/stack-trace`);
    }
    traceGraph(runId) {
        return this.request("GET", `/workflows/${encodeURIComponent(runId)}/trace-graph`);
    }
    signal(runId, name, payload) {
        return this.request("POST", `/workflows/${encodeURIComponent(runId)}/signal`, {
            name,
            payload,
        });
    }
    terminate(runId, reason) {
        return this.request("POST", `/workflows/${encodeURIComponent(runId)}/terminate`, {
            reason,
        });
    }
    nudge(runId) {
        return this.request("POST", `/workflows/${encodeURIComponent(runId)}/nudge`, {});
    }
    listFaults() {
        return this.request("GET", "/faults").then((r) => r.faults);
    }
    injectFault(spec) {
        return this.request("POST", "/faults", spec).then((r) => r.fault_id);
    }
    clearFault(faultId) {
        return this.request("DELETE", `/faults/${encodeURIComponent(faultId)}`);
    }
    listScenarios() {
        return this.request("GET", "/scenarios").then((r) => r.scenarios);
    }
    runScenario(name) {
        return this.request("POST", `/scenarios/${encodeURIComponent(name)}:run`, {}).then((r) => r.scenario_run_id);
    }
    scenarioReport(scenarioRunId) {
        return this.request("GET", `/scenarios/runs/${encodeURIComponent(scenarioRunId)}`);
    }
}
