// Browser wiring: hash routing, 1s poll-based refresh, and event handlers
// that forward every user action to exactly one API call.
import { ApiClient, ApiError } from "./api.js";
import { renderDetailPage, renderError, renderExecutionsList, renderFaultConsole, } from "./render.js";
const API_BASE_URL = window.API_BASE_URL ?? "";
const REFRESH_MS = 1_000;
const api = new ApiClient(API_BASE_URL);
const app = document.getElementById("app");
const state = {
    filters: { status: "", workflowType: "" },
    scenarioRunId: null,
    scenarioReport: null,
    refreshToken: 0,
};
function currentRoute() {
    const hash = window.location.hash || "#/";
    const execMatch = hash.match(/^#\/exec\/(.+)$/);
    if (execMatch)
        return { page: "detail", runId: decodeURIComponent(execMatch[1]) };
    if (hash.startsWith("#/faults"))
        return { page: "faults" };
    return { page: "list" };
}
function showError(error) {
    const message = error instanceof ApiError ? `${error.code}: ${error.message}` : String(error);
    const toast = document.createElement("div");
    toast.innerHTML = renderError(message);
    document.body.appendChild(toast);
    setTimeout(() => toast.remove(), 4_000);
}
async function refresh() {
    const token = ++state.refreshToken;
    const route = currentRoute();
    try {
        let html;
        if (route.page === "detail" && route.runId) {
            const [info, history, stack, graph] = await Promise.all([
                api.describe(route.runId),
                api.history(route.runId),
                api.stackTrace(route.runId),
                api.traceGraph(route.runId),
            ]);
            html = renderDetailPage(info, history, stack, graph);
        }
        else if (route.page === "faults") {
            if (state.scenarioRunId) {
                state.scenarioReport = await api.scenarioReport(state.scenarioRunId);
            }
            const [faults, scenarios] = await Promise.all([
                api.listFaults(),
                api.listScenarios(),
            ]);
            html = renderFaultConsole(faults, scenarios, state.scenarioReport);
        }
        else {
            const executions = await api.listExecutions(state.filters.status || undefined, state.filters.workflowType || undefined);
            html = renderExecutionsList(executions, state.filters);
        }
        if (token === state.refreshToken) {
            preserveFormFocus(() => {
                app.innerHTML = html;
            });
        }
    }
    catch (error) {
        if (token === state.refreshToken)
            showError(error);
    }
}
/** Re-rendering every second would eat form input; skip the swap while the
 * user is typing into one of our forms. */
function preserveFormFocus(swap) {
    const active = document.activeElement;
    if (active instanceof HTMLInputElement || active instanceof HTMLSelectElement) {
        return;
    }
    swap();
}
function value(form, name) {
    const input = form.querySelector(`[name="${name}"]`);
    return input?.value ?? "";
}
document.addEventListener("submit", async (event) => {
    const form = event.target;
    event.preventDefault();
    try {
        if (form.id === "signal-form" || form.id === "terminate-form") {
            const runId = form.closest(".action-bar")?.getAttribute("data-run-id");
            if (!runId)
                return;
            if (form.id === "signal-form") {
                await api.signal(runId, value(form, "signal-name"), value(form, "signal-payload"));
            }
            else {
                await api.terminate(runId, value(form, "terminate-reason"));
            }
        }
        else if (form.id === "fault-form") {
            await api.injectFault({
                target: value(form, "fault-target"),
                kind: value(form, "fault-kind"),
                delay_ms: Number(value(form, "fault-delay") || 0),
                duration_ms: Number(value(form, "fault-duration") || 0),
                n: Number(value(form, "fault-n") || 0),
                error: value(form, "fault-error") || "injected fault",
            });
        }
        else if (form.id === "list-filters") {
            state.filters = {
                status: value(form, "status"),
                workflowType: value(form, "type"),
            };
        }
        await refresh();
    }
    catch (error) {
        showError(error);
    }
});
document.addEventListener("change", (event) => {
    const target = event.target;
    if (target.matches("[data-filter]")) {
        const form = target.closest("form");
        if (form) {
            state.filters = {
                status: value(form, "status"),
                workflowType: value(form, "type"),
            };
            void refresh();
        }
    }
});
document.addEventListener("click", async (event) => {
    const target = event.target.closest("[data-action]");
    if (!(target instanceof HTMLElement))
        return;
    const action = target.getAttribute("data-action");
    if (action === "signal" || action === "terminate" || action === "inject-fault") {
        return; // handled via form submit
    }
    event.preventDefault();
    try {
        if (action === "nudge") {
            const runId = target.closest(".action-bar")?.getAttribute("data-run-id");
            if (runId)
                await api.nudge(runId);
        }
        else if (action === "clear-fault") {
            const faultId = target.getAttribute("data-fault-id");
            if (faultId)
                await api.clearFault(faultId);
        }
        else if (action === "run-scenario") {
            const name = target.getAttribute("data-scenario");
            if (name) {
                state.scenarioRunId = await api.runScenario(name);
                state.scenarioReport = null;
            }
        }
        await refresh();
    }
    catch (error) {
        showError(error);
    }
});
window.addEventListener("hashchange", () => void refresh());
setInterval(() => void refresh(), REFRESH_MS);
void refresh();
