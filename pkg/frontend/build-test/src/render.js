// Pure HTML renderers: every view is a function of API payloads, no hidden
// state, which is what makes the console testable without a browser.
import { deriveBadges, escapeHtml, fmtClock, fmtOffset } from "./format.js";
import { renderTraceGraphSvg } from "./graph.js";
export function renderExecutionsList(executions, filters) {
    const options = ["", "Running", "Completed", "Failed", "Terminated"]
        .map((status) => {
        const selected = status === filters.status ? " selected" : "";
        return `<option value="${status}"${selected}>${status || "any status"}</option>`;
    })
        .join("");
    const rows = executions
        .map((execution) => `
      <tr>
        <td><a href="#/exec/${escapeHtml(execution.run_id)}">${escapeHtml(execution.workflow_id)}</a></td>
        <td>${escapeHtml(execution.workflow_type)}</td>
        <td><span class="status status-${escapeHtml(execution.status)}">${escapeHtml(execution.status)}</span></td>
        <td>${escapeHtml(execution.task_queue)}</td>
        <td>${fmtClock(execution.start_time_ms)}</td>
        <td>${fmtClock(execution.close_time_ms)}</td>
        <td class="mono">${escapeHtml(execution.run_id)}</td>
      </tr>`)
        .join("");
    return `
  <section class="panel">
    <div class="panel-head">
      <h2>Executions</h2>
      <form id="list-filters">
        <select name="status" data-filter="status">${options}</select>
        <input name="type" data-filter="type" placeholder="workflow type"
               value="${escapeHtml(filters.workflowType)}"/>
      </form>
    </div>
    <table class="executions">
      <thead><tr><th>workflow id</th><th>type</th><th>status</th><th>queue</th>
        <th>started</th><th>closed</th><th>run id</th></tr></thead>
      <tbody>${rows || '<tr><td colspan="7" class="empty">no executions</td></tr>'}</tbody>
    </table>
  </section>`;
}
export function renderStackTracePanel(stack) {
    const rows = stack.entries
        .map((entry) => `
      <tr class="stack-${escapeHtml(entry.state)}">
        <td>${entry.seq}</td>
        <td>${escapeHtml(entry.kind)}</td>
        <td>${escapeHtml(entry.label)}</td>
        <td><span class="state state-${escapeHtml(entry.state)}">${escapeHtml(entry.state)}</span></td>
        <td>${entry.attempt}</td>
        <td>${escapeHtml(entry.last_error ?? "")}</td>
      </tr>`)
        .join("");
    return `
  <section class="panel" id="stack-trace">
    <h3>Stack trace</h3>
    <pre class="stack-text">${escapeHtml(stack.text)}</pre>
    <table>
      <thead><tr><th>seq</th><th>kind</th><th>awaiting</th><th>state</th>
        <th>attempt</th><th>last error</th></tr></thead>
      <tbody>${rows || '<tr><td colspan="6" class="empty">no pending awaits</td></tr>'}</tbody>
    </table>
  </section>`;
}
export function renderHistoryTimeline(history, baseTs) {
    const rows = history
        .map((event) => `
      <tr>
        <td>${event.event_id}</td>
        <td>${fmtOffset(event.timestamp_ms, baseTs)}</td>
        <td>${escapeHtml(event.kind)}</td>
        <td class="mono attrs">${escapeHtml(JSON.stringify(event.attrs))}</td>
      </tr>`)
        .join("");
    return `
  <section class="panel" id="history">
    <h3>History (${history.length} events)</h3>
    <table>
      <thead><tr><th>id</th><th>t</th><th>event</th><th>attributes</th></tr></thead>
      <tbody>${rows}</tbody>
    </table>
  </section>`;
}
export function renderActionBar(info) {
    const disabled = info.status !== "Running" ? " disabled" : "";
    return `
  <div class="action-bar" data-run-id="${escapeHtml(info.run_id)}">
    <form id="signal-form" class="inline-form">
      <input name="signal-name" placeholder="signal name" required${disabled}/>
      <input name="signal-payload" placeholder="payload"${disabled}/>
      <button type="submit" data-action="signal"${disabled}>signal</button>
    </form>
    <form id="terminate-form" class="inline-form">
      <input name="terminate-reason" placeholder="reason" value="operator"${disabled}/>
      <button type="submit" data-action="terminate"${disabled}>terminate</button>
    </form>
    <button data-action="nudge"${disabled}>nudge retry now</button>
  </div>`;
}
export function renderDetailPage(info, history, stack, graph) {
    const badges = deriveBadges(info)
        .map((badge) => `<span class="badge badge-${escapeHtml(badge)}">${escapeHtml(badge)}</span>`)
        .join(" ");
    const taskInfo = info.workflow_task;
    const taskLine = taskInfo.failure_count > 0
        ? `<p class="task-failures">workflow task failures: ${taskInfo.failure_count}` +
            ` — last: <code>${escapeHtml(taskInfo.last_failure ?? "")}</code></p>`
        : "";
    return `
  <section class="panel detail-head">
    <h2>${escapeHtml(info.workflow_type)} / ${escapeHtml(info.workflow_id)}
      <span class="status status-${escapeHtml(info.status)}">${escapeHtml(info.status)}</span>
      ${badges}
    </h2>
    <p class="mono">run ${escapeHtml(info.run_id)} · queue ${escapeHtml(info.task_queue)} · started ${fmtClock(info.start_time_ms)}</p>
    ${taskLine}
    ${renderActionBar(info)}
  </section>
  ${renderStackTracePanel(stack)}
  <section class="panel" id="trace-graph">
    <h3>Trace graph</h3>
    <div class="graph-scroll">${renderTraceGraphSvg(graph)}</div>
  </section>
  ${renderHistoryTimeline(history, info.start_time_ms)}`;
}
export function renderFaultConsole(faults, scenarios, report) {
    const faultRows = faults
        .map((fault) => `
      <tr>
        <td class="mono">${escapeHtml(fault.fault_id)}</td>
        <td>${escapeHtml(fault.target)}</td>
        <td>${escapeHtml(fault.kind)}</td>
        <td>${fault.enabled ? "active" : "spent"}</td>
        <td>${escapeHtml(describeFaultParams(fault))}</td>
        <td><button data-action="clear-fault" data-fault-id="${escapeHtml(fault.fault_id)}">clear</button></td>
      </tr>`)
        .join("");
    const scenarioButtons = scenarios
        .map((name) => `<button data-action="run-scenario" data-scenario="${escapeHtml(name)}">${escapeHtml(name)}</button>`)
        .join(" ");
    return `
  <section class="panel">
    <h2>Fault console</h2>
    <form id="fault-form" class="inline-form">
      <input name="fault-target" placeholder="activity type or worker id" required/>
      <select name="fault-kind">
        <option>Latency</option><option>Unavailable</option>
        <option>ErrorNTimes</option><option>CrashWorker</option>
      </select>
      <input name="fault-delay" placeholder="delay ms" type="number"/>
      <input name="fault-duration" placeholder="duration ms" type="number"/>
      <input name="fault-n" placeholder="n" type="number"/>
      <input name="fault-error" placeholder="error text"/>
      <button type="submit" data-action="inject-fault">inject</button>
    </form>
    <table>
      <thead><tr><th>id</th><th>target</th><th>kind</th><th>state</th>
        <th>params</th><th></th></tr></thead>
      <tbody>${faultRows || '<tr><td colspan="6" class="empty">no active faults</td></tr>'}</tbody>
    </table>
  </section>
  <section class="panel">
    <h3>Scenario launcher</h3>
    <div class="scenario-buttons">${scenarioButtons || "scenarios unavailable on this server"}</div>
    ${report ? renderScenarioReport(report) : ""}
  </section>`;
}
function describeFaultParams(fault) {
    switch (fault.kind) {
        case "Latency":
            return `${fault.delay_ms}ms`;
        case "Unavailable":
            return `${fault.duration_ms}ms window`;
        case "ErrorNTimes":
            return `${fault.remaining}/${fault.n} left: ${fault.error}`;
        default:
            return "";
    }
}
export function renderScenarioReport(report) {
    const outcomeClass = report.done ? `outcome-${report.outcome}` : "outcome-Running";
    const lines = report.timeline
        .map((entry) => `<li><span class="mono">${fmtOffset(entry.t_ms, report.started_at_ms)}</span> ${escapeHtml(entry.note)}</li>`)
        .join("");
    const runs = Object.entries(report.runs)
        .map(([label, runId]) => `<a href="#/exec/${escapeHtml(runId)}">${escapeHtml(label)}: ${escapeHtml(runId)}</a>`)
        .join(" · ");
    return `
  <div class="scenario-report" id="scenario-report">
    <h4>${escapeHtml(report.scenario)}
      <span class="outcome ${outcomeClass}">${escapeHtml(report.done ? report.outcome : "running…")}</span>
    </h4>
    <ol class="timeline">${lines}</ol>
    <p>${runs}</p>
  </div>`;
}
export function renderError(message) {
    return `<div class="toast error">${escapeHtml(message)}</div>`;
}
