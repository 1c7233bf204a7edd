export function escapeHtml(text) {
    return String(text ?? "")
        .replaceAll("&", "&amp;")
        .replaceAll("<", "&lt;")
        .replaceAll(">", "&gt;")
        .replaceAll('"', "&quot;")
        .replaceAll("'", "&#39;");
}
export function fmtClock(tsMs) {
    if (tsMs === null || tsMs === undefined)
        return "—";
    return new Date(tsMs).toISOString().replace("T", " ").replace("Z", "");
}
/** Offset from a base timestamp, e.g. "+2.350s"; keeps completion order readable. */
export function fmtOffset(tsMs, baseMs) {
    if (tsMs === null || tsMs === undefined)
        return "—";
    return `+${((tsMs - baseMs) / 1000).toFixed(3)}s`;
}
export function fmtDuration(ms) {
    if (ms >= 60_000)
        return `${(ms / 60_000).toFixed(1)}m`;
    if (ms >= 1_000)
        return `${(ms / 1_000).toFixed(1)}s`;
    return `${ms}ms`;
}
/** Pure projection of the describe payload into badge labels. */
export function deriveBadges(info) {
    const badges = [];
    if (info.pending_items.some((item) => item.kind === "activity" && item.attempt > 1)) {
        badges.push("Retrying");
    }
    if (info.pending_items.some((item) => item.kind === "timer")) {
        badges.push("Blocked-on-timer");
    }
    if (info.status === "Failed") {
        badges.push("Failed");
    }
    if (info.workflow_task.failure_count > 0 && info.status === "Running") {
        badges.push("Task-failures");
    }
    return badges;
}
