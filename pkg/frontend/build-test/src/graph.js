// Trace graph layout and SVG rendering. Layered left to right by event
// order (longest path from the workflow node), statuses color-coded, and
// completion timestamps shown so ordering bugs are visible at a glance.
import { escapeHtml, fmtOffset } from "./format.js";
export const STATUS_FILL = {
    completed: "#91da9b",
    fired: "#91da9b",
    failed: "#f08f85",
    running: "#cdd3d8",
    scheduled: "#cdd3d8",
};
const NODE_W = 188;
const NODE_H = 66;
const COL_GAP = 70;
const ROW_GAP = 26;
const MARGIN = 24;
export function layoutTraceGraph(graph) {
    const depth = new Map();
    for (const node of graph.nodes) {
        depth.set(node.id, 0);
    }
    // Edges always point from earlier-scheduled to later-scheduled nodes, so a
    // couple of passes reach the longest-path fixpoint even defensively.
    for (let pass = 0; pass < graph.nodes.length + 1; pass += 1) {
        let changed = false;
        for (const edge of graph.edges) {
            const candidate = (depth.get(edge.from) ?? 0) + 1;
            if (candidate > (depth.get(edge.to) ?? 0)) {
                depth.set(edge.to, candidate);
                changed = true;
            }
        }
        if (!changed)
            break;
    }
    const rowsUsed = new Map();
    const nodes = graph.nodes.map((node) => {
        const column = depth.get(node.id) ?? 0;
        const row = rowsUsed.get(column) ?? 0;
        rowsUsed.set(column, row + 1);
        return {
            node,
            column,
            row,
            x: MARGIN + column * (NODE_W + COL_GAP),
            y: MARGIN + row * (NODE_H + ROW_GAP),
        };
    });
    const columns = Math.max(0, ...nodes.map((n) => n.column)) + 1;
    const rows = Math.max(1, ...Array.from(rowsUsed.values()));
    return {
        nodes,
        edges: graph.edges.map((e) => ({ from: e.from, to: e.to })),
        width: MARGIN * 2 + columns * NODE_W + (columns - 1) * COL_GAP,
        height: MARGIN * 2 + rows * NODE_H + (rows - 1) * ROW_GAP,
    };
}
function nodeTimingLine(node, baseTs) {
    if (node.status === "failed" && node.first_failure_ts !== null) {
        return `first failure ${fmtOffset(node.first_failure_ts, baseTs)}`;
    }
    if (node.end_ts !== null) {
        return `done ${fmtOffset(node.end_ts, baseTs)}`;
    }
    return `since ${fmtOffset(node.start_ts, baseTs)}`;
}
export function renderTraceGraphSvg(graph) {
    const layout = layoutTraceGraph(graph);
    const byId = new Map(layout.nodes.map((p) => [p.node.id, p]));
    const baseTs = graph.nodes.find((n) => n.kind === "workflow")?.start_ts ?? 0;
    const parts = [];
    parts.push(`<svg class="trace-graph" viewBox="0 0 ${layout.width} ${layout.height}" ` +
        `width="${layout.width}" height="${layout.height}" xmlns="http://www.w3.org/2000/svg">`);
    parts.push('<defs><marker id="arrow" viewBox="0 0 10 10" refX="9" refY="5" ' +
        'markerWidth="7" markerHeight="7" orient="auto-start-reverse">' +
        '<path d="M 0 0 L 10 5 L 0 10 z" fill="#7a8288"/></marker></defs>');
    for (const edge of layout.edges) {
        const from = byId.get(edge.from);
        const to = byId.get(edge.to);
        if (!from || !to)
            continue;
        const x1 = from.x + NODE_W;
        const y1 = from.y + NODE_H / 2;
        const x2 = to.x;
        const y2 = to.y + NODE_H / 2;
        const mx = (x1 + x2) / 2;
        parts.push(`<path data-edge="${escapeHtml(edge.from)}->${escapeHtml(edge.to)}" ` +
            `d="M ${x1} ${y1} C ${mx} ${y1}, ${mx} ${y2}, ${x2} ${y2}" ` +
            'fill="none" stroke="#7a8288" stroke-width="1.5" marker-end="url(#arrow)"/>');
    }
    for (const placed of layout.nodes) {
        const node = placed.node;
        const fill = STATUS_FILL[node.status];
        const attempt = node.kind === "activity" && node.attempt > 1 ? ` ×${node.attempt}` : "";
        parts.push(`<g data-node-id="${escapeHtml(node.id)}" data-status="${escapeHtml(node.status)}">`);
        parts.push(`<rect x="${placed.x}" y="${placed.y}" width="${NODE_W}" height="${NODE_H}" ` +
            `rx="8" fill="${fill}" stroke="#4a4f54"/>`);
        parts.push(`<text x="${placed.x + 10}" y="${placed.y + 20}" class="node-label">` +
            `${escapeHtml(node.label)}</text>`);
        parts.push(`<text x="${placed.x + 10}" y="${placed.y + 38}" class="node-status">` +
            `${escapeHtml(node.status)}${escapeHtml(attempt)}</text>`);
        parts.push(`<text x="${placed.x + 10}" y="${placed.y + 56}" class="node-timing">` +
            `${escapeHtml(nodeTimingLine(node, baseTs))}</text>`);
        if (node.last_error) {
            parts.push(`<title>${escapeHtml(node.last_error)}</title>`);
        }
        parts.push("</g>");
    }
    parts.push("</svg>");
    return parts.join("");
}
