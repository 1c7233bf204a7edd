// The rendered graph must equal the endpoint payload exactly: every node and
// edge present, none invented, layered left to right.
import assert from "node:assert/strict";
import { test } from "node:test";
import { layoutTraceGraph, renderTraceGraphSvg, STATUS_FILL } from "../src/graph.js";
import { f1 } from "./fixtures.js";
test("svg node set equals the payload node set exactly", () => {
    const graph = f1.traceGraph();
    const svg = renderTraceGraphSvg(graph);
    const rendered = [...svg.matchAll(/data-node-id="([^"]+)"/g)].map((m) => m[1]);
    assert.deepEqual(rendered.sort(), graph.nodes.map((n) => n.id).sort());
    assert.equal(rendered.length, graph.nodes.length);
});
test("svg edge set equals the payload edge set exactly", () => {
    const graph = f1.traceGraph();
    const svg = renderTraceGraphSvg(graph);
    const rendered = [...svg.matchAll(/data-edge="([^"]+)"/g)].map((m) => m[1]);
    const expected = graph.edges.map((e) => `${e.from}->${e.to}`);
    assert.deepEqual(rendered.sort(), expected.sort());
});
test("node statuses and colors mirror the payload", () => {
    const graph = f1.traceGraph();
    const svg = renderTraceGraphSvg(graph);
    for (const node of graph.nodes) {
        assert.match(svg, new RegExp(`data-node-id="${node.id}" data-status="${node.status}"`));
    }
    assert.ok(svg.includes(STATUS_FILL.completed));
    assert.ok(svg.includes(STATUS_FILL.failed));
});
test("layout layers nodes left to right by schedule order", () => {
    const graph = f1.traceGraph();
    const layout = layoutTraceGraph(graph);
    const column = new Map(layout.nodes.map((p) => [p.node.id, p.column]));
    assert.equal(column.get("wf"), 0);
    assert.equal(column.get("act:1"), 1);
    // the racing pair sits in the same layer, one column after their parent
    assert.equal(column.get("act:2"), 2);
    assert.equal(column.get("act:3"), 2);
    for (const edge of graph.edges) {
        assert.ok(column.get(edge.from) < column.get(edge.to), `edge ${edge.from}->${edge.to} does not point rightward`);
    }
});
test("completion timestamps expose the inversion", () => {
    const graph = f1.traceGraph();
    const svg = renderTraceGraphSvg(graph);
    const doneMatch = svg.match(/done \+([0-9.]+)s/);
    const failMatch = svg.match(/first failure \+([0-9.]+)s/);
    assert.ok(doneMatch, "completed node must show its completion offset");
    assert.ok(failMatch, "failed node must show its first-failure offset");
    const latestDone = Math.max(...[...svg.matchAll(/done \+([0-9.]+)s/g)].map((m) => Number(m[1])));
    assert.ok(latestDone < Number(failMatch[1]), "status write completed before the refund first failed");
});
test("retrying activities show their attempt count", () => {
    const svg = renderTraceGraphSvg(f1.traceGraph());
    assert.match(svg, /failed ×\d+/);
});
