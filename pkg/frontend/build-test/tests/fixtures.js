import { readFileSync } from "node:fs";
function load(name) {
    const url = new URL(`../../tests/fixtures/f1/${name}.json`, import.meta.url);
    return JSON.parse(readFileSync(url, "utf8"));
}
export const f1 = {
    describe: () => load("describe"),
    history: () => load("history").events,
    stackTrace: () => load("stack-trace"),
    traceGraph: () => load("trace-graph"),
    executions: () => load("executions").executions,
    faults: () => load("faults").faults,
};
