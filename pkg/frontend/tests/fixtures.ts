import { readFileSync } from "node:fs";

import type {
  DescribeResponse,
  ExecutionSummary,
  FaultRecord,
  HistoryEventRecord,
  StackTraceResponse,
  TraceGraphResponse,
} from "../src/types.js";

function load<T>(name: string): T {
  const url = new URL(`../../tests/fixtures/f1/${name}.json`, import.meta.url);
  return JSON.parse(readFileSync(url, "utf8")) as T;
}

export const f1 = {
  describe: () => load<DescribeResponse>("describe"),
  history: () => load<{ events: HistoryEventRecord[] }>("history").events,
  stackTrace: () => load<StackTraceResponse>("stack-trace"),
  traceGraph: () => load<TraceGraphResponse>("trace-graph"),
  executions: () => load<{ executions: ExecutionSummary[] }>("executions").executions,
  faults: () => load<{ faults: FaultRecord[] }>("faults").faults,
};
