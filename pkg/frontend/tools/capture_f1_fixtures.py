#!/usr/bin/env python3
"""Record live API payloads for the stuck sequence-control run so the console
tests can render the real thing offline.

Usage: python3 tools/capture_f1_fixtures.py  (from frontend/)
Writes tests/fixtures/f1/{describe,history,stack-trace,trace-graph,executions,faults}.json
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import requests

from duraflow.scenarios import ScenarioHarness

OUT_DIR = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "f1"


def main() -> int:
    OUT_DIR.mkdir(parents=True, exist_ok=True)
    with ScenarioHarness() as harness:
        client = harness.client
        harness.ensure_worker("worker-1")
        harness.ensure_worker("worker-2")
        (order_id,) = harness.seed_orders(1, prefix="f1fix")
        client.inject_fault(
            {"target": "drawBackMoneyActivity", "kind": "Latency", "delay_ms": 2_000}
        )
        run_id = client.start_workflow(
            "cancelTicketFaulty",
            f"f1-{order_id}",
            json.dumps({"order_id": order_id}),
            "trainticket-q",
        )

        def stuck() -> bool:
            trace = client.stack_trace(run_id)
            return any(
                e["label"] == "drawBackMoneyActivity"
                and e["state"] == "Retrying"
                and "order already cancelled" in (e["last_error"] or "")
                for e in trace["entries"]
            )

        harness.await_condition(stuck, 25, "refund never got stuck")

        base = harness.server_url + "/api/v1"
        captures = {
            "describe": f"{base}/workflows/{run_id}",
            "history": f"{base}/workflows/{run_id}/history",
            "stack-trace": f"{base}/workflows/{run_id}/stack-trace",
            "trace-graph": f"{base}/workflows/{run_id}/trace-graph",
            "executions": f"{base}/workflows",
            "faults": f"{base}/faults",
        }
        for name, url in captures.items():
            payload = requests.get(url, timeout=10).json()
            (OUT_DIR / f"{name}.json").write_text(json.dumps(payload, indent=2) + "\n")
            print(f"wrote {name}.json")
        client.terminate(run_id, "fixture capture done")
    return 0


if __name__ == "__main__":
    sys.exit(main())
