"""Scripted fault scenarios reproducing classic microservice fault classes at
desk scale: interaction (sequence control, timeout), environment
(unavailability, worker crash) and internal (wrong arithmetic).

A ScenarioHarness owns the demo workers (and, when self-hosted, the engine
and HTTP server too); scenarios drive everything through the public API so
they exercise the same surface an operator would.
"""

from __future__ import annotations

import json
import logging
import tempfile
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from duraflow.client import EngineClient
from duraflow.demo import (
    OrderStore,
    correct_price,
    demo_activities,
    demo_workflows,
)
from duraflow.model import EngineError, HistoryState, now_ms
from duraflow.orchestrator import Engine
from duraflow.replay import WorkflowDefinition
from duraflow.server import ApiServer
from duraflow.store import HistoryStore
from duraflow.worker import Worker

log = logging.getLogger(__name__)

SCENARIO_NAMES = [
    "F1-sequence-control",
    "F5-timeout",
    "env-unavailable",
    "worker-crash",
    "internal-bug",
]

TRAINTICKET_QUEUE = "trainticket-q"

OUTCOME_REPRODUCED = "ReproducedFault"
OUTCOME_RECOVERED = "RecoveredAfterFix"
OUTCOME_COMPLETED = "Completed"
OUTCOME_ERROR = "Error"


class EnvironmentNotReady(EngineError):
    code = "EnvironmentNotReady"


class ScenarioFailed(EngineError):
    code = "ScenarioFailed"


@dataclass
class ScenarioReport:
    scenario: str
    outcome: str = "Running"
    timeline: list[dict[str, Any]] = field(default_factory=list)
    runs: dict[str, str] = field(default_factory=dict)
    details: dict[str, Any] = field(default_factory=dict)
    started_at_ms: int = field(default_factory=now_ms)
    finished_at_ms: int | None = None

    def note(self, message: str) -> None:
        self.timeline.append({"t_ms": now_ms(), "note": message})
        log.info("[%s] %s", self.scenario, message)

    def finish(self, outcome: str) -> "ScenarioReport":
        self.outcome = outcome
        self.finished_at_ms = now_ms()
        return self

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario,
            "outcome": self.outcome,
            "timeline": list(self.timeline),
            "runs": dict(self.runs),
            "details": dict(self.details),
            "started_at_ms": self.started_at_ms,
            "finished_at_ms": self.finished_at_ms,
        }

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


class ScenarioHarness:
    """Demo workers plus (optionally) a self-hosted engine and API server."""

    def __init__(self, server_url: str | None = None, root_dir: str | Path | None = None):
        self._external = server_url is not None
        self._tmp: tempfile.TemporaryDirectory | None = None
        if root_dir is None:
            self._tmp = tempfile.TemporaryDirectory(prefix="duraflow-scenario-")
            root_dir = self._tmp.name
        self.root_dir = Path(root_dir)
        self.engine: Engine | None = None
        self.server: ApiServer | None = None

        if self._external:
            self.server_url = server_url
        else:
            store = HistoryStore(self.root_dir / "data", fsync=False)
            self.engine = Engine(store, tick_ms=25).start()
            self.server = ApiServer(self.engine, port=0).start()
            self.server_url = self.server.address

        self.client = EngineClient(self.server_url)
        if not self.client.health():
            self.shutdown()
            raise EnvironmentNotReady(f"engine at {self.server_url} is not reachable")

        self.orders = OrderStore(self.root_dir / "orders.json")
        self._workers: dict[str, Worker] = {}

    # -- lifecycle ----------------------------------------------------------------

    def __enter__(self) -> "ScenarioHarness":
        return self

    def __exit__(self, *exc_info) -> None:
        self.shutdown()

    def shutdown(self) -> None:
        for worker in self._workers.values():
            worker.stop(graceful=False)
        self._workers.clear()
        if self.server is not None:
            self.server.stop()
            self.server = None
        if self.engine is not None:
            self.engine.stop()
            self.engine = None
        if self._tmp is not None:
            self._tmp.cleanup()
            self._tmp = None

    def ensure_worker(self, worker_id: str) -> Worker:
        worker = self._workers.get(worker_id)
        if worker is not None and not worker.crashed:
            return worker
        worker = Worker(
            EngineClient(self.server_url),
            TRAINTICKET_QUEUE,
            workflows=demo_workflows(),
            activities=demo_activities(self.orders),
            worker_id=worker_id,
            poll_wait_ms=200,
        ).start()
        self._workers[worker_id] = worker
        return worker

    def stop_worker(self, worker_id: str) -> None:
        worker = self._workers.pop(worker_id, None)
        if worker is not None:
            worker.stop(graceful=False)

    def worker(self, worker_id: str) -> Worker | None:
        return self._workers.get(worker_id)

    # -- scripting helpers ------------------------------------------------------------

    def seed_orders(self, count: int, prefix: str = "ord") -> list[str]:
        order_ids = [f"{prefix}-{uuid.uuid4().hex[:6]}-{i}" for i in range(count)]
        run_id = self.client.start_workflow(
            "seedOrders",
            f"seed-{uuid.uuid4().hex[:8]}",
            json.dumps({"order_ids": order_ids}),
            TRAINTICKET_QUEUE,
        )
        self.await_status(run_id, "Completed", timeout_s=15, what="order seeding")
        return order_ids

    def await_status(self, run_id: str, status: str, timeout_s: float, what: str) -> None:
        self.await_condition(
            lambda: self.client.describe(run_id)["status"] == status,
            timeout_s,
            f"{what}: run {run_id} never reached {status}",
        )

    def await_condition(self, predicate: Callable[[], bool], timeout_s: float, what: str) -> None:
        deadline = time.monotonic() + timeout_s
        while time.monotonic() < deadline:
            if predicate():
                return
            time.sleep(0.05)
        raise ScenarioFailed(what)


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ScenarioFailed(message)


def _validate_all_histories(client: EngineClient) -> None:
    """Fault injection must never corrupt histories: re-fold every run."""
    for summary in client.list_workflows():
        events = client.get_history(summary["run_id"])
        HistoryState.from_events(events)


# ---------------------------------------------------------------------------
# Scenario scripts.
# ---------------------------------------------------------------------------


def _scenario_f1(harness: ScenarioHarness, report: ScenarioReport) -> str:
    client = harness.client
    harness.ensure_worker("worker-1")
    harness.ensure_worker("worker-2")
    (order_id,) = harness.seed_orders(1, prefix="f1")
    report.note(f"seeded order {order_id} (Paid)")

    fault_id = client.inject_fault(
        {"target": "drawBackMoneyActivity", "kind": "Latency", "delay_ms": 2_000}
    )
    report.note("injected 2s latency on drawBackMoneyActivity (simulated congestion)")

    run_id = client.start_workflow(
        "cancelTicketFaulty",
        f"f1-{order_id}",
        json.dumps({"order_id": order_id}),
        TRAINTICKET_QUEUE,
    )
    report.runs["faulty"] = run_id
    report.note(f"started faulty cancellation workflow {run_id}")

    def refund_is_stuck() -> bool:
        trace = client.stack_trace(run_id)
        return any(
            e["label"] == "drawBackMoneyActivity"
            and e["state"] == "Retrying"
            and "order already cancelled" in (e["last_error"] or "")
            for e in trace["entries"]
        )

    harness.await_condition(refund_is_stuck, 25, "refund never got stuck retrying")
    trace = client.stack_trace(run_id)
    report.details["stack_trace"] = trace
    report.note("stack trace shows drawBackMoneyActivity retrying: order already cancelled")

    graph = client.trace_graph(run_id)
    report.details["trace_graph"] = graph
    nodes = {n["label"]: n for n in graph["nodes"]}
    cancelled_end = nodes["setOrderCancelledActivity"]["end_ts"]
    refund_first_failure = nodes["drawBackMoneyActivity"]["first_failure_ts"]
    _require(
        cancelled_end is not None
        and refund_first_failure is not None
        and cancelled_end < refund_first_failure,
        "trace graph does not show the inverted completion order",
    )
    report.details["completion_inversion"] = {
        "setOrderCancelled_end_ts": cancelled_end,
        "drawBackMoney_first_failure_ts": refund_first_failure,
    }
    report.note("trace graph: setOrderCancelledActivity completed before the refund failed")

    # Fix phase: with the fault cleared, the corrected sequential workflow
    # completes on a fresh order; the stuck run's damage is then cleaned up by
    # the operator.
    client.clear_fault(fault_id)
    (fixed_order,) = harness.seed_orders(1, prefix="f1fix")
    fixed_run = client.start_workflow(
        "cancelTicket",
        f"f1fix-{fixed_order}",
        json.dumps({"order_id": fixed_order}),
        TRAINTICKET_QUEUE,
    )
    report.runs["fixed"] = fixed_run
    harness.await_status(fixed_run, "Completed", 20, "fixed workflow")
    report.note(f"fixed sequential workflow {fixed_run} completed")

    client.terminate(run_id, "operator: F1 diagnosed, terminating stuck run")
    report.note("terminated the stuck faulty run")
    return OUTCOME_REPRODUCED


def _scenario_env_unavailable(harness: ScenarioHarness, report: ScenarioReport) -> str:
    client = harness.client
    harness.ensure_worker("worker-1")
    (order_id,) = harness.seed_orders(1, prefix="env")
    window_ms = 5_000
    client.inject_fault(
        {
            "target": "setOrderCancellingActivity",
            "kind": "Unavailable",
            "duration_ms": window_ms,
            "error": "order-service down",
        }
    )
    report.note(f"order-service unavailable for {window_ms}ms")
    started = now_ms()
    run_id = client.start_workflow(
        "cancelTicket", f"env-{order_id}", json.dumps({"order_id": order_id}),
        TRAINTICKET_QUEUE,
    )
    report.runs["run"] = run_id
    harness.await_status(run_id, "Completed", window_ms / 1000 + 10, "recovery from outage")
    elapsed = now_ms() - started
    report.details["elapsed_ms"] = elapsed
    report.note(f"workflow completed {elapsed}ms after start, despite the outage")

    history = client.get_history(run_id)
    failures = [e for e in history if e.kind.value == "ActivityTaskFailed"]
    _require(len(failures) >= 1, "expected at least one failed attempt during the outage")
    completions_per_seq: dict[int, int] = {}
    for event in history:
        if event.kind.value == "ActivityTaskCompleted":
            seq = event.attrs["seq"]
            completions_per_seq[seq] = completions_per_seq.get(seq, 0) + 1
    _require(
        all(count == 1 for count in completions_per_seq.values()),
        f"exactly-once violated: {completions_per_seq}",
    )
    report.details["failed_attempts"] = len(failures)
    report.details["completions_per_seq"] = completions_per_seq
    report.note("state fully preserved: every activity completed exactly once")
    return OUTCOME_COMPLETED


def _scenario_f5_timeout(harness: ScenarioHarness, report: ScenarioReport) -> str:
    client = harness.client
    harness.ensure_worker("worker-1")
    (order_id,) = harness.seed_orders(1, prefix="f5")
    fault_id = client.inject_fault(
        {"target": "chargeActivity", "kind": "Latency", "delay_ms": 2_500}
    )
    report.note("charge calls delayed 2.5s; start-to-close budget is 1.5s")

    run_id = client.start_workflow(
        "bookTicket",
        f"f5-{order_id}",
        json.dumps({"order_id": order_id, "payment_window_ms": 60_000}),
        TRAINTICKET_QUEUE,
    )
    report.runs["run"] = run_id
    harness.await_condition(
        lambda: harness.orders.get(order_id)["seat"] is not None,
        10,
        "seat was never reserved",
    )
    client.signal(run_id, "payment", json.dumps({"paid": True}))
    report.note("payment signal sent; charge begins timing out")

    def charge_timed_out() -> bool:
        history = client.get_history(run_id)
        return any(
            e.kind.value == "ActivityTaskFailed" and "TimeoutError" in e.attrs["error"]
            for e in history
        )

    harness.await_condition(charge_timed_out, 20, "charge never timed out")
    report.note("charge attempt exceeded its threadpool-style budget: TimeoutError recorded")
    client.clear_fault(fault_id)
    report.note("latency cleared; retry should succeed")
    harness.await_status(run_id, "Completed", 20, "booking after timeout retries")

    history = client.get_history(run_id)
    timeouts = [
        e for e in history
        if e.kind.value == "ActivityTaskFailed" and "TimeoutError" in e.attrs["error"]
    ]
    report.details["timeout_failures"] = len(timeouts)
    report.note(f"booking completed after {len(timeouts)} timeout(s)")
    return OUTCOME_COMPLETED


def _scenario_worker_crash(harness: ScenarioHarness, report: ScenarioReport) -> str:
    client = harness.client
    harness.ensure_worker("worker-1")
    (order_id,) = harness.seed_orders(1, prefix="crash")
    client.inject_fault({"target": "worker-1", "kind": "CrashWorker"})
    report.note("armed crash fault on worker-1")
    run_id = client.start_workflow(
        "cancelTicket", f"crash-{order_id}", json.dumps({"order_id": order_id}),
        TRAINTICKET_QUEUE,
    )
    report.runs["run"] = run_id
    harness.await_condition(
        lambda: (w := harness.worker("worker-1")) is not None and w.crashed,
        15,
        "worker-1 never crashed",
    )
    report.note("worker-1 crashed mid-activity; its lease will expire")

    harness.ensure_worker("worker-2")
    report.note("worker-2 started; picking up the abandoned work")
    harness.await_status(run_id, "Completed", 25, "workflow after worker crash")

    history = client.get_history(run_id)
    completions_per_seq: dict[int, int] = {}
    for event in history:
        if event.kind.value == "ActivityTaskCompleted":
            seq = event.attrs["seq"]
            completions_per_seq[seq] = completions_per_seq.get(seq, 0) + 1
    _require(
        all(count == 1 for count in completions_per_seq.values()),
        f"exactly-once violated after crash: {completions_per_seq}",
    )
    report.details["completions_per_seq"] = completions_per_seq
    report.note("workflow completed with exactly-once activity effects")
    return OUTCOME_COMPLETED


def _scenario_internal_bug(harness: ScenarioHarness, report: ScenarioReport) -> str:
    client = harness.client
    harness.ensure_worker("worker-1")
    request = {"base_cents": 10_000, "seats": 2, "fee_cents": 500}
    run_id = client.start_workflow(
        "calculatePrice",
        f"price-{uuid.uuid4().hex[:6]}",
        json.dumps(request),
        TRAINTICKET_QUEUE,
    )
    report.runs["run"] = run_id
    harness.await_status(run_id, "Completed", 15, "price calculation")

    history = client.get_history(run_id)
    terminal = history[-1]
    actual = json.loads(terminal.attrs["result"])["total_cents"]
    expected = correct_price(**{
        "base_cents": request["base_cents"],
        "seats": request["seats"],
        "fee_cents": request["fee_cents"],
    })
    _require(actual != expected, "the internal bug did not manifest")
    report.details["expected_total_cents"] = expected
    report.details["actual_total_cents"] = actual
    report.note(
        f"workflow Completed with wrong output ({actual} != {expected}): the"
        " orchestration layer has no role in purely internal faults"
    )
    return OUTCOME_COMPLETED


_SCENARIOS: dict[str, Callable[[ScenarioHarness, ScenarioReport], str]] = {
    "F1-sequence-control": _scenario_f1,
    "F5-timeout": _scenario_f5_timeout,
    "env-unavailable": _scenario_env_unavailable,
    "worker-crash": _scenario_worker_crash,
    "internal-bug": _scenario_internal_bug,
}


def run_scenario(
    name: str,
    server_url: str | None = None,
    report: ScenarioReport | None = None,
    report_path: str | Path | None = None,
) -> ScenarioReport:
    """Run one named scenario, self-hosting the engine unless server_url is
    given. Raises ScenarioFailed when the script's assertions do not hold."""
    if name not in _SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}; one of {SCENARIO_NAMES}")
    report = report or ScenarioReport(scenario=name)
    try:
        with ScenarioHarness(server_url=server_url) as harness:
            report.note(f"harness ready at {harness.server_url}")
            outcome = _SCENARIOS[name](harness, report)
            _validate_all_histories(harness.client)
            report.finish(outcome)
    except EngineError as err:
        report.details["error"] = str(err)
        report.finish(OUTCOME_ERROR)
        if report_path:
            report.write(report_path)
        raise
    if report_path:
        report.write(report_path)
    return report


# ---------------------------------------------------------------------------
# Resume-after-fix probe: not one of the named fault scenarios, but the same
# reporting machinery; used by the acceptance suite and available to scripts.
# ---------------------------------------------------------------------------


def resume_after_fix_probe(
    server_url: str,
    orders: OrderStore,
    report: ScenarioReport | None = None,
    min_task_failures: int = 3,
) -> ScenarioReport:
    """Deploy a buggy workflow body, watch tasks fail while state is
    preserved, then deploy the fixed body and watch the same run complete."""
    report = report or ScenarioReport(scenario="resume-after-fix")
    client = EngineClient(server_url)

    async def buggy_body(ctx, input_payload):
        request = json.loads(input_payload)
        order_ref = json.dumps({"order_id": request["order_id"]})
        await ctx.execute_activity("setOrderCancellingActivity", order_ref)
        raise RuntimeError("release 1.0.1: forgot to handle the refund step")

    buggy_defn = WorkflowDefinition("cancelTicket", buggy_body)
    registry = demo_workflows()
    buggy_registry = dict(registry)
    buggy_registry["cancelTicket"] = buggy_defn

    order_id = f"fix-{uuid.uuid4().hex[:6]}"
    orders.create(order_id)
    buggy_worker = Worker(
        EngineClient(server_url),
        TRAINTICKET_QUEUE,
        workflows=buggy_registry,
        activities=demo_activities(orders),
        worker_id="buggy-worker",
        poll_wait_ms=200,
    ).start()
    report.note("buggy worker deployed")

    run_id = client.start_workflow(
        "cancelTicket", f"resume-{order_id}", json.dumps({"order_id": order_id}),
        TRAINTICKET_QUEUE,
    )
    report.runs["run"] = run_id

    deadline = time.monotonic() + 30
    try:
        while time.monotonic() < deadline:
            info = client.describe(run_id)
            if info["workflow_task"]["failure_count"] >= min_task_failures:
                break
            time.sleep(0.1)
        info = client.describe(run_id)
        if info["workflow_task"]["failure_count"] < min_task_failures:
            raise ScenarioFailed("buggy worker never accumulated task failures")
        if info["status"] != "Running":
            raise ScenarioFailed(f"run should stay Running, is {info['status']}")
        report.details["task_failures_while_buggy"] = info["workflow_task"]["failure_count"]
        report.note(
            f"{info['workflow_task']['failure_count']} workflow task failures;"
            " execution state fully preserved, run still Running"
        )
    finally:
        buggy_worker.stop(graceful=False)
    report.note("buggy worker stopped; deploying fixed body")

    completed_before = {
        e.attrs["seq"]
        for e in client.get_history(run_id)
        if e.kind.value == "ActivityTaskCompleted"
    }

    fixed_worker = Worker(
        EngineClient(server_url),
        TRAINTICKET_QUEUE,
        workflows=registry,
        activities=demo_activities(orders),
        worker_id="fixed-worker",
        poll_wait_ms=200,
    ).start()
    try:
        deadline = time.monotonic() + 30
        while time.monotonic() < deadline:
            if client.describe(run_id)["status"] == "Completed":
                break
            time.sleep(0.1)
        if client.describe(run_id)["status"] != "Completed":
            raise ScenarioFailed("fixed worker never completed the stuck run")
    finally:
        fixed_worker.stop()

    history = client.get_history(run_id)
    completions: dict[int, int] = {}
    for event in history:
        if event.kind.value == "ActivityTaskCompleted":
            completions[event.attrs["seq"]] = completions.get(event.attrs["seq"], 0) + 1
    if any(count != 1 for count in completions.values()):
        raise ScenarioFailed(f"an activity completed more than once: {completions}")
    report.details["completions_per_seq"] = completions
    report.details["activities_completed_before_fix"] = sorted(completed_before)
    report.note("run resumed and completed; previously completed activities not re-executed")
    return report.finish(OUTCOME_RECOVERED)


class ScenarioManager:
    """Launches scenarios in background threads for the HTTP API / console."""

    def __init__(self, server_url_fn: Callable[[], str]):
        self._server_url_fn = server_url_fn
        self._lock = threading.Lock()
        self._reports: dict[str, ScenarioReport] = {}

    def names(self) -> list[str]:
        return list(SCENARIO_NAMES)

    def launch(self, name: str) -> str:
        if name not in _SCENARIOS:
            raise ValueError(f"unknown scenario {name!r}; one of {SCENARIO_NAMES}")
        scenario_run_id = f"scn-{uuid.uuid4().hex[:10]}"
        report = ScenarioReport(scenario=name)
        with self._lock:
            self._reports[scenario_run_id] = report

        def runner():
            try:
                run_scenario(name, server_url=self._server_url_fn(), report=report)
            except EngineError:
                log.exception("scenario %s failed", name)

        threading.Thread(target=runner, daemon=True, name=f"scenario-{name}").start()
        return scenario_run_id

    def get(self, scenario_run_id: str) -> dict[str, Any] | None:
        with self._lock:
            report = self._reports.get(scenario_run_id)
        if report is None:
            return None
        payload = report.to_dict()
        payload["done"] = report.finished_at_ms is not None
        return payload
