"""duractl: run the server and workers, drive workflows, inspect traces,
inject faults, and launch scripted fault scenarios."""

from __future__ import annotations

import json
import logging
import os
import signal
import sys
import threading
from pathlib import Path

import click

from duraflow.client import EngineApiError, EngineClient, TransportError
from duraflow.demo import OrderStore, demo_activities, demo_workflows
from duraflow.model import EngineError
from duraflow.orchestrator import Engine
from duraflow.scenarios import SCENARIO_NAMES, ScenarioManager, run_scenario
from duraflow.server import ApiServer
from duraflow.store import HistoryStore
from duraflow.worker import Worker

DEFAULT_LISTEN = "127.0.0.1:8233"
DEFAULT_SERVER = "http://127.0.0.1:8233"


def _echo_json(payload) -> None:
    click.echo(json.dumps(payload, indent=2))


def _client(server: str) -> EngineClient:
    return EngineClient(server)


server_option = click.option(
    "--server",
    default=lambda: os.environ.get("DURAFLOW_SERVER", DEFAULT_SERVER),
    show_default=DEFAULT_SERVER,
    help="Engine API base URL.",
)


@click.group()
@click.option("--verbose", is_flag=True, help="Debug logging.")
def main(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)-7s %(name)s: %(message)s",
    )


# -- server ----------------------------------------------------------------------


@main.command()
@click.option(
    "--data-dir",
    default=lambda: os.environ.get("DATA_DIR", "./duraflow-data"),
    show_default="./duraflow-data",
    help="Durable history directory.",
)
@click.option(
    "--listen",
    default=lambda: os.environ.get("LISTEN_ADDR", DEFAULT_LISTEN),
    show_default=DEFAULT_LISTEN,
    help="host:port to bind (port 0 for ephemeral).",
)
@click.option(
    "--fsync",
    type=click.Choice(["on", "off"]),
    default=lambda: os.environ.get("FSYNC", "on"),
    show_default="on",
    help="Flush-to-disk on every append.",
)
@click.option(
    "--tick-ms",
    type=int,
    default=lambda: int(os.environ.get("TICK_MS", "50")),
    show_default="50",
    help="Timer/lease sweep resolution.",
)
@click.option("--ui-dir", default=None, help="Static directory to serve at / (web console).")
@click.option(
    "--demo",
    is_flag=True,
    help="Host in-process demo workers, seed orders, and enable the scenario launcher.",
)
def server(data_dir: str, listen: str, fsync: str, tick_ms: int, ui_dir: str | None, demo: bool):
    """Run the orchestration engine and its HTTP API."""
    host, _, port_text = listen.partition(":")
    store = HistoryStore(data_dir, fsync=fsync == "on")
    engine = Engine(store, tick_ms=tick_ms).start()

    api = ApiServer(engine, host=host or "127.0.0.1", port=int(port_text or 0), static_dir=ui_dir)
    api.scenario_manager = ScenarioManager(lambda: api.address)
    api.start()
    click.echo(f"listening on {api.address}", err=False)
    click.echo(f"data dir: {Path(data_dir).resolve()}   fsync: {fsync}   tick: {tick_ms}ms")

    workers: list[Worker] = []
    if demo:
        orders = OrderStore(Path(data_dir) / "orders.json")
        if not orders.order_ids():
            orders.seed(10)
        for worker_id in ("demo-worker-1", "demo-worker-2"):
            workers.append(
                Worker(
                    EngineClient(api.address),
                    "trainticket-q",
                    workflows=demo_workflows(),
                    activities=demo_activities(orders),
                    worker_id=worker_id,
                ).start()
            )
        click.echo(f"demo workers polling trainticket-q; {len(orders.order_ids())} orders seeded")

    stop_event = threading.Event()
    signal.signal(signal.SIGINT, lambda signum, frame: stop_event.set())
    signal.signal(signal.SIGTERM, lambda signum, frame: stop_event.set())
    try:
        stop_event.wait()
    finally:
        click.echo("shutting down")
        for worker in workers:
            worker.stop()
        api.stop()
        engine.stop()


# -- worker ----------------------------------------------------------------------


@main.command()
@server_option
@click.option("--queue", default="trainticket-q", show_default=True, help="Task queue to poll.")
@click.option(
    "--role",
    type=click.Choice(["workflow", "activity", "both"]),
    default="both",
    show_default=True,
)
@click.option(
    "--demo",
    "demo_pack",
    type=click.Choice(["trainticket"]),
    default="trainticket",
    show_default=True,
    help="Registry pack to serve.",
)
@click.option("--worker-id", default=None, help="Stable worker identity (fault targeting).")
@click.option("--orders-file", default="orders.json", show_default=True)
@click.option("--concurrency", type=int, default=16, show_default=True)
def worker(
    server: str,
    queue: str,
    role: str,
    demo_pack: str,
    worker_id: str | None,
    orders_file: str,
    concurrency: int,
):
    """Run a worker process hosting the demo workflows and activities."""
    orders = OrderStore(orders_file)
    workflows = demo_workflows() if role in ("workflow", "both") else None
    activities = demo_activities(orders) if role in ("activity", "both") else None
    runner = Worker(
        _client(server),
        queue,
        workflows=workflows,
        activities=activities,
        worker_id=worker_id,
        concurrency=concurrency,
    )
    click.echo(f"worker {runner.worker_id} polling {queue} on {server} ({role})")
    crashed = runner.run_until_stopped()
    sys.exit(1 if crashed else 0)


# -- workflow control -------------------------------------------------------------


@main.command()
@server_option
@click.option("--type", "workflow_type", required=True)
@click.option("--workflow-id", required=True)
@click.option("--input", "input_payload", default="{}", show_default=True)
@click.option("--queue", default="trainticket-q", show_default=True)
def start(server: str, workflow_type: str, workflow_id: str, input_payload: str, queue: str):
    """Start a workflow execution."""
    run_id = _client(server).start_workflow(workflow_type, workflow_id, input_payload, queue)
    _echo_json({"run_id": run_id})


@main.command(name="list")
@server_option
@click.option("--status", default=None)
@click.option("--type", "workflow_type", default=None)
def list_cmd(server: str, status: str | None, workflow_type: str | None):
    """List workflow executions."""
    _echo_json(_client(server).list_workflows(status=status, workflow_type=workflow_type))


@main.command()
@server_option
@click.argument("run_id")
def describe(server: str, run_id: str):
    """Describe one execution: status, pending items, attempt counts."""
    _echo_json(_client(server).describe(run_id))


@main.command()
@server_option
@click.argument("run_id")
def history(server: str, run_id: str):
    """Dump an execution's event history."""
    events = _client(server).get_history(run_id)
    _echo_json([e.to_record() for e in events])


@main.command(name="signal")
@server_option
@click.argument("run_id")
@click.argument("name")
@click.option("--payload", default="", show_default=True)
def signal_cmd(server: str, run_id: str, name: str, payload: str):
    """Send a signal to a running execution."""
    _client(server).signal(run_id, name, payload)
    click.echo("ok")


@main.command()
@server_option
@click.argument("run_id")
@click.option("--reason", default="operator", show_default=True)
def terminate(server: str, run_id: str, reason: str):
    """Terminate a running execution."""
    _client(server).terminate(run_id, reason)
    click.echo("ok")


@main.command()
@server_option
@click.argument("run_id")
@click.option("--dot", is_flag=True, help="Emit the trace graph as DOT instead.")
def trace(server: str, run_id: str, dot: bool):
    """Show the stack trace and trace graph for an execution."""
    client = _client(server)
    if dot:
        click.echo(client.trace_graph_dot(run_id))
        return
    stack = client.stack_trace(run_id)
    click.echo(stack["text"])
    _echo_json(client.trace_graph(run_id))


# -- faults --------------------------------------------------------------------------


@main.group()
def fault():
    """Inject, list and clear faults."""


@fault.command("inject")
@server_option
@click.option("--target", required=True, help="activity_type or worker id.")
@click.option(
    "--kind",
    required=True,
    type=click.Choice(["Latency", "Unavailable", "ErrorNTimes", "CrashWorker"]),
)
@click.option("--delay-ms", type=int, default=0)
@click.option("--duration-ms", type=int, default=0)
@click.option("--n", type=int, default=0)
@click.option("--error", default="injected fault", show_default=True)
def fault_inject(server, target, kind, delay_ms, duration_ms, n, error):
    fault_id = _client(server).inject_fault(
        {
            "target": target,
            "kind": kind,
            "delay_ms": delay_ms,
            "duration_ms": duration_ms,
            "n": n,
            "error": error,
        }
    )
    _echo_json({"fault_id": fault_id})


@fault.command("clear")
@server_option
@click.argument("fault_id")
def fault_clear(server, fault_id):
    _client(server).clear_fault(fault_id)
    click.echo("ok")


@fault.command("list")
@server_option
def fault_list(server):
    _echo_json(_client(server).list_faults())


# -- scenarios --------------------------------------------------------------------------


@main.group()
def scenario():
    """Run scripted fault scenarios."""


@scenario.command("list")
def scenario_list():
    _echo_json(SCENARIO_NAMES)


@scenario.command("run")
@click.argument("name", type=click.Choice(SCENARIO_NAMES))
@click.option(
    "--server",
    default=None,
    help="Attach to an existing engine (default: self-hosted stack).",
)
@click.option("--report", "report_path", default=None, help="Write the report JSON here.")
def scenario_run(name: str, server: str | None, report_path: str | None):
    try:
        report = run_scenario(name, server_url=server, report_path=report_path)
    except EngineError as err:
        click.echo(f"scenario failed: {err}", err=True)
        sys.exit(1)
    _echo_json(report.to_dict())
    click.echo(f"outcome: {report.outcome}")


# -- demo -------------------------------------------------------------------------------


@main.group()
def demo():
    """Demo domain helpers."""


@demo.command("seed")
@click.option("--orders", "count", type=int, default=10, show_default=True)
@click.option("--orders-file", default="orders.json", show_default=True)
@click.option("--amount-cents", type=int, default=12_500, show_default=True)
def demo_seed(count: int, orders_file: str, amount_cents: int):
    """Seed Paid orders into the demo order store file."""
    store = OrderStore(orders_file)
    created = store.seed(count, amount_cents=amount_cents)
    _echo_json({"created": created, "orders_file": str(Path(orders_file).resolve())})


def entry() -> None:
    try:
        main(standalone_mode=True)
    except (EngineApiError, TransportError) as err:
        click.echo(f"error: {err}", err=True)
        sys.exit(2)
    except EngineError as err:
        click.echo(f"error: {err.code}: {err}", err=True)
        sys.exit(2)


if __name__ == "__main__":
    entry()
