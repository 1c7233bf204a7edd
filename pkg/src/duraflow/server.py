"""HTTP control plane: JSON over HTTP/1.1 under /api/v1, long-polling task
delivery, fault endpoints, and optional static hosting for the web console."""

from __future__ import annotations

import json
import logging
import mimetypes
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any, Callable
from urllib.parse import parse_qs, urlparse

from duraflow.faults import DuplicateFault, FaultSpec, UnknownFault
from duraflow.matching import QueueClosed, UnknownOrExpiredLease
from duraflow.model import EngineError, HistoryCorrupt, WorkflowStatus, command_from_dict
from duraflow.orchestrator import Engine, InvalidCommandBatch, NotRunning
from duraflow.store import AlreadyRunning, TerminalHistory, UnknownRun, VersionConflict
from duraflow.tracing import build_stack_trace, build_trace_graph, export_dot

log = logging.getLogger(__name__)

MAX_POLL_WAIT_MS = 60_000

_STATUS_BY_ERROR = {
    UnknownRun: 404,
    UnknownFault: 404,
    AlreadyRunning: 409,
    NotRunning: 409,
    TerminalHistory: 409,
    VersionConflict: 409,
    DuplicateFault: 409,
    UnknownOrExpiredLease: 409,
    InvalidCommandBatch: 400,
    HistoryCorrupt: 500,
    QueueClosed: 503,
}


class _HttpError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code


class ApiServer:
    """Wires an Engine to a ThreadingHTTPServer; one handler thread per
    connection, so long polls simply block their thread."""

    def __init__(
        self,
        engine: Engine,
        host: str = "127.0.0.1",
        port: int = 0,
        static_dir: str | Path | None = None,
        scenario_manager: Any | None = None,
    ):
        self.engine = engine
        self.static_dir = Path(static_dir) if static_dir else None
        self.scenario_manager = scenario_manager
        self._routes: list[tuple[str, re.Pattern[str], Callable[..., Any]]] = []
        self._register_routes()

        server = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def log_message(self, fmt, *args):  # noqa: N802
                log.debug("http: " + fmt, *args)

            def do_GET(self):  # noqa: N802
                server._dispatch(self, "GET")

            def do_POST(self):  # noqa: N802
                server._dispatch(self, "POST")

            def do_DELETE(self):  # noqa: N802
                server._dispatch(self, "DELETE")

            def do_OPTIONS(self):  # noqa: N802
                self.send_response(204)
                server._cors(self)
                self.send_header("Content-Length", "0")
                self.end_headers()

        self.httpd = ThreadingHTTPServer((host, port), Handler)
        self.httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    # -- plumbing ---------------------------------------------------------------

    @property
    def address(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    @property
    def port(self) -> int:
        return self.httpd.server_address[1]

    def start(self) -> "ApiServer":
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True, name="api-server")
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self.httpd.serve_forever()

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=2.0)

    def _route(self, method: str, pattern: str, handler: Callable[..., Any]) -> None:
        self._routes.append((method, re.compile("^" + pattern + "$"), handler))

    @staticmethod
    def _cors(request: BaseHTTPRequestHandler) -> None:
        request.send_header("Access-Control-Allow-Origin", "*")
        request.send_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS")
        request.send_header("Access-Control-Allow-Headers", "Content-Type")

    def _dispatch(self, request: BaseHTTPRequestHandler, method: str) -> None:
        parsed = urlparse(request.path)
        path = parsed.path
        query = {k: v[0] for k, v in parse_qs(parsed.query).items()}
        try:
            for route_method, pattern, handler in self._routes:
                if route_method != method:
                    continue
                match = pattern.match(path)
                if match is None:
                    continue
                body = self._read_json(request) if method in ("POST", "DELETE") else {}
                result = handler(*match.groups(), body=body, query=query)
                self._respond(request, result)
                return
            if method == "GET" and self._serve_static(request, path):
                return
            raise _HttpError(404, "NotFound", f"no route for {method} {path}")
        except _HttpError as err:
            self._respond_error(request, err.status, err.code, str(err))
        except EngineError as err:
            status = _STATUS_BY_ERROR.get(type(err), 500)
            self._respond_error(request, status, err.code, str(err))
        except (ValueError, KeyError, TypeError) as err:
            self._respond_error(request, 400, "BadRequest", f"{type(err).__name__}: {err}")
        except Exception as err:  # noqa: BLE001
            log.exception("unhandled error serving %s %s", method, path)
            self._respond_error(request, 500, "InternalError", str(err))

    @staticmethod
    def _read_json(request: BaseHTTPRequestHandler) -> dict[str, Any]:
        length = int(request.headers.get("Content-Length") or 0)
        if length == 0:
            return {}
        raw = request.rfile.read(length)
        try:
            body = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise _HttpError(400, "BadRequest", f"invalid JSON body: {exc}") from exc
        if not isinstance(body, dict):
            raise _HttpError(400, "BadRequest", "JSON body must be an object")
        return body

    def _respond(self, request: BaseHTTPRequestHandler, result: Any) -> None:
        if result is None:
            request.send_response(204)
            self._cors(request)
            request.send_header("Content-Length", "0")
            request.end_headers()
            return
        if isinstance(result, _RawResponse):
            payload = result.body.encode()
            request.send_response(result.status)
            self._cors(request)
            request.send_header("Content-Type", result.content_type)
            request.send_header("Content-Length", str(len(payload)))
            request.end_headers()
            request.wfile.write(payload)
            return
        payload = json.dumps(result).encode()
        request.send_response(200)
        self._cors(request)
        request.send_header("Content-Type", "application/json")
        request.send_header("Content-Length", str(len(payload)))
        request.end_headers()
        request.wfile.write(payload)

    def _respond_error(
        self, request: BaseHTTPRequestHandler, status: int, code: str, message: str
    ) -> None:
        try:
            payload = json.dumps({"error": {"code": code, "message": message}}).encode()
            request.send_response(status)
            self._cors(request)
            request.send_header("Content-Type", "application/json")
            request.send_header("Content-Length", str(len(payload)))
            request.end_headers()
            request.wfile.write(payload)
        except (BrokenPipeError, ConnectionResetError):
            pass

    def _serve_static(self, request: BaseHTTPRequestHandler, path: str) -> bool:
        if self.static_dir is None:
            return False
        relative = "index.html" if path == "/" else path.lstrip("/")
        target = (self.static_dir / relative).resolve()
        try:
            target.relative_to(self.static_dir.resolve())
        except ValueError:
            return False
        if not target.is_file():
            return False
        data = target.read_bytes()
        content_type = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
        request.send_response(200)
        request.send_header("Content-Type", content_type)
        request.send_header("Content-Length", str(len(data)))
        request.end_headers()
        request.wfile.write(data)
        return True

    # -- route handlers -------------------------------------------------------------

    def _register_routes(self) -> None:
        prefix = "/api/v1"
        self._route("GET", prefix + "/health", self._health)
        self._route("POST", prefix + "/workflows", self._start_workflow)
        self._route("GET", prefix + "/workflows", self._list_workflows)
        self._route("GET", prefix + r"/workflows/([^/]+)/history", self._get_history)
        self._route("GET", prefix + r"/workflows/([^/]+)/stack-trace", self._stack_trace)
        self._route("GET", prefix + r"/workflows/([^/]+)/trace-graph", self._trace_graph)
        self._route("POST", prefix + r"/workflows/([^/]+)/signal", self._signal)
        self._route("POST", prefix + r"/workflows/([^/]+)/terminate", self._terminate)
        self._route("POST", prefix + r"/workflows/([^/]+)/nudge", self._nudge)
        self._route("GET", prefix + r"/workflows/([^/]+)", self._describe)
        self._route(
            "POST", prefix + r"/task-queues/([^/]+)/workflow-tasks:poll", self._poll_workflow
        )
        self._route(
            "POST", prefix + r"/task-queues/([^/]+)/activity-tasks:poll", self._poll_activity
        )
        self._route("POST", prefix + r"/workflow-tasks/([^/]+):complete", self._complete_workflow_task)
        self._route("POST", prefix + r"/workflow-tasks/([^/]+):fail", self._fail_workflow_task)
        self._route("POST", prefix + r"/activity-tasks/([^/]+):complete", self._complete_activity)
        self._route("POST", prefix + r"/activity-tasks/([^/]+):fail", self._fail_activity)
        self._route("POST", prefix + "/faults", self._inject_fault)
        self._route("GET", prefix + "/faults", self._list_faults)
        self._route("DELETE", prefix + r"/faults/([^/]+)", self._clear_fault)
        self._route("GET", prefix + "/scenarios", self._list_scenarios)
        self._route("POST", prefix + r"/scenarios/([^/]+):run", self._run_scenario)
        self._route("GET", prefix + r"/scenarios/runs/([^/]+)", self._scenario_report)

    def _health(self, body, query):
        return {"status": "ok"}

    def _start_workflow(self, body, query):
        run_id = self.engine.start_workflow(
            workflow_type=str(body["workflow_type"]),
            workflow_id=str(body["workflow_id"]),
            input_payload=str(body.get("input", "")),
            task_queue=str(body["task_queue"]),
        )
        return {"run_id": run_id}

    def _list_workflows(self, body, query):
        status = WorkflowStatus(query["status"]) if query.get("status") else None
        workflow_type = query.get("type") or None
        executions = self.engine.store.list_executions(status=status, workflow_type=workflow_type)
        return {"executions": [s.to_dict() for s in executions]}

    def _describe(self, run_ref, body, query):
        return self.engine.describe(self.engine.resolve_run_id(run_ref))

    def _get_history(self, run_ref, body, query):
        run_id = self.engine.resolve_run_id(run_ref)
        from_event_id = int(query.get("from_event_id", 1))
        events = self.engine.store.get_history(run_id, from_event_id=from_event_id)
        return {"run_id": run_id, "events": [e.to_record() for e in events]}

    def _stack_trace(self, run_ref, body, query):
        run_id = self.engine.resolve_run_id(run_ref)
        trace = build_stack_trace(self.engine.store.get_history(run_id))
        return {"run_id": run_id, **trace.to_dict()}

    def _trace_graph(self, run_ref, body, query):
        run_id = self.engine.resolve_run_id(run_ref)
        graph = build_trace_graph(self.engine.store.get_history(run_id))
        if query.get("format") == "dot":
            return _RawResponse(export_dot(graph), "text/vnd.graphviz")
        return {"run_id": run_id, **graph.to_dict()}

    def _signal(self, run_ref, body, query):
        self.engine.signal_workflow(
            self.engine.resolve_run_id(run_ref),
            signal_name=str(body["name"]),
            payload=str(body.get("payload", "")),
        )
        return {"ok": True}

    def _terminate(self, run_ref, body, query):
        self.engine.terminate_workflow(
            self.engine.resolve_run_id(run_ref), reason=str(body.get("reason", ""))
        )
        return {"ok": True}

    def _nudge(self, run_ref, body, query):
        self.engine.nudge_workflow(self.engine.resolve_run_id(run_ref))
        return {"ok": True}

    def _poll_workflow(self, queue, body, query):
        max_wait = min(int(body.get("max_wait_ms", 1_000)), MAX_POLL_WAIT_MS)
        task = self.engine.poll_workflow_task(queue, max_wait, worker_id=body.get("worker_id"))
        return {"task": task.to_dict()} if task else None

    def _poll_activity(self, queue, body, query):
        max_wait = min(int(body.get("max_wait_ms", 1_000)), MAX_POLL_WAIT_MS)
        task = self.engine.poll_activity_task(queue, max_wait, worker_id=body.get("worker_id"))
        return {"task": task.to_dict()} if task else None

    def _complete_workflow_task(self, token, body, query):
        commands = [command_from_dict(c) for c in body.get("commands", [])]
        self.engine.complete_workflow_task(token, commands)
        return {"ok": True}

    def _fail_workflow_task(self, token, body, query):
        self.engine.fail_workflow_task(token, str(body.get("error", "")))
        return {"ok": True}

    def _complete_activity(self, token, body, query):
        self.engine.complete_activity(token, str(body.get("result", "")))
        return {"ok": True}

    def _fail_activity(self, token, body, query):
        self.engine.fail_activity(token, str(body.get("error", "")))
        return {"ok": True}

    def _inject_fault(self, body, query):
        fault_id = self.engine.faults.inject(FaultSpec.from_dict(body))
        return {"fault_id": fault_id}

    def _list_faults(self, body, query):
        return {"faults": [f.to_dict() for f in self.engine.faults.list()]}

    def _clear_fault(self, fault_id, body, query):
        self.engine.faults.clear(fault_id)
        return {"ok": True}

    def _list_scenarios(self, body, query):
        if self.scenario_manager is None:
            return {"scenarios": []}
        return {"scenarios": self.scenario_manager.names()}

    def _run_scenario(self, name, body, query):
        if self.scenario_manager is None:
            raise _HttpError(503, "EnvironmentNotReady", "no scenario manager on this server")
        return {"scenario_run_id": self.scenario_manager.launch(name)}

    def _scenario_report(self, scenario_run_id, body, query):
        if self.scenario_manager is None:
            raise _HttpError(503, "EnvironmentNotReady", "no scenario manager on this server")
        report = self.scenario_manager.get(scenario_run_id)
        if report is None:
            raise _HttpError(404, "NotFound", f"no scenario run {scenario_run_id!r}")
        return report


class _RawResponse:
    def __init__(self, body: str, content_type: str, status: int = 200):
        self.body = body
        self.content_type = content_type
        self.status = status
