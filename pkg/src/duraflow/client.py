"""HTTP client for the engine API, used by workers, the CLI and scenarios."""

from __future__ import annotations

import threading
from typing import Any

import requests

from duraflow.model import ActivityTask, Command, EngineError, HistoryEvent, WorkflowTask, command_to_dict


class TransportError(EngineError):
    """The server could not be reached; callers may retry."""

    code = "TransportError"


class EngineApiError(EngineError):
    """A structured error response from the server."""

    def __init__(self, code: str, message: str, status: int):
        super().__init__(message)
        self.code = code
        self.status = status


class EngineClient:
    def __init__(self, base_url: str, request_timeout_s: float = 70.0):
        self.base_url = base_url.rstrip("/")
        self.request_timeout_s = request_timeout_s
        self._local = threading.local()

    def _session(self) -> requests.Session:
        session = getattr(self._local, "session", None)
        if session is None:
            session = requests.Session()
            self._local.session = session
        return session

    def _request(
        self,
        method: str,
        path: str,
        body: dict[str, Any] | None = None,
        params: dict[str, str] | None = None,
        timeout_s: float | None = None,
    ) -> Any:
        url = f"{self.base_url}/api/v1{path}"
        try:
            response = self._session().request(
                method,
                url,
                json=body,
                params=params,
                timeout=timeout_s or self.request_timeout_s,
            )
        except requests.RequestException as exc:
            raise TransportError(f"{method} {url}: {exc}") from exc
        if response.status_code == 204:
            return None
        payload = response.json() if response.content else {}
        if response.status_code >= 400:
            error = payload.get("error", {}) if isinstance(payload, dict) else {}
            raise EngineApiError(
                code=error.get("code", "UnknownError"),
                message=error.get("message", response.text),
                status=response.status_code,
            )
        return payload

    # -- workflow control ---------------------------------------------------------

    def health(self) -> bool:
        try:
            return self._request("GET", "/health", timeout_s=2.0)["status"] == "ok"
        except (TransportError, EngineApiError):
            return False

    def start_workflow(
        self, workflow_type: str, workflow_id: str, input_payload: str, task_queue: str
    ) -> str:
        body = {
            "workflow_type": workflow_type,
            "workflow_id": workflow_id,
            "input": input_payload,
            "task_queue": task_queue,
        }
        return self._request("POST", "/workflows", body)["run_id"]

    def list_workflows(
        self, status: str | None = None, workflow_type: str | None = None
    ) -> list[dict[str, Any]]:
        params = {}
        if status:
            params["status"] = status
        if workflow_type:
            params["type"] = workflow_type
        return self._request("GET", "/workflows", params=params)["executions"]

    def describe(self, run_id: str) -> dict[str, Any]:
        return self._request("GET", f"/workflows/{run_id}")

    def get_history(self, run_id: str, from_event_id: int = 1) -> list[HistoryEvent]:
        payload = self._request(
            "GET", f"/workflows/{run_id}/history", params={"from_event_id": str(from_event_id)}
        )
        return [HistoryEvent.from_record(r) for r in payload["events"]]

    def stack_trace(self, run_id: str) -> dict[str, Any]:
        return self._request("GET", f"/workflows/{run_id}/stack-trace")

    def trace_graph(self, run_id: str) -> dict[str, Any]:
        return self._request("GET", f"/workflows/{run_id}/trace-graph")

    def trace_graph_dot(self, run_id: str) -> str:
        url = f"{self.base_url}/api/v1/workflows/{run_id}/trace-graph"
        try:
            response = self._session().get(
                url, params={"format": "dot"}, timeout=self.request_timeout_s
            )
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        response.raise_for_status()
        return response.text

    def signal(self, run_id: str, name: str, payload: str = "") -> None:
        self._request("POST", f"/workflows/{run_id}/signal", {"name": name, "payload": payload})

    def terminate(self, run_id: str, reason: str = "") -> None:
        self._request("POST", f"/workflows/{run_id}/terminate", {"reason": reason})

    def nudge(self, run_id: str) -> None:
        self._request("POST", f"/workflows/{run_id}/nudge", {})

    # -- task protocol ---------------------------------------------------------------

    def poll_workflow_task(
        self, queue: str, max_wait_ms: int = 1_000, worker_id: str | None = None
    ) -> WorkflowTask | None:
        payload = self._request(
            "POST",
            f"/task-queues/{queue}/workflow-tasks:poll",
            {"max_wait_ms": max_wait_ms, "worker_id": worker_id},
            timeout_s=max_wait_ms / 1000.0 + 10.0,
        )
        return WorkflowTask.from_dict(payload["task"]) if payload else None

    def poll_activity_task(
        self, queue: str, max_wait_ms: int = 1_000, worker_id: str | None = None
    ) -> ActivityTask | None:
        payload = self._request(
            "POST",
            f"/task-queues/{queue}/activity-tasks:poll",
            {"max_wait_ms": max_wait_ms, "worker_id": worker_id},
            timeout_s=max_wait_ms / 1000.0 + 10.0,
        )
        return ActivityTask.from_dict(payload["task"]) if payload else None

    def complete_workflow_task(self, task_token: str, commands: list[Command]) -> None:
        self._request(
            "POST",
            f"/workflow-tasks/{task_token}:complete",
            {"commands": [command_to_dict(c) for c in commands]},
        )

    def fail_workflow_task(self, task_token: str, error: str) -> None:
        self._request("POST", f"/workflow-tasks/{task_token}:fail", {"error": error})

    def complete_activity(self, task_token: str, result: str) -> None:
        self._request("POST", f"/activity-tasks/{task_token}:complete", {"result": result})

    def fail_activity(self, task_token: str, error: str) -> None:
        self._request("POST", f"/activity-tasks/{task_token}:fail", {"error": error})

    # -- faults / scenarios -------------------------------------------------------------

    def inject_fault(self, spec: dict[str, Any]) -> str:
        return self._request("POST", "/faults", spec)["fault_id"]

    def clear_fault(self, fault_id: str) -> None:
        self._request("DELETE", f"/faults/{fault_id}")

    def list_faults(self) -> list[dict[str, Any]]:
        return self._request("GET", "/faults")["faults"]

    def list_scenarios(self) -> list[str]:
        return self._request("GET", "/scenarios")["scenarios"]

    def run_scenario(self, name: str) -> str:
        return self._request("POST", f"/scenarios/{name}:run", {})["scenario_run_id"]

    def scenario_report(self, scenario_run_id: str) -> dict[str, Any]:
        return self._request("GET", f"/scenarios/runs/{scenario_run_id}")
