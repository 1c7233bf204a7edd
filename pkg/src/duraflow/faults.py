"""Fault injection registry.

Faults act at the activity-executor boundary rather than the network stack:
when the orchestrator hands out an activity task it attaches directives for
every active fault matching the activity type or the polling worker, and the
worker's executor enacts them (sleep, raise, or crash) before running the
real implementation.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass
from typing import Any

from duraflow.model import EngineError, now_ms

KIND_LATENCY = "Latency"
KIND_UNAVAILABLE = "Unavailable"
KIND_ERROR_N_TIMES = "ErrorNTimes"
KIND_CRASH_WORKER = "CrashWorker"

FAULT_KINDS = (KIND_LATENCY, KIND_UNAVAILABLE, KIND_ERROR_N_TIMES, KIND_CRASH_WORKER)


class DuplicateFault(EngineError):
    code = "DuplicateFault"


class UnknownFault(EngineError):
    code = "UnknownFault"


@dataclass
class FaultSpec:
    target: str  # activity_type or worker id
    kind: str
    fault_id: str = ""
    enabled: bool = True
    delay_ms: int = 0  # Latency
    duration_ms: int = 0  # Unavailable window
    n: int = 0  # ErrorNTimes budget
    error: str = "injected fault"  # ErrorNTimes / Unavailable message
    injected_at_ms: int = 0
    remaining: int = 0  # live ErrorNTimes counter

    def validate(self) -> None:
        if not self.target:
            raise ValueError("fault target must be non-empty")
        if self.kind not in FAULT_KINDS:
            raise ValueError(f"unknown fault kind {self.kind!r}; one of {FAULT_KINDS}")
        if self.kind == KIND_LATENCY and self.delay_ms <= 0:
            raise ValueError("Latency faults need delay_ms > 0")
        if self.kind == KIND_UNAVAILABLE and self.duration_ms <= 0:
            raise ValueError("Unavailable faults need duration_ms > 0")
        if self.kind == KIND_ERROR_N_TIMES and self.n <= 0:
            raise ValueError("ErrorNTimes faults need n > 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "fault_id": self.fault_id,
            "target": self.target,
            "kind": self.kind,
            "enabled": self.enabled,
            "delay_ms": self.delay_ms,
            "duration_ms": self.duration_ms,
            "n": self.n,
            "error": self.error,
            "injected_at_ms": self.injected_at_ms,
            "remaining": self.remaining,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> FaultSpec:
        return cls(
            target=str(data.get("target", "")),
            kind=str(data.get("kind", "")),
            fault_id=str(data.get("fault_id", "")),
            enabled=bool(data.get("enabled", True)),
            delay_ms=int(data.get("delay_ms", 0)),
            duration_ms=int(data.get("duration_ms", 0)),
            n=int(data.get("n", 0)),
            error=str(data.get("error", "injected fault")),
        )


class FaultTable:
    """Thread-safe registry consulted on every activity delivery."""

    def __init__(self):
        self._lock = threading.Lock()
        self._faults: dict[str, FaultSpec] = {}

    def inject(self, spec: FaultSpec) -> str:
        spec.validate()
        with self._lock:
            for existing in self._faults.values():
                if (
                    existing.enabled
                    and existing.target == spec.target
                    and existing.kind == spec.kind
                ):
                    raise DuplicateFault(
                        f"active {spec.kind} fault already set on {spec.target!r} "
                        f"({existing.fault_id})"
                    )
            spec.fault_id = spec.fault_id or f"fault-{uuid.uuid4().hex[:8]}"
            spec.injected_at_ms = now_ms()
            spec.remaining = spec.n
            self._faults[spec.fault_id] = spec
            return spec.fault_id

    def clear(self, fault_id: str) -> None:
        with self._lock:
            if fault_id not in self._faults:
                raise UnknownFault(f"no fault with id {fault_id!r}")
            del self._faults[fault_id]

    def clear_all(self) -> None:
        with self._lock:
            self._faults.clear()

    def list(self) -> list[FaultSpec]:
        with self._lock:
            return sorted(self._faults.values(), key=lambda f: f.injected_at_ms)

    def directives_for(self, activity_type: str, worker_id: str | None) -> list[dict[str, Any]]:
        """Consume and return the directives to enact for one delivery."""
        now = now_ms()
        directives: list[dict[str, Any]] = []
        with self._lock:
            for spec in list(self._faults.values()):
                if not spec.enabled or spec.target not in (activity_type, worker_id):
                    continue
                if spec.kind == KIND_LATENCY:
                    directives.append({"kind": "latency", "delay_ms": spec.delay_ms})
                elif spec.kind == KIND_UNAVAILABLE:
                    if now < spec.injected_at_ms + spec.duration_ms:
                        directives.append(
                            {"kind": "error", "error": f"service unavailable: {spec.error}"}
                        )
                elif spec.kind == KIND_ERROR_N_TIMES:
                    if spec.remaining > 0:
                        spec.remaining -= 1
                        directives.append({"kind": "error", "error": spec.error})
                elif spec.kind == KIND_CRASH_WORKER:
                    # One-shot, otherwise restarted workers die forever.
                    spec.enabled = False
                    directives.append({"kind": "crash"})
        return directives
