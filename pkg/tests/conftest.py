from __future__ import annotations

import time

import pytest

from duraflow.client import EngineClient
from duraflow.orchestrator import Engine
from duraflow.server import ApiServer
from duraflow.store import HistoryStore


@pytest.fixture
def live_server(tmp_path):
    """In-thread engine + HTTP server on an ephemeral port."""
    engine = Engine(HistoryStore(tmp_path / "data", fsync=False), tick_ms=20)
    engine.start()
    server = ApiServer(engine, port=0).start()
    yield server
    server.stop()
    engine.stop()


@pytest.fixture
def client(live_server):
    return EngineClient(live_server.address)


def wait_until(predicate, timeout=10.0, interval=0.03, message="condition never became true"):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if predicate():
            return
        time.sleep(interval)
    raise AssertionError(message)


@pytest.fixture
def wait_for():
    return wait_until
