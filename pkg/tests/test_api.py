import asyncio
import json

import pytest
from fastapi.testclient import TestClient

from swsk.api import create_app
from swsk.bus import Broker, QoS
from swsk.controller import MachineRole
from swsk.risk import RiskParams
from swsk.server import SafetyServer


@pytest.fixture
def rig(tmp_path):
    broker = Broker(seed=5)
    server = SafetyServer(broker.client("server"), "s1",
                          log_path=tmp_path / "events.jsonl", cmd_seed=5)
    server.start(heartbeat=False)
    server.register_worker("w1")
    server.register_machine("m1", RiskParams.parse("S2", "F2", "P2"))
    server.assign("w1", "m1")
    MachineRole("m1", "s1", broker.client("m1"))
    broker.advance_clock(100)
    client = TestClient(create_app(server))
    return broker, server, client


def test_workers_listing(rig):
    _, _, client = rig
    resp = client.get("/api/v1/workers")
    assert resp.status_code == 200
    (worker,) = resp.json()
    assert worker["worker_id"] == "w1"
    assert worker["assigned_machine"] == "m1"
    assert worker["assessment"] is None


def test_machines_listing(rig):
    _, _, client = rig
    (machine,) = client.get("/api/v1/machines").json()
    assert machine["machine_id"] == "m1"
    assert machine["risk_class"] == "e"
    assert machine["state"]["mode"] == "RUNNING"


def test_estop_roundtrip(rig):
    broker, server, client = rig
    resp = client.post("/api/v1/machines/m1/estop", json={"reason": "spill"})
    assert resp.status_code == 202
    cmd_id = resp.json()["cmd_id"]
    broker.advance_clock(500)
    (machine,) = client.get("/api/v1/machines").json()
    assert machine["state"]["mode"] == "EMERGENCY_STOP"
    assert server.state.commands[cmd_id]["acked"] is True

    resp = client.post("/api/v1/machines/m1/reset", json={"reason": "cleared"})
    assert resp.status_code == 202
    broker.advance_clock(500)
    (machine,) = client.get("/api/v1/machines").json()
    assert machine["state"]["mode"] == "RUNNING"


def test_estop_unknown_machine_error_envelope(rig):
    _, _, client = rig
    resp = client.post("/api/v1/machines/nope/estop", json={"reason": "x"})
    assert resp.status_code == 404
    body = resp.json()
    assert body["error"] is True and body["code"] == "not_found"
    assert "nope" in body["detail"]


def test_history_filters_by_worker_and_range(rig):
    broker, server, client = rig
    payload = json.dumps({
        "worker_id": "w1", "site_id": "s1", "recv_ts": 0, "gateway_seq": 0,
        "vitals": {"hr": 70, "spo2": 98, "body_temp_c": 36.8, "gsr_us": 5.0},
        "env": {"amb_temp_c": 22.0, "humidity": 45, "light": 300, "co2": 400,
                "voc": 100, "sound": 50},
        "motion": {"ax": 0, "ay": 0, "az": 9.81, "mag": 9.81},
        "flags": [], "battery": 90,
    }).encode()
    broker.client("gw").publish("swsk/v1/s1/worker/w1/telemetry", payload,
                                qos=QoS.AT_LEAST_ONCE)
    broker.advance_clock(100)
    events = client.get("/api/v1/workers/w1/history").json()
    assert any(ev["kind"] == "TELEMETRY" for ev in events)
    empty = client.get("/api/v1/workers/w1/history",
                       params={"from": 10_000_000}).json()
    assert empty == []
    resp = client.get("/api/v1/workers/ghost/history")
    assert resp.status_code == 404


def test_suitability_by_level_and_class(rig):
    _, _, client = rig
    verdict = client.post("/api/v1/suitability",
                          json={"stress_level": "L0", "risk_class": "e"}).json()
    assert verdict["allowed"] is True
    verdict = client.post("/api/v1/suitability",
                          json={"stress_level": "L4", "risk_class": "a"}).json()
    assert verdict["allowed"] is False
    # worker with no assessment yet defaults to L0; m1 is class e
    verdict = client.post("/api/v1/suitability",
                          json={"worker_id": "w1", "machine_id": "m1"}).json()
    assert verdict["allowed"] is True and verdict["machine_risk"] == "e"


def test_suitability_validation_errors(rig):
    _, _, client = rig
    assert client.post("/api/v1/suitability", json={}).status_code == 422
    assert client.post("/api/v1/suitability",
                       json={"stress_level": "L9", "risk_class": "a"}).status_code == 422
    assert client.post("/api/v1/suitability",
                       json={"stress_level": "L0", "machine_id": "ghost"}).status_code == 404


def test_stream_delivers_state_change(rig):
    broker, server, client = rig
    # drive the endpoint's generator directly; the test client would buffer
    # the never-ending body
    route = next(r for r in client.app.routes if getattr(r, "path", "") == "/api/v1/stream")
    body = route.endpoint().body_iterator
    server.issue_estop("m1", "operator", "drill jam")
    broker.advance_clock(500)
    async def drive():
        change = None
        seen = 0
        async for chunk in body:
            assert chunk.endswith("\n\n")
            seen += 1
            data = [line for line in chunk.splitlines() if line.startswith("data:")]
            if data:
                event = json.loads(data[0][len("data:"):])
                if event["kind"] == "STATE_CHANGE":
                    change = event
            if change is not None or seen >= 5:
                break
        await body.aclose()
        return change

    change = asyncio.run(drive())
    assert change is not None
    assert change["payload"]["mode"] == "EMERGENCY_STOP"
