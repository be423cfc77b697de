import json

import pytest

from swsk.bus import Broker, QoS
from swsk.controller import MachineRole, Mode
from swsk.engine import EngineConfig, StressLevel
from swsk.risk import RiskClass, RiskParams
from swsk.server import (EventRecord, NotFound, ReplayError, SafetyServer,
                         ServerState, apply_event, replay)


@pytest.fixture
def rig(tmp_path):
    broker = Broker(seed=1)
    server = SafetyServer(broker.client("server"), "s1",
                          log_path=tmp_path / "events.jsonl", cmd_seed=1)
    server.start(heartbeat=True)
    return broker, server


def telemetry_payload(worker_id="w1", gateway_seq=0, recv_ts=0, hr=70, co2=400,
                      flags=()):
    return json.dumps({
        "worker_id": worker_id, "site_id": "s1", "recv_ts": recv_ts,
        "gateway_seq": gateway_seq,
        "vitals": {"hr": hr, "spo2": 98, "body_temp_c": 36.8, "gsr_us": 5.0},
        "env": {"amb_temp_c": 22.0, "humidity": 45, "light": 300, "co2": co2,
                "voc": 100, "sound": 50},
        "motion": {"ax": 0, "ay": 0, "az": 9.81, "mag": 9.81},
        "flags": list(flags), "battery": 90,
    }).encode()


def publish_telemetry(broker, payload):
    broker.client("gw").publish("swsk/v1/s1/worker/w1/telemetry", payload,
                                qos=QoS.AT_LEAST_ONCE)
    broker.advance_clock(50)


def test_registry_and_risk_class_invariant(rig):
    _, server = rig
    risk = server.register_machine("m1", RiskParams.parse("S2", "F1", "P2"))
    assert risk == RiskClass.d
    assert server.state.machines["m1"]["risk_class"] == "d"
    server.register_worker("w1")
    server.assign("w1", "m1")
    assert server.state.assignments == {"w1": "m1"}
    with pytest.raises(NotFound):
        server.assign("w1", "nope")


def test_unknown_worker_quarantined(rig):
    broker, server = rig
    publish_telemetry(broker, telemetry_payload("ghost"))
    assert server.quarantined == 1
    broker.advance_clock(100)
    publish_telemetry(broker, telemetry_payload())
    assert server.quarantined == 2
    assert not any(ev.kind == "TELEMETRY" for ev in server.log.records)


def test_malformed_payload_counted(rig):
    broker, server = rig
    server.register_worker("w1")
    publish_telemetry(broker, b"{not json")
    assert server.malformed == 1
    kinds = [ev.kind for ev in server.log.records]
    assert "NOTIFICATION" in kinds


def test_telemetry_dedup_by_gateway_seq(rig):
    broker, server = rig
    server.register_worker("w1")
    publish_telemetry(broker, telemetry_payload(gateway_seq=0))
    publish_telemetry(broker, telemetry_payload(gateway_seq=0))
    publish_telemetry(broker, telemetry_payload(gateway_seq=1, recv_ts=1000))
    count = sum(1 for ev in server.log.records if ev.kind == "TELEMETRY")
    assert count == 2


def test_issue_estop_and_confirmation(rig, tmp_path):
    broker, server = rig
    server.register_machine("m1", RiskParams.parse("S1", "F1", "P1"))
    MachineRole("m1", "s1", broker.client("m1"))
    broker.advance_clock(100)
    cmd_id = server.issue_estop("m1", "operator", "drill jam")
    broker.advance_clock(1000)
    kinds = [ev.kind for ev in server.log.records]
    assert "COMMAND_ISSUED" in kinds and "COMMAND_ACKED" in kinds
    assert server.state.commands[cmd_id]["acked"] is True
    assert server.state.machines["m1"]["state"]["mode"] == "EMERGENCY_STOP"
    with pytest.raises(NotFound):
        server.issue_estop("nope", "operator", "x")


def test_unconfirmed_command_escalates(rig):
    broker, server = rig
    server.register_machine("m1", RiskParams.parse("S1", "F1", "P1"))
    # no controller attached: no state confirmation will ever come
    server.issue_estop("m1", "operator", "x")
    broker.advance_clock(6000)
    escalations = [ev for ev in server.log.records
                   if ev.kind == "NOTIFICATION" and ev.payload.get("kind") == "escalation"]
    assert len(escalations) == 1


def test_duplicate_state_publish_single_state_change(rig):
    broker, server = rig
    server.register_machine("m1", RiskParams.parse("S1", "F1", "P1"))
    state = {"machine_id": "m1", "mode": "EMERGENCY_STOP", "latched": True,
             "last_cause": "x", "updated_at": 5, "ack_of": None}
    payload = json.dumps(state).encode()
    pub = broker.client("m1pub")
    pub.publish("swsk/v1/s1/machine/m1/state", payload, qos=QoS.AT_LEAST_ONCE)
    pub.publish("swsk/v1/s1/machine/m1/state", payload, qos=QoS.AT_LEAST_ONCE)
    broker.advance_clock(500)
    changes = [ev for ev in server.log.records if ev.kind == "STATE_CHANGE"]
    assert len(changes) == 1


def test_heartbeat_cadence(rig):
    broker, server = rig
    beats = []
    broker.client("probe").subscribe("swsk/v1/s1/server/heartbeat",
                                     lambda m: beats.append(m))
    broker.advance_clock(10_000)
    assert 9 <= len(beats) <= 11


def test_event_seq_gapless(rig):
    broker, server = rig
    server.register_worker("w1")
    server.register_machine("m1", RiskParams.parse("S1", "F1", "P1"))
    for i in range(5):
        publish_telemetry(broker, telemetry_payload(gateway_seq=i, recv_ts=i * 1000))
    seqs = [ev.event_seq for ev in server.log.records]
    assert seqs == list(range(len(seqs)))


def test_worker_level_from_assessment(rig):
    _, server = rig
    assert server.worker_level("w1") == StressLevel.L0
    state = server.state
    ev = EventRecord(state.last_event_seq + 1, 0, "ASSESSMENT",
                     {"worker_id": "w1", "assessment": {"level": "L3", "score": 0.7}})
    apply_event(state, ev)
    assert server.worker_level("w1") == StressLevel.L3


# --- replay -------------------------------------------------------------------

def test_replay_empty_log(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    state = replay(path)
    assert state.workers == {} and state.last_event_seq == -1


def test_replay_matches_live(rig, tmp_path):
    broker, server = rig
    server.register_worker("w1")
    server.register_machine("m1", RiskParams.parse("S2", "F2", "P2"))
    server.assign("w1", "m1")
    MachineRole("m1", "s1", broker.client("m1"))
    for i in range(20):
        publish_telemetry(broker, telemetry_payload(gateway_seq=i, recv_ts=i * 1000))
    server.issue_estop("m1", "operator", "drill")
    broker.advance_clock(7000)
    server.close()
    rebuilt = replay(tmp_path / "events.jsonl")
    assert rebuilt.state_hash() == server.state.state_hash()
    assert rebuilt.snapshot() == server.state.snapshot()


def test_replay_truncated_tail(rig, tmp_path):
    broker, server = rig
    server.register_worker("w1")
    server.register_machine("m1", RiskParams.parse("S1", "F1", "P1"))
    server.close()
    path = tmp_path / "events.jsonl"
    full = path.read_text()
    path.write_text(full + '{"event_seq": 2, "ts": 99, "ki')  # crash mid-write
    state = replay(path)
    assert state.last_event_seq == 1


def test_replay_mid_log_corruption(tmp_path):
    path = tmp_path / "bad.jsonl"
    good = EventRecord(0, 0, "REGISTRY_CHANGE",
                       {"action": "register_worker", "worker_id": "w1", "meta": {}})
    good2 = EventRecord(1, 1, "NOTIFICATION", {"text": "x"})
    path.write_text(good.to_json() + "\n" + "garbage\n" + good2.to_json() + "\n")
    with pytest.raises(ReplayError, match="event_seq 0"):
        replay(path)


def test_replay_detects_seq_gap():
    state = ServerState()
    apply_event(state, EventRecord(0, 0, "NOTIFICATION", {"text": "a"}))
    with pytest.raises(ReplayError, match="gap"):
        apply_event(state, EventRecord(2, 0, "NOTIFICATION", {"text": "b"}))
