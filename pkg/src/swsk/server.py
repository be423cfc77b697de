"""Central safety service: registry, telemetry ingestion, command dispatch,
event-sourced persistence with replay, and heartbeat emission.

Every state transition is an EventRecord appended to a JSON-lines log; the
live in-memory state is produced by applying each event through the same
reducer that replay uses, so replay-from-genesis equality holds by
construction for everything the state tracks.
"""

from __future__ import annotations

import hashlib
import json
import random
import uuid
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .bus import BusClient, QoS
from .engine import (Alert, AlertSeverity, Command, DecisionPolicy, EngineConfig,
                     Notification, Observation, RulePolicy, StressLevel,
                     WorkerSession, assess_suitability)
from .risk import RiskClass, RiskParams, classify_risk

EVENT_KINDS = ("TELEMETRY", "ALERT", "ASSESSMENT", "COMMAND_ISSUED", "COMMAND_ACKED",
               "STATE_CHANGE", "REGISTRY_CHANGE", "NOTIFICATION")
SNAPSHOT_EVERY = 10_000
CONFIRM_TIMEOUT_MS = 5000
RECENT_EVENTS_CAP = 50_000


class NotFound(KeyError):
    pass


class ReplayError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class EventRecord:
    event_seq: int
    ts: int
    kind: str
    payload: dict

    def to_json(self) -> str:
        return json.dumps({"event_seq": self.event_seq, "ts": self.ts,
                           "kind": self.kind, "payload": self.payload},
                          sort_keys=True, separators=(",", ":"))


# --- event-sourced state ------------------------------------------------------

@dataclass
class ServerState:
    """Everything reconstructible from the event log."""

    workers: dict[str, dict] = field(default_factory=dict)
    machines: dict[str, dict] = field(default_factory=dict)
    assignments: dict[str, str] = field(default_factory=dict)
    latest_assessment: dict[str, dict] = field(default_factory=dict)
    latest_telemetry: dict[str, dict] = field(default_factory=dict)
    commands: dict[str, dict] = field(default_factory=dict)
    alerts: list[dict] = field(default_factory=list)
    counters: dict[str, int] = field(default_factory=dict)
    last_event_seq: int = -1

    def bump(self, key: str) -> None:
        self.counters[key] = self.counters.get(key, 0) + 1

    def snapshot(self) -> dict:
        return {
            "workers": self.workers,
            "machines": self.machines,
            "assignments": self.assignments,
            "latest_assessment": self.latest_assessment,
            "latest_telemetry": self.latest_telemetry,
            "commands": self.commands,
            "alerts": self.alerts[-500:],
            "counters": self.counters,
            "last_event_seq": self.last_event_seq,
        }

    def state_hash(self) -> str:
        blob = json.dumps(self.snapshot(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def apply_event(state: ServerState, event: EventRecord) -> None:
    if event.event_seq != state.last_event_seq + 1:
        raise ReplayError(f"event_seq gap: expected {state.last_event_seq + 1}, "
                          f"got {event.event_seq}")
    state.last_event_seq = event.event_seq
    p = event.payload
    kind = event.kind
    if kind == "REGISTRY_CHANGE":
        action = p["action"]
        if action == "register_worker":
            state.workers[p["worker_id"]] = {"meta": p.get("meta", {}), "registered_at": event.ts}
        elif action == "register_machine":
            state.machines[p["machine_id"]] = {
                "params": p["params"], "risk_class": p["risk_class"], "state": None}
        elif action == "assign":
            state.assignments[p["worker_id"]] = p["machine_id"]
        elif action == "unassign":
            state.assignments.pop(p["worker_id"], None)
    elif kind == "TELEMETRY":
        state.latest_telemetry[p["worker_id"]] = p
        state.bump("telemetry")
    elif kind == "ALERT":
        state.alerts.append(p)
        state.bump("alerts")
    elif kind == "ASSESSMENT":
        state.latest_assessment[p["worker_id"]] = p
    elif kind == "COMMAND_ISSUED":
        state.commands[p["cmd_id"]] = dict(p, acked=False)
    elif kind == "COMMAND_ACKED":
        if p["cmd_id"] in state.commands:
            state.commands[p["cmd_id"]]["acked"] = True
    elif kind == "STATE_CHANGE":
        machine = state.machines.get(p["machine_id"])
        if machine is not None:
            machine["state"] = p
    elif kind == "NOTIFICATION":
        state.bump("notifications")
    else:
        raise ReplayError(f"unknown event kind {kind!r} at event_seq {event.event_seq}")


# --- persistence ---------------------------------------------------------------

class EventLog:
    """Append-only JSONL log with periodic snapshots."""

    def __init__(self, path: str | Path | None) -> None:
        self.path = Path(path) if path is not None else None
        self._fh = self.path.open("a", encoding="utf-8") if self.path else None
        self.records: list[EventRecord] = []

    def append(self, event: EventRecord, state: ServerState) -> None:
        self.records.append(event)
        if self._fh is not None:
            self._fh.write(event.to_json() + "\n")
            self._fh.flush()
            if (event.event_seq + 1) % SNAPSHOT_EVERY == 0:
                snap = self.path.with_suffix(f".snapshot-{event.event_seq}.json")
                snap.write_text(json.dumps(state.snapshot(), sort_keys=True))

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def replay(path: str | Path) -> ServerState:
    """Rebuild state from a JSONL event log.

    A corrupt final line is tolerated (crash-truncated tail); corruption in
    the middle of the log raises ReplayError naming the last good event_seq.
    """
    state = ServerState()
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            event = EventRecord(doc["event_seq"], doc["ts"], doc["kind"], doc["payload"])
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            if i == len(lines) - 1:
                break  # truncated tail: stop at the last valid record
            raise ReplayError(f"corrupt record after event_seq {state.last_event_seq}: {exc}") from exc
        apply_event(state, event)
    return state


# --- the service ----------------------------------------------------------------

class SafetyServer:
    """Single logical writer for the event log and registry."""

    def __init__(self, client: BusClient, site: str, config: EngineConfig | None = None,
                 log_path: str | Path | None = None,
                 policy: DecisionPolicy | None = None,
                 cmd_seed: int | None = None) -> None:
        self.client = client
        self.site = site
        self.config = config or EngineConfig()
        self.config.validate()
        self.state = ServerState()
        self.log = EventLog(log_path)
        self._rng = random.Random(cmd_seed) if cmd_seed is not None else None
        self.policy = policy or RulePolicy(self._new_cmd_id)
        self.sessions: dict[str, WorkerSession] = {}
        self.quarantined = 0
        self.malformed = 0
        self._last_gateway_seq: dict[str, int] = {}
        self._pending_confirm: dict[str, int] = {}
        self._event_listeners: list[Callable[[EventRecord], None]] = []
        self._heartbeat_on = False
        self._started = False

    # -- lifecycle --

    def start(self, heartbeat: bool = True) -> None:
        self.client.subscribe(f"swsk/v1/{self.site}/worker/+/telemetry", self._on_telemetry)
        self.client.subscribe(f"swsk/v1/{self.site}/machine/+/state", self._on_state)
        self._started = True
        if heartbeat:
            self._heartbeat_on = True
            self._schedule_heartbeat()

    def pause_heartbeat(self) -> None:
        self._heartbeat_on = False

    def resume_heartbeat(self) -> None:
        if not self._heartbeat_on:
            self._heartbeat_on = True

    def add_event_listener(self, fn: Callable[[EventRecord], None]) -> None:
        self._event_listeners.append(fn)

    def close(self) -> None:
        self.log.close()

    # -- registry --

    def register_worker(self, worker_id: str, meta: dict | None = None) -> None:
        self._emit("REGISTRY_CHANGE", {"action": "register_worker", "worker_id": worker_id,
                                       "meta": meta or {}})
        # re-registration starts a fresh session (baseline resets)
        self.sessions[worker_id] = WorkerSession(worker_id, self.config)

    def register_machine(self, machine_id: str, params: RiskParams) -> RiskClass:
        risk = classify_risk(params)
        self._emit("REGISTRY_CHANGE", {
            "action": "register_machine", "machine_id": machine_id,
            "params": {"s": params.severity.value, "f": params.frequency.value,
                       "p": params.avoidance.value},
            "risk_class": risk.name})
        return risk

    def assign(self, worker_id: str, machine_id: str) -> None:
        if worker_id not in self.state.workers:
            raise NotFound(f"worker {worker_id!r} not registered")
        if machine_id not in self.state.machines:
            raise NotFound(f"machine {machine_id!r} not registered")
        self._emit("REGISTRY_CHANGE", {"action": "assign", "worker_id": worker_id,
                                       "machine_id": machine_id})

    # -- queries --

    def now_ms(self) -> int:
        return self.client.broker.now_ms()

    def suitability(self, level: StressLevel, risk: RiskClass):
        return assess_suitability(level, risk)

    def worker_level(self, worker_id: str) -> StressLevel:
        assessment = self.state.latest_assessment.get(worker_id)
        if assessment is None:
            return StressLevel.L0
        return StressLevel[assessment["assessment"]["level"]]

    def events_between(self, from_seq: int, to_seq: int | None = None,
                       worker_id: str | None = None) -> list[EventRecord]:
        out = []
        for ev in self.log.records:
            if ev.event_seq < from_seq:
                continue
            if to_seq is not None and ev.event_seq > to_seq:
                break
            if worker_id is not None and ev.payload.get("worker_id") != worker_id:
                continue
            out.append(ev)
        return out

    # -- command path --

    def issue_estop(self, machine_id: str, source: str, reason: str) -> str:
        if machine_id not in self.state.machines:
            raise NotFound(f"machine {machine_id!r} not registered")
        cmd = Command(self._new_cmd_id(), "ESTOP", machine_id, self.now_ms(), reason, source)
        self._dispatch(cmd)
        return cmd.cmd_id

    def issue_reset(self, machine_id: str, reason: str) -> str:
        if machine_id not in self.state.machines:
            raise NotFound(f"machine {machine_id!r} not registered")
        cmd = Command(self._new_cmd_id(), "RESET", machine_id, self.now_ms(), reason, "operator")
        self._dispatch(cmd)
        return cmd.cmd_id

    def _new_cmd_id(self) -> str:
        if self._rng is not None:
            return str(uuid.UUID(int=self._rng.getrandbits(128), version=4))
        return str(uuid.uuid4())

    def _dispatch(self, cmd: Command) -> None:
        payload = dict(cmd.to_payload(), machine_id=cmd.machine_id)
        self._emit("COMMAND_ISSUED", payload)
        topic = f"swsk/v1/{self.site}/machine/{cmd.machine_id}/cmd"
        self.client.publish(topic, json.dumps(cmd.to_payload(), sort_keys=True).encode(),
                            qos=QoS.AT_LEAST_ONCE)
        self._pending_confirm[cmd.cmd_id] = self.now_ms()
        self.client.broker.schedule(CONFIRM_TIMEOUT_MS,
                                    lambda: self._check_confirm(cmd.cmd_id, cmd.machine_id))

    def _check_confirm(self, cmd_id: str, machine_id: str) -> None:
        if cmd_id in self._pending_confirm:
            self._emit("NOTIFICATION", {
                "text": f"command {cmd_id} to {machine_id} unconfirmed after "
                        f"{CONFIRM_TIMEOUT_MS} ms", "kind": "escalation",
                "cmd_id": cmd_id, "machine_id": machine_id})

    # -- ingestion --

    def _on_telemetry(self, msg) -> None:
        try:
            doc = json.loads(msg.payload)
            worker_id = doc["worker_id"]
            gateway_seq = int(doc["gateway_seq"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            self.malformed += 1
            self._emit("NOTIFICATION", {"text": "malformed telemetry payload",
                                        "kind": "malformed"})
            return
        if worker_id not in self.state.workers:
            self.quarantined += 1
            self._emit("NOTIFICATION", {"text": f"telemetry from unregistered worker {worker_id}",
                                        "kind": "quarantine", "worker_id": worker_id})
            return
        last = self._last_gateway_seq.get(worker_id, -1)
        if gateway_seq <= last:
            return  # QoS 1 redelivery duplicate
        self._last_gateway_seq[worker_id] = gateway_seq

        self._emit("TELEMETRY", doc)
        obs = self._observation(doc)
        session = self.sessions[worker_id]
        alerts, assessment = session.observe(obs)
        if assessment is not None:
            self._emit("ASSESSMENT", {"worker_id": worker_id,
                                      "assessment": assessment.to_payload()})
        for alert in alerts:
            self._emit("ALERT", {"worker_id": alert.worker_id, "code": alert.code,
                                 "severity": alert.severity.value,
                                 "onset_ts": alert.onset_ts, "detail": alert.detail})
        if alerts:
            assigned = self.state.assignments.get(worker_id)
            commands, notifications = self.policy.plan_actions(
                alerts, assessment, assigned, self.now_ms())
            for note in notifications:
                self._emit("NOTIFICATION", {"text": note.text, "kind": "alert",
                                            "worker_id": note.worker_id,
                                            "alert_code": note.alert_code})
            for cmd in commands:
                if self._already_stopped(cmd.machine_id) and cmd.type == "ESTOP":
                    self._emit("NOTIFICATION", {
                        "text": f"{cmd.reason} (machine {cmd.machine_id} already stopped)",
                        "kind": "alert", "worker_id": worker_id})
                    continue
                self._dispatch(cmd)

    def _already_stopped(self, machine_id: str) -> bool:
        machine = self.state.machines.get(machine_id)
        return bool(machine and machine.get("state")
                    and machine["state"]["mode"] == "EMERGENCY_STOP")

    def _observation(self, doc: dict) -> Observation:
        vitals = doc.get("vitals", {})
        env = doc.get("env", {})
        motion = doc.get("motion")
        flags = doc.get("flags", [])
        return Observation(
            ts=int(doc.get("recv_ts", self.now_ms())),
            hr=vitals.get("hr"),
            spo2=vitals.get("spo2"),
            body_temp_c=vitals.get("body_temp_c"),
            gsr_us=vitals.get("gsr_us"),
            amb_temp_c=float(env.get("amb_temp_c", 20.0)),
            co2=float(env.get("co2", 400.0)),
            sound=float(env.get("sound", 50.0)),
            motion_mag=None if motion is None else motion.get("mag"),
            button_estop="BUTTON_ESTOP" in flags,
            sensor_fault="SENSOR_FAULT" in flags,
        )

    def _on_state(self, msg) -> None:
        try:
            payload = json.loads(msg.payload)
            machine_id = payload["machine_id"]
        except (json.JSONDecodeError, KeyError, TypeError):
            self.malformed += 1
            return
        ack_of = payload.get("ack_of")
        if ack_of and ack_of in self._pending_confirm:
            del self._pending_confirm[ack_of]
            self._emit("COMMAND_ACKED", {"cmd_id": ack_of, "machine_id": machine_id,
                                         "mode": payload["mode"]})
        machine = self.state.machines.get(machine_id)
        known = machine.get("state") if machine else None
        if machine is not None and (known is None or known["mode"] != payload["mode"]):
            self._emit("STATE_CHANGE", payload)

    # -- heartbeat --

    def _schedule_heartbeat(self) -> None:
        def beat() -> None:
            if not self._started:
                return
            if self._heartbeat_on:
                self.client.publish(f"swsk/v1/{self.site}/server/heartbeat",
                                    json.dumps({"ts": self.now_ms()}).encode(),
                                    qos=QoS.AT_MOST_ONCE)
            self.client.broker.schedule(1000, beat)
        self.client.broker.schedule(0, beat)

    # -- event emission --

    def _emit(self, kind: str, payload: dict) -> EventRecord:
        event = EventRecord(self.state.last_event_seq + 1, self.now_ms(), kind, payload)
        apply_event(self.state, event)
        self.log.append(event, self.state)
        for listener in self._event_listeners:
            listener(event)
        return event
