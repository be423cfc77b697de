"""Deterministic end-to-end simulation: devices -> gateways -> bus -> server
-> machine controllers, all driven by one virtual clock.

Default link latency is 20 ms per hop. The `link` section of a scenario can
override per-role faults:

    "link": {"gateway": {...}, "server": {...}, "machine": {...}}

where each value holds LinkFault fields (latency_ms, jitter_ms, drop_prob,
partitions). Gateway partitions additionally drive the gateway's
store-and-forward buffer.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .bus import Broker, LinkFault
from .controller import MachineRole, Mode
from .device import DeviceSim
from .engine import EngineConfig
from .gateway import Gateway, GatewayConfig
from .risk import RiskParams
from .scenario import ScenarioScript
from .server import SafetyServer

DEFAULT_HOP_LATENCY_MS = 20
DRAIN_MS = 6000  # let QoS 1 redeliveries and confirmations settle


@dataclass
class SimReport:
    scenario: str
    seed: int
    alert_counts: dict[str, int]
    commands: list[dict]
    final_modes: dict[str, str]
    event_log: str
    event_log_sha256: str
    verdict: str
    failures: list[str] = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True, indent=2)

    def summary_text(self) -> str:
        lines = [f"scenario {self.scenario} (seed {self.seed}): {self.verdict}"]
        for code, n in sorted(self.alert_counts.items()):
            lines.append(f"  alert {code}: {n}")
        for cmd in self.commands:
            lat = cmd.get("latency_ms")
            lines.append(f"  command {cmd['type']} -> {cmd['machine_id']}"
                         f" (source {cmd['source']}, latency {lat} ms)")
        for mid, mode in sorted(self.final_modes.items()):
            lines.append(f"  machine {mid}: {mode}")
        for failure in self.failures:
            lines.append(f"  FAIL: {failure}")
        return "\n".join(lines)


def _fault(overrides: dict | None, default_latency: int = DEFAULT_HOP_LATENCY_MS) -> LinkFault:
    doc = dict(overrides or {})
    doc.setdefault("latency_ms", default_latency)
    if "partitions" in doc:
        doc["partitions"] = [tuple(p) for p in doc["partitions"]]
    return LinkFault(**doc)


def run_simulation(scenario: ScenarioScript, out_dir: str | Path,
                   config: EngineConfig | None = None) -> SimReport:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / f"{scenario.name}.events.jsonl"
    log_path.unlink(missing_ok=True)

    broker = Broker(seed=scenario.seed, mode="sim")
    server_client = broker.client("server", _fault(scenario.link.get("server")))
    server = SafetyServer(server_client, scenario.site, config=config,
                          log_path=log_path, cmd_seed=scenario.seed)
    server.start(heartbeat=True)

    # registry before any traffic so nothing is quarantined
    for mspec in scenario.machines:
        server.register_machine(mspec.machine_id,
                                RiskParams.parse(mspec.s, mspec.f, mspec.p))
    for wscript in scenario.workers:
        server.register_worker(wscript.worker_id)
    for wid, mid in scenario.assignments.items():
        server.assign(wid, mid)

    machine_fault = _fault(scenario.link.get("machine"))
    machines: dict[str, MachineRole] = {}
    for mspec in scenario.machines:
        cmd_client = broker.client(f"machine:{mspec.machine_id}", machine_fault)
        hb_client = broker.client(f"machine-hb:{mspec.machine_id}",
                                  LinkFault(latency_ms=machine_fault.latency_ms))
        machines[mspec.machine_id] = MachineRole(
            mspec.machine_id, scenario.site, cmd_client, heartbeat_client=hb_client)

    gateway_fault = _fault(scenario.link.get("gateway"))
    gateways: dict[str, Gateway] = {}
    for wscript in scenario.workers:
        client = broker.client(f"gateway:{wscript.worker_id}", gateway_fault)
        gw = Gateway(GatewayConfig(wscript.worker_id, scenario.site), client)
        gateways[wscript.worker_id] = gw

        def make_emit(gw: Gateway):
            return lambda data: gw.on_frame(data, broker.now_ms())

        device = DeviceSim(wscript, scenario.duration_s, scenario.sample_rate_hz,
                           scenario.seed, make_emit(gw))

        def schedule_device(dev: DeviceSim = device, gw: Gateway = gw) -> None:
            k = {"i": 0}

            def step() -> None:
                if k["i"] >= dev.sample_count():
                    return
                gw.on_motion(0.0, 0.0, 9.81, broker.now_ms())
                dev.tick(k["i"] * dev.period_ms)
                k["i"] += 1
                broker.schedule(dev.period_ms, step)

            broker.schedule(0, step)

        schedule_device()

        # gateway store-and-forward across its own partition windows
        for start, end in gateway_fault.partitions:
            broker.schedule(start - broker.now_ms(), gw.on_disconnect)
            broker.schedule(end - broker.now_ms(), gw.on_reconnect)

    for start, end in scenario.server_pause:
        broker.schedule(start, server.pause_heartbeat)
        broker.schedule(end, server.resume_heartbeat)

    total_ms = int(scenario.duration_s * 1000) + DRAIN_MS
    step_ms = 500
    for _ in range(0, total_ms, step_ms):
        broker.advance_clock(step_ms)
    server.close()

    return _build_report(scenario, server, machines, gateways, log_path)


def _build_report(scenario: ScenarioScript, server: SafetyServer,
                  machines: dict[str, MachineRole], gateways: dict[str, Gateway],
                  log_path: Path) -> SimReport:
    alert_counts: dict[str, int] = {}
    state_changes: list[dict] = []
    commands: list[dict] = []
    for ev in server.log.records:
        if ev.kind == "ALERT":
            code = ev.payload["code"]
            alert_counts[code] = alert_counts.get(code, 0) + 1
        elif ev.kind == "COMMAND_ISSUED":
            commands.append({"cmd_id": ev.payload["cmd_id"], "type": ev.payload["type"],
                             "machine_id": ev.payload["machine_id"],
                             "source": ev.payload["source"],
                             "trigger_ts": ev.payload["issued_at"]})
        elif ev.kind == "STATE_CHANGE":
            state_changes.append(ev.payload)

    for cmd in commands:
        stop_ts = None
        for change in state_changes:
            if (change["machine_id"] == cmd["machine_id"]
                    and change["mode"] != Mode.RUNNING.value
                    and change["updated_at"] >= cmd["trigger_ts"]):
                stop_ts = change["updated_at"]
                break
        cmd["stop_ts"] = stop_ts
        cmd["latency_ms"] = None if stop_ts is None else stop_ts - cmd["trigger_ts"]

    final_modes = {mid: role.controller.state.mode.value for mid, role in machines.items()}
    log_hash = hashlib.sha256(log_path.read_bytes()).hexdigest()

    failures = _check_expectations(scenario.expectations, alert_counts, commands,
                                   final_modes, state_changes)
    stats = {
        "events": len(server.log.records),
        "state_hash": server.state.state_hash(),
        "quarantined": server.quarantined,
        "malformed": server.malformed,
        "state_changes": len(state_changes),
        "gateways": {wid: vars(gw.stats) for wid, gw in gateways.items()},
    }
    return SimReport(
        scenario=scenario.name, seed=scenario.seed, alert_counts=alert_counts,
        commands=commands, final_modes=final_modes,
        event_log=log_path.name, event_log_sha256=log_hash,
        verdict="FAIL" if failures else "PASS", failures=failures, stats=stats)


def _check_expectations(exp: dict, alert_counts: dict[str, int], commands: list[dict],
                        final_modes: dict[str, str], state_changes: list[dict]) -> list[str]:
    failures: list[str] = []
    estops = [c for c in commands if c["type"] == "ESTOP"]
    if exp.get("estop") is True and not estops:
        failures.append("expected an ESTOP command, none issued")
    if exp.get("estop") is False and estops:
        failures.append(f"expected no ESTOP, got {len(estops)}")
    within = exp.get("estop_within_ms")
    if within is not None:
        if not estops:
            failures.append("estop_within_ms set but no ESTOP issued")
        else:
            lat = estops[0]["latency_ms"]
            if lat is None or lat > within:
                failures.append(f"first ESTOP latency {lat} ms exceeds {within} ms")
    for mid, mode in exp.get("final_modes", {}).items():
        if final_modes.get(mid) != mode:
            failures.append(f"machine {mid} final mode {final_modes.get(mid)}, expected {mode}")
    for code, n in exp.get("alerts_at_least", {}).items():
        if alert_counts.get(code, 0) < n:
            failures.append(f"alert {code} count {alert_counts.get(code, 0)} < {n}")
    if "max_state_changes" in exp and len(state_changes) > exp["max_state_changes"]:
        failures.append(f"{len(state_changes)} state changes exceed {exp['max_state_changes']}")
    return failures
