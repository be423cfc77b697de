"""Machine-mounted controller: latched e-stop state machine, idempotent
command handling, and a fail-safe heartbeat watchdog.

Safety posture: once EMERGENCY_STOP or SAFE_STOP is entered, only an
operator RESET returns the machine to RUNNING. Missing heartbeats while
RUNNING latch SAFE_STOP so operators can tell link loss from a safety
trigger.
"""

from __future__ import annotations

import enum
import json
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable

from .bus import BusClient, QoS

WATCHDOG_DEADLINE_MS = 3000  # 3 missed 1 Hz beats
SEEN_CMD_CAPACITY = 256


class Mode(enum.Enum):
    RUNNING = "RUNNING"
    EMERGENCY_STOP = "EMERGENCY_STOP"
    SAFE_STOP = "SAFE_STOP"


@dataclass(frozen=True, slots=True)
class Ack:
    cmd_id: str
    accepted: bool
    duplicate: bool = False
    reason: str = ""


@dataclass
class MachineState:
    machine_id: str
    mode: Mode = Mode.RUNNING
    latched: bool = False
    last_cause: str = ""
    heartbeat_deadline: int = WATCHDOG_DEADLINE_MS
    updated_at: int = 0

    def to_payload(self, ack_of: str | None = None) -> dict:
        return {
            "machine_id": self.machine_id,
            "mode": self.mode.value,
            "latched": self.latched,
            "last_cause": self.last_cause,
            "updated_at": self.updated_at,
            "ack_of": ack_of,
        }


class MachineController:
    """Strictly sequential: commands and ticks are totally ordered."""

    def __init__(self, machine_id: str, *,
                 watchdog_ms: int = WATCHDOG_DEADLINE_MS,
                 publish_state: Callable[[dict], None] | None = None) -> None:
        self.state = MachineState(machine_id, heartbeat_deadline=watchdog_ms)
        self.watchdog_ms = watchdog_ms
        self._publish_state = publish_state or (lambda payload: None)
        self._seen: OrderedDict[str, Ack] = OrderedDict()

    # -- inputs --

    def handle_command(self, cmd: dict, now_ms: int) -> Ack:
        try:
            cmd_id = cmd["cmd_id"]
            ctype = cmd["type"]
            source = cmd["source"]
            reason = cmd.get("reason", "")
        except (KeyError, TypeError) as exc:
            return Ack(cmd_id=str(cmd.get("cmd_id", "?")) if isinstance(cmd, dict) else "?",
                       accepted=False, reason=f"malformed command: {exc}")
        if cmd_id in self._seen:
            prior = self._seen[cmd_id]
            return Ack(cmd_id, prior.accepted, duplicate=True, reason=prior.reason)

        if ctype == "ESTOP":
            ack = Ack(cmd_id, True)
            if self.state.mode != Mode.EMERGENCY_STOP:
                self._transition(Mode.EMERGENCY_STOP, f"{source}: {reason}", now_ms, ack_of=cmd_id)
        elif ctype == "RESET":
            if source != "operator":
                ack = Ack(cmd_id, False, reason="RESET requires operator source")
            elif self.state.mode == Mode.RUNNING:
                ack = Ack(cmd_id, False, reason="machine not stopped")
            else:
                ack = Ack(cmd_id, True)
                # a reset also re-arms the watchdog
                self.state.heartbeat_deadline = now_ms + self.watchdog_ms
                self._transition(Mode.RUNNING, f"operator reset: {reason}", now_ms, ack_of=cmd_id)
        else:
            ack = Ack(cmd_id, False, reason=f"unknown command type {ctype!r}")
        self._remember(cmd_id, ack)
        return ack

    def on_heartbeat(self, now_ms: int) -> None:
        self.state.heartbeat_deadline = now_ms + self.watchdog_ms

    def tick(self, now_ms: int) -> None:
        if self.state.mode == Mode.RUNNING and now_ms > self.state.heartbeat_deadline:
            self._transition(Mode.SAFE_STOP, "WATCHDOG", now_ms, ack_of=None)

    # -- internals --

    def _transition(self, mode: Mode, cause: str, now_ms: int, ack_of: str | None) -> None:
        self.state.mode = mode
        self.state.latched = mode != Mode.RUNNING
        self.state.last_cause = cause
        self.state.updated_at = now_ms
        self._publish_state(self.state.to_payload(ack_of))

    def _remember(self, cmd_id: str, ack: Ack) -> None:
        self._seen[cmd_id] = ack
        while len(self._seen) > SEEN_CMD_CAPACITY:
            self._seen.popitem(last=False)


class MachineRole:
    """Bus wiring for one controller: cmd subscription, heartbeat watch,
    retained state publication."""

    def __init__(self, machine_id: str, site: str, client: BusClient,
                 watchdog_ms: int = WATCHDOG_DEADLINE_MS,
                 heartbeat_client: BusClient | None = None) -> None:
        self.machine_id = machine_id
        self.site = site
        self.client = client
        self.state_topic = f"swsk/v1/{site}/machine/{machine_id}/state"
        self.controller = MachineController(
            machine_id, watchdog_ms=watchdog_ms, publish_state=self._publish_state)
        client.subscribe(f"swsk/v1/{site}/machine/{machine_id}/cmd", self._on_cmd)
        hb = heartbeat_client or client
        hb.subscribe(f"swsk/v1/{site}/server/heartbeat", self._on_heartbeat)
        self._schedule_tick()
        # publish the initial retained state so the fleet view starts populated
        self._publish_state(self.controller.state.to_payload(None))

    def _schedule_tick(self) -> None:
        def tick() -> None:
            self.controller.tick(self.client.broker.now_ms())
            self._schedule_tick()
        self.client.broker.schedule(500, tick)

    def _on_cmd(self, msg) -> None:
        try:
            cmd = json.loads(msg.payload)
        except json.JSONDecodeError:
            cmd = {}
        self.controller.handle_command(cmd, self.client.broker.now_ms())

    def _on_heartbeat(self, msg) -> None:
        self.controller.on_heartbeat(self.client.broker.now_ms())

    def _publish_state(self, payload: dict) -> None:
        self.client.publish(self.state_topic, json.dumps(payload, sort_keys=True).encode(),
                            qos=QoS.AT_LEAST_ONCE, retain=True)
