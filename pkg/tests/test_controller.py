import itertools
import json

from swsk.bus import Broker, QoS
from swsk.controller import Ack, MachineController, MachineRole, Mode


def make(publishes=None):
    return MachineController("m1", publish_state=(publishes.append if publishes is not None else None))


def estop(cmd_id="c1", source="auto", reason="test"):
    return {"cmd_id": cmd_id, "type": "ESTOP", "source": source, "reason": reason}


def reset(cmd_id="r1", source="operator", reason="cleared"):
    return {"cmd_id": cmd_id, "type": "RESET", "source": source, "reason": reason}


def test_estop_from_running():
    ctl = make()
    ack = ctl.handle_command(estop(), 100)
    assert ack.accepted and not ack.duplicate
    assert ctl.state.mode == Mode.EMERGENCY_STOP
    assert ctl.state.latched
    assert "test" in ctl.state.last_cause


def test_duplicate_cmd_idempotent():
    publishes = []
    ctl = make(publishes)
    ctl.handle_command(estop("c1"), 100)
    n = len(publishes)
    ack = ctl.handle_command(estop("c1"), 200)
    assert ack.duplicate and ack.accepted
    assert ctl.state.updated_at == 100
    assert len(publishes) == n  # no state republish on duplicates


def test_reset_requires_operator():
    ctl = make()
    ctl.handle_command(estop(), 0)
    ack = ctl.handle_command(reset("r_auto", source="auto"), 10)
    assert not ack.accepted and "operator" in ack.reason
    assert ctl.state.mode == Mode.EMERGENCY_STOP
    ack = ctl.handle_command(reset("r_op", source="operator"), 20)
    assert ack.accepted
    assert ctl.state.mode == Mode.RUNNING and not ctl.state.latched


def test_reset_while_running_rejected():
    ctl = make()
    ack = ctl.handle_command(reset(), 0)
    assert not ack.accepted


def test_malformed_command_nack():
    ctl = make()
    ack = ctl.handle_command({"type": "ESTOP"}, 0)
    assert not ack.accepted and "malformed" in ack.reason
    ack = ctl.handle_command({"cmd_id": "x", "type": "SPIN", "source": "auto"}, 0)
    assert not ack.accepted


def test_watchdog_safe_stop():
    ctl = make()
    ctl.on_heartbeat(1000)
    ctl.tick(3999)
    assert ctl.state.mode == Mode.RUNNING
    ctl.tick(4001)
    assert ctl.state.mode == Mode.SAFE_STOP
    assert ctl.state.latched and ctl.state.last_cause == "WATCHDOG"


def test_heartbeats_keep_running():
    ctl = make()
    for t in range(0, 100_000, 1000):
        ctl.on_heartbeat(t)
        ctl.tick(t + 500)
    assert ctl.state.mode == Mode.RUNNING


def test_silence_does_not_downgrade_emergency_stop():
    ctl = make()
    ctl.handle_command(estop(), 0)
    ctl.tick(10_000)
    assert ctl.state.mode == Mode.EMERGENCY_STOP


def test_safe_stop_clears_only_via_operator_reset():
    ctl = make()
    ctl.tick(4000)
    assert ctl.state.mode == Mode.SAFE_STOP
    ctl.on_heartbeat(5000)  # connectivity back, still latched
    ctl.tick(5500)
    assert ctl.state.mode == Mode.SAFE_STOP
    ctl.handle_command(reset(), 6000)
    assert ctl.state.mode == Mode.RUNNING


def test_seen_cmd_ids_bounded():
    ctl = make()
    for i in range(400):
        ctl.handle_command(estop(f"c{i}"), i)
    assert len(ctl._seen) == 256


def test_latch_safety_exhaustive_small_traces():
    """Over all command/tick sequences of length <= 6: once stopped, the
    machine never returns to RUNNING without an operator RESET."""
    alphabet = ["estop", "reset_op", "reset_auto", "beat", "silence"]
    for length in range(1, 7):
        for trace in itertools.product(alphabet, repeat=length):
            ctl = MachineController("m")
            now = 0
            stopped = False
            cmd_n = 0
            for step in trace:
                now += 2000
                if step == "estop":
                    cmd_n += 1
                    ctl.handle_command(estop(f"c{cmd_n}"), now)
                elif step == "reset_op":
                    cmd_n += 1
                    ack = ctl.handle_command(reset(f"r{cmd_n}", source="operator"), now)
                    if ack.accepted:
                        stopped = False
                elif step == "reset_auto":
                    cmd_n += 1
                    ctl.handle_command(reset(f"r{cmd_n}", source="auto"), now)
                elif step == "beat":
                    ctl.on_heartbeat(now)
                ctl.tick(now)
                if ctl.state.mode != Mode.RUNNING:
                    stopped = True
                elif stopped:
                    raise AssertionError(f"latch violated by trace {trace}")


def test_replay_any_command_idempotent():
    for cmds in itertools.product([estop("a"), reset("b")], repeat=3):
        ctl1 = MachineController("m")
        ctl2 = MachineController("m")
        for cmd in cmds:
            ctl1.handle_command(cmd, 0)
            ctl2.handle_command(cmd, 0)
            ctl2.handle_command(cmd, 0)  # replayed
        assert ctl1.state.mode == ctl2.state.mode
        assert ctl1.state.latched == ctl2.state.latched


def test_fail_safe_when_heartbeats_stop():
    ctl = make()
    ctl.on_heartbeat(1000)
    for t in range(1000, 60_000, 700):
        ctl.tick(t)
    assert ctl.state.mode != Mode.RUNNING


def test_machine_role_bus_wiring():
    broker = Broker(seed=4)
    role = MachineRole("m1", "s1", broker.client("m1"))
    states = []
    broker.client("watch").subscribe("swsk/v1/s1/machine/m1/state",
                                     lambda m: states.append(json.loads(m.payload)))
    broker.advance_clock(100)
    assert states and states[-1]["mode"] == "RUNNING"  # retained initial state
    cmd = json.dumps(estop("cc1")).encode()
    broker.client("srv").publish("swsk/v1/s1/machine/m1/cmd", cmd, qos=QoS.AT_LEAST_ONCE)
    broker.advance_clock(100)
    assert role.controller.state.mode == Mode.EMERGENCY_STOP
    assert states[-1]["mode"] == "EMERGENCY_STOP" and states[-1]["ack_of"] == "cc1"


def test_machine_role_watchdog_via_bus():
    broker = Broker(seed=4)
    role = MachineRole("m1", "s1", broker.client("m1"))
    broker.advance_clock(3999)
    # no heartbeats ever published
    broker.advance_clock(1000)
    assert role.controller.state.mode == Mode.SAFE_STOP
