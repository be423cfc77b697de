"""Operator/developer command-line entry point.

Exit codes are a stable contract: 0 success/PASS, 1 expectation failure,
2 input error, 3 broker connectivity failure.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import os
import sys
from pathlib import Path

import click

from .bus import Broker
from .controller import MachineRole
from .engine import EngineConfig, StressLevel, assess_suitability, compute_stress, Baseline
from .risk import RiskClass, RiskParams, classify_risk
from .scenario import ScenarioError, load_scenario
from .server import SafetyServer, replay as replay_log, ReplayError
from .sim import run_simulation

CONFIG_ENV = "SWSK_CONFIG"


def _load_config(path: str | None) -> EngineConfig:
    path = path or os.environ.get(CONFIG_ENV)
    if path is None:
        return EngineConfig()
    return EngineConfig.load(path)


@click.group()
def main() -> None:
    """Wearable industrial-safety system twin."""


@main.command()
@click.argument("scenario_path", type=click.Path())
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--out-dir", default="out", show_default=True)
@click.option("--config", "config_path", default=None, help="Engine config JSON.")
def simulate(scenario_path: str, seed: int | None, out_dir: str, config_path: str | None) -> None:
    """Run a full deterministic simulation and write report + event log."""
    try:
        scenario = load_scenario(scenario_path)
        config = _load_config(config_path)
    except (ScenarioError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    if seed is not None:
        scenario = dataclasses.replace(scenario, seed=seed)
    report = run_simulation(scenario, out_dir, config)
    report_path = Path(out_dir) / f"{scenario.name}.report.json"
    report_path.write_text(report.to_json())
    click.echo(report.summary_text(), err=True)
    click.echo(f"report: {report_path}", err=True)
    sys.exit(0 if report.verdict == "PASS" else 1)


@main.command()
@click.argument("csv_path", type=click.Path())
@click.option("--out", "out_path", default=None, help="Write CSV here instead of stdout.")
@click.option("--config", "config_path", default=None)
def evaluate(csv_path: str, out_path: str | None, config_path: str | None) -> None:
    """Batch suitability verdicts from a CSV of workers and machine params.

    Columns: worker, then either stress_level (L0..L4) or raw deviations
    (hr_dev, gsr_dev, temp_excess), plus s, f, p.
    """
    try:
        config = _load_config(config_path)
        rows = list(csv.DictReader(Path(csv_path).open()))
    except (OSError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["worker", "stress_level", "risk_class", "allowed", "max_allowed", "error"])
    errors = 0
    allowed_n = denied_n = 0
    for i, row in enumerate(rows):
        try:
            level = _row_level(row, config)
            params = RiskParams.parse(_get(row, "s"), _get(row, "f"), _get(row, "p"))
            risk = classify_risk(params)
            verdict = assess_suitability(level, risk)
            writer.writerow([row.get("worker", f"row{i}"), level.name, risk.name,
                             "yes" if verdict.allowed else "no",
                             verdict.max_allowed.name if verdict.max_allowed else "NONE", ""])
            allowed_n += verdict.allowed
            denied_n += not verdict.allowed
        except (KeyError, ValueError) as exc:
            errors += 1
            writer.writerow([row.get("worker", f"row{i}"), "", "", "", "", str(exc)])
    output = buf.getvalue()
    if out_path:
        Path(out_path).write_text(output)
    else:
        click.echo(output, nl=False)
    click.echo(f"rows: {len(rows)}  allowed: {allowed_n}  denied: {denied_n}  errors: {errors}",
               err=True)
    sys.exit(1 if errors else 0)


def _get(row: dict, key: str) -> str:
    value = (row.get(key) or row.get(key.upper()) or "").strip()
    if not value:
        raise KeyError(f"missing column {key!r}")
    return value


def _row_level(row: dict, config: EngineConfig) -> StressLevel:
    level = (row.get("stress_level") or "").strip()
    if level:
        return StressLevel[level.upper()]
    hr_dev = float(_get(row, "hr_dev"))
    gsr_dev = float(_get(row, "gsr_dev"))
    temp_excess = float(_get(row, "temp_excess"))
    # express raw deviations through the scoring path against a unit baseline
    assessment = compute_stress(1.0 + hr_dev, 1.0 + gsr_dev,
                                config.temp_neutral + temp_excess,
                                Baseline(1.0, 1.0, config.temp_neutral), config)
    return assessment.level


@main.command()
@click.option("--embedded-bus/--no-embedded-bus", default=True, show_default=True)
@click.option("--broker", "broker_addr", default=None, help="host:port of a real MQTT broker.")
@click.option("--site", default="s1", show_default=True)
@click.option("--config", "config_path", default=None)
@click.option("--port", default=8000, show_default=True)
@click.option("--log", "log_path", default="out/live.events.jsonl", show_default=True)
@click.option("--machine", "machine_ids", multiple=True,
              help="Host a machine controller role in-process (embedded bus).")
@click.option("--machine-risk", default="S1,F1,P1", show_default=True,
              help="S,F,P used for --machine registrations.")
@click.option("--worker", "worker_ids", multiple=True,
              help="Pre-register worker ids.")
def serve(embedded_bus: bool, broker_addr: str | None, site: str, config_path: str | None,
          port: int, log_path: str, machine_ids: tuple[str, ...], machine_risk: str,
          worker_ids: tuple[str, ...]) -> None:
    """Run the safety server (HTTP API + stream) until interrupted."""
    if broker_addr is not None:
        _fail_real_broker(broker_addr)
    try:
        config = _load_config(config_path)
    except ValueError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    Path(log_path).parent.mkdir(parents=True, exist_ok=True)
    broker = Broker(mode="wallclock")
    server = SafetyServer(broker.client("server"), site, config=config, log_path=log_path)
    server.start(heartbeat=True)
    s, f, p = machine_risk.split(",")
    with broker._lock:
        for mid in machine_ids:
            server.register_machine(mid, RiskParams.parse(s, f, p))
            MachineRole(mid, site, broker.client(f"machine:{mid}"))
        for wid in worker_ids:
            server.register_worker(wid)
    broker.start_pump()

    from .api import create_app
    import uvicorn
    static = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    app = create_app(server, static_dir=static if static.is_dir() else None)
    click.echo(f"serving on http://127.0.0.1:{port} (site {site})", err=True)
    try:
        uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")
    finally:
        broker.stop_pump()
        server.close()


def _fail_real_broker(broker_addr: str) -> None:
    """Real-MQTT adapter needs paho-mqtt and a reachable broker."""
    try:
        import paho.mqtt.client  # noqa: F401
    except ImportError:
        click.echo(f"error: cannot reach broker {broker_addr}: paho-mqtt not installed; "
                   "install it or retry with --embedded-bus", err=True)
        sys.exit(3)
    click.echo(f"error: cannot reach broker {broker_addr}; check the address and retry",
               err=True)
    sys.exit(3)


@main.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path())
@click.option("--id", "worker_id", default=None, help="Worker id to run (default: first).")
@click.option("--broker", "broker_addr", default=None)
def device(scenario_path: str, worker_id: str | None, broker_addr: str | None) -> None:
    """Run a single device role against a real broker."""
    try:
        scenario = load_scenario(scenario_path)
    except ScenarioError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    if worker_id is not None and worker_id not in {w.worker_id for w in scenario.workers}:
        click.echo(f"error: worker {worker_id!r} not in scenario", err=True)
        sys.exit(2)
    _fail_real_broker(broker_addr or "127.0.0.1:1883")


@main.command()
@click.option("--id", "gateway_id", required=True)
@click.option("--site", default="s1")
@click.option("--broker", "broker_addr", default=None)
def gateway(gateway_id: str, site: str, broker_addr: str | None) -> None:
    """Run a gateway relay role against a real broker."""
    _fail_real_broker(broker_addr or "127.0.0.1:1883")


@main.command()
@click.option("--id", "machine_id", required=True)
@click.option("--site", default="s1")
@click.option("--broker", "broker_addr", default=None)
def machine(machine_id: str, site: str, broker_addr: str | None) -> None:
    """Run a machine controller role against a real broker."""
    _fail_real_broker(broker_addr or "127.0.0.1:1883")


@main.command()
@click.argument("log_file", type=click.Path())
def replay(log_file: str) -> None:
    """Rebuild state from an event log and print a summary."""
    if not Path(log_file).exists():
        click.echo(f"error: no such log {log_file}", err=True)
        sys.exit(2)
    try:
        state = replay_log(log_file)
    except ReplayError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    summary = {
        "last_event_seq": state.last_event_seq,
        "workers": sorted(state.workers),
        "machines": {mid: (m["state"] or {}).get("mode") for mid, m in state.machines.items()},
        "assignments": state.assignments,
        "counters": state.counters,
        "commands": len(state.commands),
        "state_hash": state.state_hash(),
    }
    click.echo(json.dumps(summary, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
