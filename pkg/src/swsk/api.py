"""HTTP/stream API consumed by the dashboard and CLI.

Endpoints (JSON bodies, error envelope {error, code, detail}):

    GET  /api/v1/workers
    GET  /api/v1/workers/{id}/history?from&to        ts range, ms
    GET  /api/v1/machines
    POST /api/v1/machines/{id}/estop {reason}        -> 202 {cmd_id}
    POST /api/v1/machines/{id}/reset {reason}        -> 202 {cmd_id}
    POST /api/v1/suitability {worker_id?|stress_level?, machine_id?|risk_class?}
    GET  /api/v1/stream                              server-sent events
"""

from __future__ import annotations

import json
import queue
from pathlib import Path
from typing import Iterator

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .engine import StressLevel
from .risk import RiskClass
from .server import EventRecord, NotFound, SafetyServer

STREAM_KINDS = {"ALERT", "ASSESSMENT", "STATE_CHANGE", "NOTIFICATION"}
TELEMETRY_SAMPLE_EVERY = 5


def _error(status: int, code: str, detail: str) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"error": True, "code": code, "detail": detail})


class EstopBody(BaseModel):
    reason: str = ""


class SuitabilityBody(BaseModel):
    worker_id: str | None = None
    stress_level: str | None = None
    machine_id: str | None = None
    risk_class: str | None = None


def create_app(server: SafetyServer, static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="swsk safety server")
    lock = server.client.broker._lock
    subscribers: list[queue.Queue] = []
    telemetry_counter = {"n": 0}

    def on_event(event: EventRecord) -> None:
        if event.kind == "TELEMETRY":
            telemetry_counter["n"] += 1
            if telemetry_counter["n"] % TELEMETRY_SAMPLE_EVERY != 0:
                return
        elif event.kind not in STREAM_KINDS:
            return
        for q in list(subscribers):
            q.put(event)

    server.add_event_listener(on_event)

    @app.get("/api/v1/workers")
    def workers() -> list[dict]:
        with lock:
            out = []
            for wid, meta in server.state.workers.items():
                assessment = server.state.latest_assessment.get(wid)
                out.append({
                    "worker_id": wid,
                    "registered_at": meta["registered_at"],
                    "assigned_machine": server.state.assignments.get(wid),
                    "assessment": None if assessment is None else assessment["assessment"],
                    "latest_telemetry": server.state.latest_telemetry.get(wid),
                })
            return out

    @app.get("/api/v1/workers/{worker_id}/history")
    def history(worker_id: str, request: Request):
        with lock:
            if worker_id not in server.state.workers:
                return _error(404, "not_found", f"worker {worker_id} not registered")
            ts_from = int(request.query_params.get("from", 0))
            ts_to = request.query_params.get("to")
            ts_to = None if ts_to is None else int(ts_to)
            events = []
            for ev in server.log.records:
                if ev.payload.get("worker_id") != worker_id:
                    continue
                if ev.ts < ts_from or (ts_to is not None and ev.ts > ts_to):
                    continue
                events.append({"event_seq": ev.event_seq, "ts": ev.ts,
                               "kind": ev.kind, "payload": ev.payload})
            return events

    @app.get("/api/v1/machines")
    def machines() -> list[dict]:
        with lock:
            return [
                {"machine_id": mid, "params": m["params"],
                 "risk_class": m["risk_class"], "state": m["state"]}
                for mid, m in server.state.machines.items()
            ]

    @app.post("/api/v1/machines/{machine_id}/estop", status_code=202)
    def estop(machine_id: str, body: EstopBody):
        with lock:
            try:
                cmd_id = server.issue_estop(machine_id, "operator", body.reason)
            except NotFound as exc:
                return _error(404, "not_found", str(exc.args[0]))
            return {"cmd_id": cmd_id}

    @app.post("/api/v1/machines/{machine_id}/reset", status_code=202)
    def reset(machine_id: str, body: EstopBody):
        with lock:
            try:
                cmd_id = server.issue_reset(machine_id, body.reason)
            except NotFound as exc:
                return _error(404, "not_found", str(exc.args[0]))
            return {"cmd_id": cmd_id}

    @app.post("/api/v1/suitability")
    def suitability(body: SuitabilityBody):
        with lock:
            if body.stress_level is not None:
                try:
                    level = StressLevel[body.stress_level]
                except KeyError:
                    return _error(422, "bad_request", f"unknown stress level {body.stress_level}")
            elif body.worker_id is not None:
                if body.worker_id not in server.state.workers:
                    return _error(404, "not_found", f"worker {body.worker_id} not registered")
                level = server.worker_level(body.worker_id)
            else:
                return _error(422, "bad_request", "need worker_id or stress_level")
            if body.risk_class is not None:
                try:
                    risk = RiskClass[body.risk_class]
                except KeyError:
                    return _error(422, "bad_request", f"unknown risk class {body.risk_class}")
            elif body.machine_id is not None:
                machine = server.state.machines.get(body.machine_id)
                if machine is None:
                    return _error(404, "not_found", f"machine {body.machine_id} not registered")
                risk = RiskClass[machine["risk_class"]]
            else:
                return _error(422, "bad_request", "need machine_id or risk_class")
            return server.suitability(level, risk).to_payload()

    @app.get("/api/v1/stream")
    def stream() -> StreamingResponse:
        q: queue.Queue = queue.Queue()
        subscribers.append(q)

        def gen() -> Iterator[str]:
            try:
                while True:
                    try:
                        event = q.get(timeout=15.0)
                    except queue.Empty:
                        yield ": keepalive\n\n"
                        continue
                    data = json.dumps({"event_seq": event.event_seq, "ts": event.ts,
                                       "kind": event.kind, "payload": event.payload})
                    yield f"event: {event.kind}\ndata: {data}\n\n"
            finally:
                subscribers.remove(q)

        return StreamingResponse(gen(), media_type="text/event-stream")

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="dashboard")

    return app
