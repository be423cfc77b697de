"""Scenario scripts: JSON documents driving deterministic simulations.

Top-level document shape (see scenarios/ for annotated examples):

    {
      "name": "stress_co2",
      "seed": 42,
      "duration_s": 300,
      "sample_rate_hz": 1,
      "workers": [
        {"worker_id": "w1", "profile": {"hr_base": 70, ...},
         "segments": [{"kind": "stress_episode", "start_s": 150, "end_s": 240,
                       "intensity": 1.0}, ...]}
      ],
      "machines": [{"machine_id": "m1", "s": "S2", "f": "F2", "p": "P2"}],
      "assignments": {"w1": "m1"},
      "site": "s1",
      "link": {"telemetry": {...}, "cmd": {...}, "state": {...},
               "heartbeat": {...}},         # per-role LinkFault overrides
      "server_pause": [[120000, 125000]],   # heartbeat blackout windows, ms
      "expectations": {"estop": true, "estop_within_ms": 500,
                       "final_modes": {"m1": "EMERGENCY_STOP"},
                       "alerts_at_least": {"ENV_CO2": 1}}
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


class ScenarioError(ValueError):
    """Malformed scenario document; message names the offending path."""


SEGMENT_KINDS = {
    "stress_episode",    # start_s, end_s, intensity in [0,1]
    "co2_ramp",          # start_s, end_s, target_ppm
    "temp_shift",        # start_s, delta_c (ambient)
    "spo2_drop",         # start_s, end_s, target_pct
    "button_press",      # at_s
    "sensor_fault",      # at_s, field; optional clear_at_s
}


@dataclass(frozen=True, slots=True)
class WorkerProfile:
    hr_base: float = 70.0       # bpm
    gsr_base: float = 5.0       # uS
    body_temp_base: float = 36.8  # degC
    spo2_base: float = 98.0     # percent

    def validate(self) -> None:
        if not 40 <= self.hr_base <= 120:
            raise ScenarioError(f"profile.hr_base {self.hr_base} outside [40, 120]")
        if not 90 <= self.spo2_base <= 100:
            raise ScenarioError(f"profile.spo2_base {self.spo2_base} outside [90, 100]")
        if self.gsr_base <= 0:
            raise ScenarioError(f"profile.gsr_base {self.gsr_base} must be > 0")


@dataclass(frozen=True, slots=True)
class Segment:
    kind: str
    params: dict[str, Any]

    def __getattr__(self, name: str) -> Any:
        try:
            return self.params[name]
        except KeyError:
            raise AttributeError(name) from None


@dataclass(frozen=True, slots=True)
class WorkerScript:
    worker_id: str
    profile: WorkerProfile
    segments: tuple[Segment, ...] = ()


@dataclass(frozen=True, slots=True)
class MachineSpec:
    machine_id: str
    s: str
    f: str
    p: str


@dataclass(frozen=True, slots=True)
class ScenarioScript:
    name: str
    seed: int
    duration_s: float
    sample_rate_hz: float = 1.0
    site: str = "s1"
    workers: tuple[WorkerScript, ...] = ()
    machines: tuple[MachineSpec, ...] = ()
    assignments: dict[str, str] = field(default_factory=dict)
    link: dict[str, dict[str, Any]] = field(default_factory=dict)
    server_pause: tuple[tuple[int, int], ...] = ()
    expectations: dict[str, Any] = field(default_factory=dict)


def _require(obj: dict, key: str, path: str) -> Any:
    if key not in obj:
        raise ScenarioError(f"missing {path}.{key}")
    return obj[key]


def _parse_segment(raw: dict, path: str, duration_s: float) -> Segment:
    kind = _require(raw, "kind", path)
    if kind not in SEGMENT_KINDS:
        raise ScenarioError(f"{path}.kind: unknown segment kind {kind!r}")
    params = {k: v for k, v in raw.items() if k != "kind"}
    for key in ("start_s", "end_s", "at_s"):
        if key in params and not 0 <= params[key] <= duration_s:
            raise ScenarioError(f"{path}.{key} outside scenario duration")
    if kind == "stress_episode":
        intensity = params.get("intensity", 1.0)
        if not 0.0 <= intensity <= 1.0:
            raise ScenarioError(f"{path}.intensity {intensity} outside [0, 1]")
        params["intensity"] = intensity
    return Segment(kind, params)


def parse_scenario(doc: dict) -> ScenarioScript:
    name = doc.get("name", "unnamed")
    duration_s = float(_require(doc, "duration_s", "scenario"))
    workers = []
    for i, w in enumerate(doc.get("workers", [])):
        path = f"workers[{i}]"
        profile = WorkerProfile(**w.get("profile", {}))
        profile.validate()
        segments = tuple(_parse_segment(seg, f"{path}.segments[{j}]", duration_s)
                         for j, seg in enumerate(w.get("segments", [])))
        workers.append(WorkerScript(_require(w, "worker_id", path), profile, segments))
    machines = tuple(
        MachineSpec(_require(m, "machine_id", f"machines[{i}]"),
                    m.get("s", "S1"), m.get("f", "F1"), m.get("p", "P1"))
        for i, m in enumerate(doc.get("machines", [])))
    assignments = dict(doc.get("assignments", {}))
    worker_ids = {w.worker_id for w in workers}
    machine_ids = {m.machine_id for m in machines}
    for wid, mid in assignments.items():
        if wid not in worker_ids:
            raise ScenarioError(f"assignments: unknown worker {wid!r}")
        if mid not in machine_ids:
            raise ScenarioError(f"assignments: unknown machine {mid!r}")
    return ScenarioScript(
        name=name,
        seed=int(doc.get("seed", 0)),
        duration_s=duration_s,
        sample_rate_hz=float(doc.get("sample_rate_hz", 1.0)),
        site=doc.get("site", "s1"),
        workers=tuple(workers),
        machines=machines,
        assignments=assignments,
        link={k: dict(v) for k, v in doc.get("link", {}).items()},
        server_pause=tuple((int(a), int(b)) for a, b in doc.get("server_pause", [])),
        expectations=dict(doc.get("expectations", {})),
    )


def bundled_scenario_path(name: str) -> Path:
    """Path of a scenario shipped with the package (no .json suffix needed)."""
    path = Path(__file__).parent / "scenarios" / f"{name}.json"
    if not path.exists():
        raise ScenarioError(f"no bundled scenario {name!r}")
    return path


def load_scenario(path: str | Path) -> ScenarioScript:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError("scenario root must be a JSON object")
    return parse_scenario(doc)
