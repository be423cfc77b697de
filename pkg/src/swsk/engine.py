"""Decision engine: baseline calibration, five-level stress scoring,
sustained threshold rules, suitability gating, and action planning.

All thresholds and weights are configuration with the defaults below; the
rule engine is the baseline DecisionPolicy so a learned policy can replace
it without touching the pipeline.
"""

from __future__ import annotations

import enum
import json
import uuid
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Protocol

from .risk import RiskClass


class ConfigError(ValueError):
    """Invalid engine config; message names the offending path."""


@dataclass(frozen=True)
class EngineConfig:
    calibration_s: float = 120.0
    window_s: float = 30.0
    step_s: float = 5.0
    w_hr: float = 0.50
    w_gsr: float = 0.35
    w_temp: float = 0.15
    hr_dev_sat: float = 0.5
    gsr_dev_sat: float = 1.0
    temp_excess_sat: float = 1.3     # degC above temp_neutral
    temp_neutral: float = 37.2
    cut_points: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8)
    hr_low: float = 40.0
    hr_high: float = 150.0
    spo2_crit: float = 90.0
    spo2_warn: float = 94.0
    temp_high: float = 39.0
    temp_low: float = 35.0
    sustain_s: float = 10.0
    co2_warn: float = 1000.0
    co2_crit: float = 5000.0
    amb_high: float = 45.0
    amb_low: float = -10.0
    sound_warn: float = 85.0
    impact_mag: float = 29.4         # ~3 g
    inactivity_s: float = 60.0
    motion_rule_enabled: bool = True

    def validate(self) -> None:
        if abs(self.w_hr + self.w_gsr + self.w_temp - 1.0) > 1e-9:
            raise ConfigError("weights: w_hr + w_gsr + w_temp must sum to 1.0")
        cuts = self.cut_points
        if len(cuts) != 4 or any(not 0.0 < c < 1.0 for c in cuts) or list(cuts) != sorted(set(cuts)):
            raise ConfigError("cut_points: need 4 strictly increasing values in (0, 1)")
        if self.spo2_warn <= self.spo2_crit:
            raise ConfigError("spo2_warn must be above spo2_crit")
        if self.co2_warn >= self.co2_crit:
            raise ConfigError("co2_warn must be below co2_crit")
        for name in ("calibration_s", "window_s", "step_s", "sustain_s"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")

    @classmethod
    def load(cls, path: str | Path) -> "EngineConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load engine config {path}: {exc}") from exc
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "cut_points" in doc:
            doc["cut_points"] = tuple(doc["cut_points"])
        cfg = cls(**doc)
        cfg.validate()
        return cfg


class StressLevel(enum.IntEnum):
    L0 = 0
    L1 = 1
    L2 = 2
    L3 = 3
    L4 = 4


class AlertSeverity(enum.Enum):
    WARN = "WARN"
    CRITICAL = "CRITICAL"


@dataclass(frozen=True, slots=True)
class Alert:
    code: str
    severity: AlertSeverity
    worker_id: str
    onset_ts: int
    detail: str


@dataclass(frozen=True, slots=True)
class StressAssessment:
    score: float
    level: StressLevel
    hr_dev_norm: float
    gsr_dev_norm: float
    temp_dev_norm: float
    calibrating: bool

    def to_payload(self) -> dict:
        return {
            "score": self.score,
            "level": self.level.name,
            "components": {
                "hr_dev_norm": self.hr_dev_norm,
                "gsr_dev_norm": self.gsr_dev_norm,
                "temp_dev_norm": self.temp_dev_norm,
            },
            "calibrating": self.calibrating,
        }


@dataclass(frozen=True, slots=True)
class SuitabilityVerdict:
    allowed: bool
    max_allowed: RiskClass | None
    stress_level: StressLevel
    machine_risk: RiskClass
    reasons: tuple[str, ...] = ()

    def to_payload(self) -> dict:
        return {
            "allowed": self.allowed,
            "max_allowed": self.max_allowed.name if self.max_allowed is not None else "NONE",
            "stress_level": self.stress_level.name,
            "machine_risk": self.machine_risk.name,
            "reasons": list(self.reasons),
        }


# Most permissive machine class per stress level; L4 permits none.
MAX_ALLOWED_BY_LEVEL: dict[StressLevel, RiskClass | None] = {
    StressLevel.L0: RiskClass.e,
    StressLevel.L1: RiskClass.d,
    StressLevel.L2: RiskClass.c,
    StressLevel.L3: RiskClass.b,
    StressLevel.L4: None,
}


def assess_suitability(level: StressLevel, machine_risk: RiskClass) -> SuitabilityVerdict:
    max_allowed = MAX_ALLOWED_BY_LEVEL[level]
    allowed = max_allowed is not None and machine_risk <= max_allowed
    reasons: tuple[str, ...] = ()
    if not allowed:
        if max_allowed is None:
            reasons = (f"stress level {level.name} permits no machine work",)
        else:
            reasons = (f"machine risk {machine_risk.name} exceeds max allowed "
                       f"{max_allowed.name} at stress level {level.name}",)
    return SuitabilityVerdict(allowed, max_allowed, level, machine_risk, reasons)


def level_for_score(score: float, cut_points: tuple[float, ...]) -> StressLevel:
    return StressLevel(sum(1 for c in cut_points if c < score))


def compute_stress(hr_mean: float | None, gsr_mean: float | None,
                   temp_mean: float | None, baseline: "Baseline | None",
                   config: EngineConfig) -> StressAssessment:
    """Score the current window against the per-session baseline."""
    if baseline is None:
        return StressAssessment(0.0, StressLevel.L0, 0.0, 0.0, 0.0, calibrating=True)
    hr_dev = 0.0 if hr_mean is None else max(0.0, (hr_mean - baseline.hr) / baseline.hr)
    gsr_dev = 0.0 if gsr_mean is None else max(0.0, (gsr_mean - baseline.gsr) / baseline.gsr)
    temp_excess = 0.0 if temp_mean is None else max(0.0, temp_mean - config.temp_neutral)
    c_hr = min(1.0, hr_dev / config.hr_dev_sat)
    c_gsr = min(1.0, gsr_dev / config.gsr_dev_sat)
    c_temp = min(1.0, temp_excess / config.temp_excess_sat)
    score = config.w_hr * c_hr + config.w_gsr * c_gsr + config.w_temp * c_temp
    return StressAssessment(score, level_for_score(score, config.cut_points),
                            c_hr, c_gsr, c_temp, calibrating=False)


@dataclass(frozen=True, slots=True)
class Baseline:
    hr: float
    gsr: float
    temp: float


# --- sustained-threshold tracking -------------------------------------------

@dataclass
class _Condition:
    code: str
    severity: AlertSeverity
    onset_ms: int | None = None
    fired: bool = False

    def update(self, active: bool, now_ms: int, sustain_ms: float, detail: str,
               worker_id: str, immediate: bool = False, gap_ms: int = 0) -> Alert | None:
        if not active:
            self.onset_ms = None
            self.fired = False
            return None
        if self.onset_ms is None:
            self.onset_ms = now_ms
        if self.fired:
            return None
        # each sample covers one sampling period: N consecutive bad samples
        # at 1 Hz count as N seconds held
        held = now_ms - self.onset_ms + gap_ms
        if immediate or held >= sustain_ms:
            self.fired = True
            return Alert(self.code, self.severity, worker_id, now_ms, detail)
        return None


@dataclass(frozen=True, slots=True)
class Observation:
    """One telemetry sample as seen by the engine (physical units)."""

    ts: int
    hr: float | None
    spo2: float | None
    body_temp_c: float | None
    gsr_us: float | None
    amb_temp_c: float
    co2: float
    sound: float
    motion_mag: float | None
    button_estop: bool
    sensor_fault: bool


class ThresholdTracker:
    """Per-worker sustained-condition state; one onset per continuous episode."""

    def __init__(self, worker_id: str, config: EngineConfig) -> None:
        self.worker_id = worker_id
        self.config = config
        self._conditions: dict[str, _Condition] = {}
        self._impact_ts: int | None = None
        self._prev_ts: int | None = None

    def _cond(self, key: str, code: str, severity: AlertSeverity) -> _Condition:
        if key not in self._conditions:
            self._conditions[key] = _Condition(code, severity)
        return self._conditions[key]

    def observe(self, obs: Observation) -> list[Alert]:
        cfg = self.config
        sustain = cfg.sustain_s * 1000.0
        gap = 0 if self._prev_ts is None else max(0, obs.ts - self._prev_ts)
        self._prev_ts = obs.ts
        out: list[Alert] = []

        def track(key: str, code: str, severity: AlertSeverity, active: bool,
                  detail: str, immediate: bool = False) -> None:
            alert = self._cond(key, code, severity).update(
                active, obs.ts, sustain, detail, self.worker_id, immediate, gap_ms=gap)
            if alert is not None:
                out.append(alert)

        track("button", "DEVICE_BUTTON", AlertSeverity.CRITICAL, obs.button_estop,
              "emergency button pressed on device", immediate=True)
        track("hr_low", "VITAL_HR", AlertSeverity.CRITICAL,
              obs.hr is not None and obs.hr < cfg.hr_low,
              f"hr {obs.hr} below {cfg.hr_low}")
        track("hr_high", "VITAL_HR", AlertSeverity.CRITICAL,
              obs.hr is not None and obs.hr > cfg.hr_high,
              f"hr {obs.hr} above {cfg.hr_high}")
        track("spo2_warn", "VITAL_SPO2", AlertSeverity.WARN,
              obs.spo2 is not None and cfg.spo2_crit <= obs.spo2 < cfg.spo2_warn,
              f"spo2 {obs.spo2} below {cfg.spo2_warn}")
        track("spo2_crit", "VITAL_SPO2", AlertSeverity.CRITICAL,
              obs.spo2 is not None and obs.spo2 < cfg.spo2_crit,
              f"spo2 {obs.spo2} below {cfg.spo2_crit}")
        track("temp_high", "VITAL_TEMP", AlertSeverity.CRITICAL,
              obs.body_temp_c is not None and obs.body_temp_c > cfg.temp_high,
              f"body temp {obs.body_temp_c} above {cfg.temp_high}")
        track("temp_low", "VITAL_TEMP", AlertSeverity.CRITICAL,
              obs.body_temp_c is not None and obs.body_temp_c < cfg.temp_low,
              f"body temp {obs.body_temp_c} below {cfg.temp_low}")
        track("co2_warn", "ENV_CO2", AlertSeverity.WARN,
              cfg.co2_warn <= obs.co2 < cfg.co2_crit,
              f"co2 {obs.co2} ppm above {cfg.co2_warn}")
        track("co2_crit", "ENV_CO2", AlertSeverity.CRITICAL,
              obs.co2 >= cfg.co2_crit,
              f"co2 {obs.co2} ppm above {cfg.co2_crit}")
        track("amb_high", "ENV_TEMP", AlertSeverity.WARN,
              obs.amb_temp_c > cfg.amb_high,
              f"ambient {obs.amb_temp_c} C above {cfg.amb_high}")
        track("amb_low", "ENV_TEMP", AlertSeverity.WARN,
              obs.amb_temp_c < cfg.amb_low,
              f"ambient {obs.amb_temp_c} C below {cfg.amb_low}")
        track("sound", "ENV_SOUND", AlertSeverity.WARN,
              obs.sound > cfg.sound_warn,
              f"sound {obs.sound} dB above {cfg.sound_warn}")

        if cfg.motion_rule_enabled and obs.motion_mag is not None:
            if obs.motion_mag >= cfg.impact_mag:
                self._impact_ts = obs.ts
            inactivity = (self._impact_ts is not None
                          and obs.ts - self._impact_ts >= cfg.inactivity_s * 1000.0
                          and obs.motion_mag < cfg.impact_mag)
            track("impact", "MOTION_IMPACT", AlertSeverity.CRITICAL, inactivity,
                  "impact followed by inactivity", immediate=True)
        return out


def evaluate_thresholds(observations: list[Observation], config: EngineConfig,
                        worker_id: str = "w") -> list[Alert]:
    """Batch helper over a telemetry stream; streaming code uses the tracker."""
    tracker = ThresholdTracker(worker_id, config)
    alerts: list[Alert] = []
    for obs in observations:
        alerts.extend(tracker.observe(obs))
    return alerts


# --- worker session ----------------------------------------------------------

@dataclass
class _Windowed:
    samples: deque  # (ts, value)

    def push(self, ts: int, value: float | None, window_ms: float) -> None:
        if value is not None:
            self.samples.append((ts, value))
        while self.samples and self.samples[0][0] < ts - window_ms:
            self.samples.popleft()

    def mean(self) -> float | None:
        if not self.samples:
            return None
        return sum(v for _, v in self.samples) / len(self.samples)


@dataclass
class WorkerSession:
    """Per-worker streaming state: calibration, windows, threshold tracking."""

    worker_id: str
    config: EngineConfig
    started_ts: int | None = None
    baseline: Baseline | None = None
    last_eval_ts: int | None = None
    last_assessment: StressAssessment | None = None

    def __post_init__(self) -> None:
        self.tracker = ThresholdTracker(self.worker_id, self.config)
        self._win = {k: _Windowed(deque()) for k in ("hr", "gsr", "temp")}
        self._cal: dict[str, list[float]] = {"hr": [], "gsr": [], "temp": []}

    def observe(self, obs: Observation) -> tuple[list[Alert], StressAssessment | None]:
        """Feed one sample; returns threshold alerts and, on step boundaries,
        a fresh stress assessment."""
        cfg = self.config
        if self.started_ts is None:
            self.started_ts = obs.ts
        window_ms = cfg.window_s * 1000.0
        self._win["hr"].push(obs.ts, obs.hr, window_ms)
        self._win["gsr"].push(obs.ts, obs.gsr_us, window_ms)
        self._win["temp"].push(obs.ts, obs.body_temp_c, window_ms)

        alerts = self.tracker.observe(obs)

        calibrating = obs.ts - self.started_ts < cfg.calibration_s * 1000.0
        if calibrating:
            for key, val in (("hr", obs.hr), ("gsr", obs.gsr_us), ("temp", obs.body_temp_c)):
                if val is not None:
                    self._cal[key].append(val)
        elif self.baseline is None:
            if self._cal["hr"] and self._cal["gsr"]:
                temps = self._cal["temp"] or [cfg.temp_neutral]
                self.baseline = Baseline(
                    hr=sum(self._cal["hr"]) / len(self._cal["hr"]),
                    gsr=sum(self._cal["gsr"]) / len(self._cal["gsr"]),
                    temp=sum(temps) / len(temps),
                )

        assessment: StressAssessment | None = None
        step_ms = cfg.step_s * 1000.0
        if self.last_eval_ts is None or obs.ts - self.last_eval_ts >= step_ms:
            self.last_eval_ts = obs.ts
            assessment = compute_stress(
                self._win["hr"].mean(), self._win["gsr"].mean(),
                self._win["temp"].mean(), self.baseline, cfg)
            if not assessment.calibrating and self._all_windows_empty():
                alerts.append(Alert("SENSOR_GAP", AlertSeverity.WARN, self.worker_id,
                                    obs.ts, "no valid vital samples in window"))
            prev = self.last_assessment
            self.last_assessment = assessment
            if assessment.level == StressLevel.L4 and (prev is None or prev.level != StressLevel.L4):
                alerts.append(Alert("STRESS_L4", AlertSeverity.CRITICAL, self.worker_id,
                                    obs.ts, f"stress score {assessment.score:.3f} at L4"))
        return alerts, assessment

    def _all_windows_empty(self) -> bool:
        return all(w.mean() is None for w in self._win.values())


# --- action planning ---------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Command:
    cmd_id: str
    type: str                  # ESTOP | RESET
    machine_id: str
    issued_at: int
    reason: str
    source: str                # auto | operator | device_button

    def to_payload(self) -> dict:
        return {
            "cmd_id": self.cmd_id,
            "type": self.type,
            "issued_at": self.issued_at,
            "reason": self.reason,
            "source": self.source,
        }


@dataclass(frozen=True, slots=True)
class Notification:
    worker_id: str
    ts: int
    text: str
    alert_code: str | None = None


class DecisionPolicy(Protocol):
    """Pluggable policy boundary; the rule engine below is the baseline."""

    def plan_actions(self, alerts: list[Alert], assessment: StressAssessment | None,
                     assigned_machine: str | None, now_ms: int
                     ) -> tuple[list[Command], list[Notification]]: ...


class RulePolicy:
    def __init__(self, id_factory: Callable[[], str] | None = None) -> None:
        self._new_id = id_factory or (lambda: str(uuid.uuid4()))

    def plan_actions(self, alerts: list[Alert], assessment: StressAssessment | None,
                     assigned_machine: str | None, now_ms: int
                     ) -> tuple[list[Command], list[Notification]]:
        commands: list[Command] = []
        notifications: list[Notification] = []
        estopped = False
        for alert in alerts:
            if alert.severity == AlertSeverity.CRITICAL and assigned_machine and not estopped:
                source = "device_button" if alert.code == "DEVICE_BUTTON" else "auto"
                commands.append(Command(
                    cmd_id=self._new_id(), type="ESTOP", machine_id=assigned_machine,
                    issued_at=now_ms, reason=f"{alert.code}: {alert.detail}", source=source))
                estopped = True
            else:
                notifications.append(Notification(alert.worker_id, now_ms,
                                                  f"{alert.severity.value} {alert.code}: {alert.detail}",
                                                  alert.code))
        return commands, notifications
