"""Deterministic wearable-device simulator.

Signal model (intentionally simple: controllability and determinism over
physiological realism):

    hr(t)   = hr_base + 3*sin(2*pi*t/60) + 40*I(t)*ramp(t) + N(0, sigma_hr)
    gsr(t)  = gsr_base * (1 + I(t)*ramp(t)) + N(0, sigma_gsr)
    temp(t) = body_temp_base + 0.3*I(t)*ramp(t) + N(0, sigma_t)
    spo2(t) = spo2_base, or linear toward target while a spo2_drop is active

I(t) is the active stress-episode intensity; ramp(t) rises linearly over the
episode's first 10 s. Environment fields follow their segment ramps (linear
interpolation), otherwise the ambient defaults below.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field
from typing import Callable

from .frames import U16_INVALID, DeviceFrame, FrameFlags, encode_frame
from .scenario import Segment, WorkerProfile, WorkerScript

AMBIENT_DEFAULTS = {
    "amb_temp_c": 22.0,
    "humidity": 45.0,
    "co2": 400.0,
    "light": 300.0,
    "sound": 50.0,
    "voc": 100.0,
}

SIGMA_HR = 1.0      # bpm
SIGMA_GSR = 0.05    # uS
SIGMA_TEMP = 0.05   # degC
STRESS_RAMP_S = 10.0

# device-side quick rules driving the local alert LED
LED_HR_LOW = 40
LED_HR_HIGH = 150
LED_SPO2_MIN = 90


class OutOfScenario(ValueError):
    pass


def derive_seed(seed: int, worker_id: str) -> int:
    """Stable per-device RNG stream: scenario seed xor a hash of the id."""
    digest = hashlib.sha256(worker_id.encode()).digest()
    return seed ^ int.from_bytes(digest[:8], "little")


def _stress_drive(segments: tuple[Segment, ...], t_s: float) -> float:
    """I(t) * ramp(t) for the active stress episode, 0 when none."""
    drive = 0.0
    for seg in segments:
        if seg.kind == "stress_episode" and seg.start_s <= t_s <= seg.end_s:
            ramp = min(1.0, (t_s - seg.start_s) / STRESS_RAMP_S) if STRESS_RAMP_S > 0 else 1.0
            drive = max(drive, seg.intensity * ramp)
    return drive


def _env_at(segments: tuple[Segment, ...], t_s: float) -> dict[str, float]:
    env = dict(AMBIENT_DEFAULTS)
    for seg in segments:
        if seg.kind == "co2_ramp":
            start, end, target = seg.start_s, seg.end_s, seg.target_ppm
            if t_s >= end:
                env["co2"] = float(target)
            elif t_s >= start:
                frac = (t_s - start) / (end - start) if end > start else 1.0
                env["co2"] = AMBIENT_DEFAULTS["co2"] + frac * (target - AMBIENT_DEFAULTS["co2"])
        elif seg.kind == "temp_shift" and t_s >= seg.start_s:
            env["amb_temp_c"] += seg.delta_c
    return env


def _spo2_at(profile: WorkerProfile, segments: tuple[Segment, ...], t_s: float) -> float:
    spo2 = profile.spo2_base
    for seg in segments:
        if seg.kind == "spo2_drop" and seg.start_s <= t_s <= seg.end_s:
            frac = ((t_s - seg.start_s) / (seg.end_s - seg.start_s)
                    if seg.end_s > seg.start_s else 1.0)
            spo2 = profile.spo2_base + frac * (seg.target_pct - profile.spo2_base)
    return spo2


def _faulted_fields(segments: tuple[Segment, ...], t_s: float) -> set[str]:
    out = set()
    for seg in segments:
        if seg.kind == "sensor_fault" and t_s >= seg.at_s:
            clear = seg.params.get("clear_at_s")
            if clear is None or t_s < clear:
                out.add(seg.field)
    return out


def _clamp(value: float, lo: int, hi: int) -> int:
    return max(lo, min(hi, round(value)))


@dataclass(frozen=True, slots=True)
class DeviceAlertState:
    led_on: bool


def generate_frame(profile: WorkerProfile, script: WorkerScript, t_s: float,
                   rng: random.Random, *, duration_s: float, seq: int = 0,
                   sigma_hr: float = SIGMA_HR, sigma_gsr: float = SIGMA_GSR,
                   sigma_temp: float = SIGMA_TEMP,
                   battery: int = 100, period_s: float = 1.0) -> DeviceFrame:
    if not 0 <= t_s <= duration_s:
        raise OutOfScenario(f"t={t_s} outside [0, {duration_s}]")
    segs = script.segments
    drive = _stress_drive(segs, t_s)

    hr = profile.hr_base + 3.0 * math.sin(2.0 * math.pi * t_s / 60.0) + 40.0 * drive
    gsr = profile.gsr_base * (1.0 + drive)
    body_temp = profile.body_temp_base + 0.3 * drive
    if sigma_hr:
        hr += rng.gauss(0.0, sigma_hr)
    if sigma_gsr:
        gsr += rng.gauss(0.0, sigma_gsr)
    if sigma_temp:
        body_temp += rng.gauss(0.0, sigma_temp)
    spo2 = _spo2_at(profile, segs, t_s)
    env = _env_at(segs, t_s)

    faults = _faulted_fields(segs, t_s)
    flags = FrameFlags(0)
    if faults:
        flags |= FrameFlags.SENSOR_FAULT
    if battery < 15:
        flags |= FrameFlags.LOW_BATTERY

    hr_i = 0 if "hr" in faults else _clamp(hr, 25, 250)
    spo2_i = 0 if "spo2" in faults else _clamp(spo2, 70, 100)
    temp_i = U16_INVALID if "body_temp" in faults else _clamp(body_temp * 100.0, 3000, 4300)
    gsr_i = U16_INVALID if "gsr" in faults else _clamp(gsr * 100.0, 0, 0xFFFE)

    if (hr_i != 0 and not LED_HR_LOW <= hr_i <= LED_HR_HIGH) or (0 < spo2_i < LED_SPO2_MIN):
        flags |= FrameFlags.ALERT_LED_ON

    # the press is reported on the first sample at or after at_s
    for seg in segs:
        if seg.kind == "button_press" and t_s - period_s < seg.at_s <= t_s:
            flags |= FrameFlags.BUTTON_ESTOP

    return DeviceFrame(
        seq=seq & 0xFFFF,
        t_ms=int(t_s * 1000),
        flags=flags,
        hr=hr_i,
        spo2=spo2_i,
        body_temp=temp_i,
        gsr=gsr_i,
        amb_temp=_clamp(env["amb_temp_c"] * 100.0, -32768, 32767),
        humidity=_clamp(env["humidity"], 0, 100),
        light=_clamp(env["light"], 0, 0xFFFF),
        co2=_clamp(env["co2"], 0, 0xFFFF),
        voc=_clamp(env["voc"], 0, 0xFFFF),
        sound=_clamp(env["sound"], 0, 255),
        battery=battery,
    )


@dataclass
class DeviceSim:
    """One simulated wearable; emits encoded frames on a fixed cadence."""

    script: WorkerScript
    duration_s: float
    sample_rate_hz: float
    seed: int
    emit: Callable[[bytes], None]
    seq: int = 0
    emitted: int = 0
    alert: DeviceAlertState = field(default_factory=lambda: DeviceAlertState(False))

    def __post_init__(self) -> None:
        self._rng = random.Random(derive_seed(self.seed, self.script.worker_id))

    @property
    def period_ms(self) -> int:
        return int(round(1000.0 / self.sample_rate_hz))

    def sample_count(self) -> int:
        return int(self.duration_s * self.sample_rate_hz)

    def tick(self, t_ms: int) -> bytes | None:
        """Generate, encode, and emit the sample for virtual time t_ms."""
        t_s = t_ms / 1000.0
        if t_s > self.duration_s:
            return None
        frame = generate_frame(self.script.profile, self.script, t_s, self._rng,
                               duration_s=self.duration_s, seq=self.seq,
                               period_s=1.0 / self.sample_rate_hz)
        self.alert = DeviceAlertState(bool(frame.flags & FrameFlags.ALERT_LED_ON))
        self.seq = (self.seq + 1) & 0xFFFF
        self.emitted += 1
        data = encode_frame(frame)
        self.emit(data)
        return data


def run_device(script: WorkerScript, duration_s: float, sample_rate_hz: float,
               seed: int, emit: Callable[[bytes], None]) -> list[bytes]:
    """Run a device standalone (no bus), returning the emission log."""
    sim = DeviceSim(script, duration_s, sample_rate_hz, seed, emit)
    log = []
    for k in range(sim.sample_count()):
        data = sim.tick(k * sim.period_ms)
        if data is not None:
            log.append(data)
    return log
