"""Phone-role relay: decode, dedup, enrich with motion, buffer, republish.

The gateway stays dumb by design: no filtering or decision logic, all of
that lives server-side. Telemetry is republished as JSON on
`swsk/v1/{site}/worker/{worker_id}/telemetry` at QoS 1.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

from .bus import BusClient, QoS
from .frames import DecodeError, CrcMismatch, ShortFrame, MotionSample, WorkerTelemetry, decode_frame


@dataclass
class GatewayConfig:
    worker_id: str
    site_id: str
    buffer_capacity: int = 8192
    dedup_window: int = 64
    backoff_initial_ms: int = 100
    backoff_factor: float = 2.0
    backoff_cap_ms: int = 5000

    def __post_init__(self) -> None:
        if self.buffer_capacity < 1:
            raise ValueError("buffer_capacity must be >= 1")
        if self.backoff_cap_ms < self.backoff_initial_ms:
            raise ValueError("backoff cap below initial")

    @property
    def telemetry_topic(self) -> str:
        return f"swsk/v1/{self.site_id}/worker/{self.worker_id}/telemetry"


@dataclass
class GatewayStats:
    frames_ok: int = 0
    frames_crc_fail: int = 0
    frames_dropped_dup: int = 0
    frames_rejected: int = 0
    motion_rejected: int = 0
    msgs_buffered: int = 0
    msgs_dropped_overflow: int = 0
    publishes: int = 0


@dataclass
class Gateway:
    """Single logical owner; feed it frames, motion, and connectivity events."""

    config: GatewayConfig
    client: BusClient
    stats: GatewayStats = field(default_factory=GatewayStats)

    def __post_init__(self) -> None:
        self._recent_seq: deque[int] = deque(maxlen=self.config.dedup_window)
        self._buffer: deque[bytes] = deque()
        self._connected = True
        self._gateway_seq = 0
        self._motion: MotionSample | None = None
        self._backoff_ms = self.config.backoff_initial_ms

    # -- inputs --

    def on_motion(self, ax: float, ay: float, az: float, sampled_at: int) -> bool:
        if not all(math.isfinite(v) for v in (ax, ay, az)):
            self.stats.motion_rejected += 1
            return False
        self._motion = MotionSample.from_components(ax, ay, az, sampled_at)
        return True

    @property
    def latest_motion(self) -> MotionSample | None:
        return self._motion

    def on_frame(self, data: bytes, recv_ts: int) -> WorkerTelemetry | None:
        try:
            frame = decode_frame(data)
        except (CrcMismatch, ShortFrame):
            self.stats.frames_crc_fail += 1
            return None
        except DecodeError:
            self.stats.frames_rejected += 1
            return None
        if frame.seq in self._recent_seq:
            self.stats.frames_dropped_dup += 1
            return None
        self._recent_seq.append(frame.seq)
        self.stats.frames_ok += 1
        telemetry = WorkerTelemetry(
            worker_id=self.config.worker_id,
            site_id=self.config.site_id,
            recv_ts=recv_ts,
            gateway_seq=self._gateway_seq,
            frame=frame,
            motion=self._motion,
        )
        self._gateway_seq += 1
        self._send(json.dumps(telemetry.to_payload(), sort_keys=True).encode())
        return telemetry

    # -- connectivity --

    def on_disconnect(self) -> None:
        self._connected = False

    def on_reconnect(self) -> None:
        self._connected = True
        self._backoff_ms = self.config.backoff_initial_ms
        self._flush()

    def next_backoff_ms(self) -> int:
        """Delay before the next reconnect attempt; doubles up to the cap."""
        delay = self._backoff_ms
        self._backoff_ms = min(self.config.backoff_cap_ms,
                               int(self._backoff_ms * self.config.backoff_factor))
        return delay

    @property
    def buffered(self) -> int:
        return len(self._buffer)

    # -- internals --

    def _send(self, payload: bytes) -> None:
        if not self._connected:
            if len(self._buffer) >= self.config.buffer_capacity:
                self._buffer.popleft()
                self.stats.msgs_dropped_overflow += 1
            self._buffer.append(payload)
            self.stats.msgs_buffered += 1
            return
        self.client.publish(self.config.telemetry_topic, payload, qos=QoS.AT_LEAST_ONCE)
        self.stats.publishes += 1

    def _flush(self) -> None:
        while self._buffer:
            payload = self._buffer.popleft()
            self.client.publish(self.config.telemetry_topic, payload, qos=QoS.AT_LEAST_ONCE)
            self.stats.publishes += 1
