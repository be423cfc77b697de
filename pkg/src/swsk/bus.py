"""Topic-based pub/sub transport with MQTT-style semantics.

The in-process broker runs on a virtual clock for deterministic simulation
(`mode="sim"`); in `mode="wallclock"` a pump thread advances the same
scheduler from real time. Per-link faults (latency, jitter, drop, partitions)
are applied on the broker-to-subscriber leg; the publisher leg sees latency
and partitions only, so per-(publisher, topic) FIFO is preserved.

Topic scheme used by the system roles:

    swsk/v1/{site}/worker/{worker_id}/telemetry   QoS 1, JSON
    swsk/v1/{site}/machine/{machine_id}/cmd       QoS 1, JSON
    swsk/v1/{site}/machine/{machine_id}/state     QoS 1, retained, JSON
    swsk/v1/{site}/server/heartbeat               QoS 0, 1 Hz
"""

from __future__ import annotations

import enum
import hashlib
import heapq
import itertools
import random
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

MAX_PAYLOAD = 64 * 1024
REDELIVERY_TIMEOUT_MS = 250
MAX_RETRIES = 20


class BusError(Exception):
    pass


class InvalidFilter(BusError):
    pass


class InvalidTopic(BusError):
    pass


class Rejected(BusError):
    pass


class ModeError(BusError):
    pass


class QoS(enum.IntEnum):
    AT_MOST_ONCE = 0
    AT_LEAST_ONCE = 1


# --- topics -----------------------------------------------------------------

def topic_template(site: str) -> dict[str, str]:
    base = f"swsk/v1/{site}"
    return {
        "telemetry": base + "/worker/{worker_id}/telemetry",
        "cmd": base + "/machine/{machine_id}/cmd",
        "state": base + "/machine/{machine_id}/state",
        "heartbeat": base + "/server/heartbeat",
    }


def validate_topic(topic: str) -> None:
    if not topic:
        raise InvalidTopic("empty topic")
    segments = topic.split("/")
    if any(seg == "" for seg in segments):
        raise InvalidTopic(f"empty segment in {topic!r}")
    if any(ch in topic for ch in "+#"):
        raise InvalidTopic(f"wildcard in concrete topic {topic!r}")


def validate_filter(filt: str) -> None:
    if not filt:
        raise InvalidFilter("empty filter")
    segments = filt.split("/")
    for i, seg in enumerate(segments):
        if seg == "":
            raise InvalidFilter(f"empty segment in {filt!r}")
        if seg == "#" and i != len(segments) - 1:
            raise InvalidFilter(f"'#' not last in {filt!r}")
        if ("#" in seg or "+" in seg) and seg not in ("#", "+"):
            raise InvalidFilter(f"wildcard must occupy a whole segment in {filt!r}")


def topic_matches(filt: str, topic: str) -> bool:
    fsegs = filt.split("/")
    tsegs = topic.split("/")
    for i, fseg in enumerate(fsegs):
        if fseg == "#":
            return True
        if i >= len(tsegs):
            return False
        if fseg != "+" and fseg != tsegs[i]:
            return False
    return len(fsegs) == len(tsegs)


# --- messages and faults ----------------------------------------------------

@dataclass(frozen=True, slots=True)
class Message:
    topic: str
    payload: bytes
    qos: QoS = QoS.AT_MOST_ONCE
    retain: bool = False
    publish_ts: int = 0


@dataclass
class LinkFault:
    """Fault model for one client's link to the broker."""

    latency_ms: int = 0
    jitter_ms: int = 0
    drop_prob: float = 0.0
    partitions: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not 0.0 <= self.drop_prob <= 1.0:
            raise ValueError("drop_prob outside [0, 1]")
        spans = sorted(self.partitions)
        for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
            if b0 < a1:
                raise ValueError("overlapping partition intervals")

    def partitioned(self, now_ms: int) -> bool:
        return any(start <= now_ms < end for start, end in self.partitions)

    def next_heal(self, now_ms: int) -> int | None:
        for start, end in sorted(self.partitions):
            if start <= now_ms < end:
                return end
        return None


# --- virtual clock ----------------------------------------------------------

class VirtualClock:
    """Deterministic event scheduler; ties break by insertion order."""

    def __init__(self) -> None:
        self.now_ms = 0
        self._heap: list[tuple[int, int, Callable[[], None]]] = []
        self._counter = itertools.count()

    def schedule(self, delay_ms: int, fn: Callable[[], None]) -> None:
        heapq.heappush(self._heap, (self.now_ms + max(0, int(delay_ms)), next(self._counter), fn))

    def advance(self, dt_ms: int) -> None:
        target = self.now_ms + int(dt_ms)
        while self._heap and self._heap[0][0] <= target:
            when, _, fn = heapq.heappop(self._heap)
            self.now_ms = when
            fn()
        self.now_ms = target


# --- broker -----------------------------------------------------------------

@dataclass
class DeliveryEvent:
    seq: int
    ts: int
    subscriber: str
    topic: str
    payload: bytes
    duplicate: bool


class _Subscription:
    def __init__(self, client: "BusClient", filt: str, callback: Callable[[Message], None]) -> None:
        self.client = client
        self.filter = filt
        self.callback = callback
        # per-(publisher, topic) FIFO: next message waits for the current ack
        self.queues: dict[tuple[str, str], deque] = {}
        self.in_flight: set[tuple[str, str]] = set()


class Broker:
    """In-process broker; all state mutated under one re-entrant lock."""

    def __init__(self, seed: int = 0, mode: str = "sim") -> None:
        if mode not in ("sim", "wallclock"):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.clock = VirtualClock()
        self.rng = random.Random(seed)
        self.retained: dict[str, Message] = {}
        self.subscriptions: list[_Subscription] = []
        self.delivery_log: list[DeliveryEvent] = []
        self.dead_letters: list[Message] = []
        self._delivery_seq = itertools.count()
        self._lock = threading.RLock()
        self._pump_stop = threading.Event()
        self._pump_thread: threading.Thread | None = None

    # -- clients --

    def client(self, client_id: str, fault: LinkFault | None = None) -> "BusClient":
        return BusClient(self, client_id, fault or LinkFault())

    def now_ms(self) -> int:
        return self.clock.now_ms

    def schedule(self, delay_ms: int, fn: Callable[[], None]) -> None:
        with self._lock:
            self.clock.schedule(delay_ms, fn)

    # -- simulation driving --

    def advance_clock(self, dt_ms: int) -> list[DeliveryEvent]:
        if self.mode != "sim":
            raise ModeError("advance_clock is only valid in simulation mode")
        with self._lock:
            mark = len(self.delivery_log)
            self.clock.advance(dt_ms)
            return self.delivery_log[mark:]

    def start_pump(self, tick_ms: int = 5) -> None:
        """Wall-clock mode: advance the scheduler from real elapsed time."""
        if self.mode != "wallclock":
            raise ModeError("pump is only valid in wall-clock mode")
        import time

        def run() -> None:
            start = time.monotonic()
            while not self._pump_stop.is_set():
                time.sleep(tick_ms / 1000.0)
                target = int((time.monotonic() - start) * 1000)
                with self._lock:
                    if target > self.clock.now_ms:
                        self.clock.advance(target - self.clock.now_ms)

        self._pump_thread = threading.Thread(target=run, daemon=True)
        self._pump_thread.start()

    def stop_pump(self) -> None:
        self._pump_stop.set()
        if self._pump_thread is not None:
            self._pump_thread.join(timeout=1.0)

    def log_digest(self) -> str:
        """Stable hash of the delivery trace, for determinism checks."""
        h = hashlib.sha256()
        for ev in self.delivery_log:
            h.update(f"{ev.seq}|{ev.ts}|{ev.subscriber}|{ev.topic}|{ev.duplicate}|".encode())
            h.update(ev.payload)
        return h.hexdigest()

    # -- internals --

    def _subscribe(self, client: "BusClient", filt: str, callback) -> _Subscription:
        validate_filter(filt)
        with self._lock:
            sub = _Subscription(client, filt, callback)
            self.subscriptions.append(sub)
            for topic, msg in sorted(self.retained.items()):
                if topic_matches(filt, topic):
                    self._enqueue(sub, ("retained", topic), msg)
            return sub

    def _unsubscribe(self, sub: _Subscription) -> None:
        with self._lock:
            if sub in self.subscriptions:
                self.subscriptions.remove(sub)

    def _accept(self, client: "BusClient", msg: Message) -> None:
        """Message has traversed the publisher leg; route it."""
        if msg.retain:
            self.retained[msg.topic] = msg
        for sub in list(self.subscriptions):
            if topic_matches(sub.filter, msg.topic):
                self._enqueue(sub, (client.client_id, msg.topic), msg)

    def _enqueue(self, sub: _Subscription, key: tuple[str, str], msg: Message) -> None:
        sub.queues.setdefault(key, deque()).append(msg)
        self._pump_queue(sub, key)

    def _pump_queue(self, sub: _Subscription, key: tuple[str, str]) -> None:
        if key in sub.in_flight:
            return
        queue = sub.queues.get(key)
        if not queue:
            return
        msg = queue.popleft()
        sub.in_flight.add(key)
        self._attempt(sub, key, msg, attempt=0, duplicate=False)

    def _attempt(self, sub: _Subscription, key: tuple[str, str], msg: Message,
                 attempt: int, duplicate: bool) -> None:
        fault = sub.client.fault
        now = self.clock.now_ms
        lost = fault.partitioned(now) or (fault.drop_prob > 0.0 and self.rng.random() < fault.drop_prob)
        # draw ack loss unconditionally so RNG consumption is attempt-stable
        ack_lost = fault.drop_prob > 0.0 and self.rng.random() < fault.drop_prob
        if lost:
            if msg.qos == QoS.AT_LEAST_ONCE and attempt < MAX_RETRIES:
                self.clock.schedule(
                    REDELIVERY_TIMEOUT_MS,
                    lambda: self._attempt(sub, key, msg, attempt + 1, duplicate))
                return
            if msg.qos == QoS.AT_LEAST_ONCE:
                self.dead_letters.append(msg)
            self._settle(sub, key)
            return
        latency = fault.latency_ms
        if fault.jitter_ms:
            latency += self.rng.randint(0, fault.jitter_ms)
        redelivery = msg.qos == QoS.AT_LEAST_ONCE and ack_lost and attempt < MAX_RETRIES

        def deliver() -> None:
            self.delivery_log.append(DeliveryEvent(
                seq=next(self._delivery_seq), ts=self.clock.now_ms,
                subscriber=sub.client.client_id, topic=msg.topic,
                payload=msg.payload, duplicate=duplicate))
            sub.callback(msg)
            if not redelivery:
                self._settle(sub, key)

        self.clock.schedule(latency, deliver)
        if redelivery:
            self.clock.schedule(
                REDELIVERY_TIMEOUT_MS,
                lambda: self._attempt(sub, key, msg, attempt + 1, True))

    def _settle(self, sub: _Subscription, key: tuple[str, str]) -> None:
        sub.in_flight.discard(key)
        self._pump_queue(sub, key)


class BusClient:
    """Handle for one role's attachment to the broker."""

    def __init__(self, broker: Broker, client_id: str, fault: LinkFault) -> None:
        self.broker = broker
        self.client_id = client_id
        self.fault = fault

    def connected(self) -> bool:
        return not self.fault.partitioned(self.broker.clock.now_ms)

    def publish(self, topic: str, payload: bytes, qos: QoS = QoS.AT_MOST_ONCE,
                retain: bool = False) -> bool:
        """Returns True iff the message entered the link (or was buffered, QoS 1)."""
        validate_topic(topic)
        if len(payload) > MAX_PAYLOAD:
            raise Rejected(f"payload {len(payload)} exceeds {MAX_PAYLOAD} bytes")
        broker = self.broker
        with broker._lock:
            now = broker.clock.now_ms
            msg = Message(topic, bytes(payload), qos, retain, now)
            if self.fault.partitioned(now):
                if qos == QoS.AT_MOST_ONCE:
                    return False
                heal = self.fault.next_heal(now)
                assert heal is not None
                broker.clock.schedule(heal - now, lambda: self._uplink(msg))
                return True
            self._uplink(msg)
            return True

    def _uplink(self, msg: Message) -> None:
        broker = self.broker
        latency = self.fault.latency_ms
        if self.fault.jitter_ms:
            latency += broker.rng.randint(0, self.fault.jitter_ms)
        broker.clock.schedule(latency, lambda: broker._accept(self, msg))

    def subscribe(self, filt: str, callback: Callable[[Message], None]) -> _Subscription:
        return self.broker._subscribe(self, filt, callback)

    def unsubscribe(self, sub: _Subscription) -> None:
        self.broker._unsubscribe(sub)
