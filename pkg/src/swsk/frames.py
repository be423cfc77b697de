"""Domain types and the binary frame codec for the device-to-gateway hop.

Wire format (28 bytes, little-endian):

    [0]     magic 0xA5
    [1]     version 0x01
    [2:4]   seq          u16, wrapping sample counter
    [4:8]   t_ms         u32, device uptime
    [8]     flags        bit set, see FrameFlags
    [9]     hr           u8 bpm, 0 = invalid
    [10]    spo2         u8 percent, 0 = invalid
    [11:13] body_temp    u16 centi-degC, 0xFFFF = invalid
    [13:15] gsr          u16 in 0.01 uS steps, 0xFFFF = invalid
    [15:17] amb_temp     i16 centi-degC
    [17]    humidity     u8 percent RH
    [18:20] light        u16 lux
    [20:22] co2          u16 ppm
    [22:24] voc          u16 ppb
    [24]    sound        u8 dB
    [25]    battery      u8 percent
    [26:28] crc          CRC-16/CCITT-FALSE over bytes 0..25

Skin measurement travels as conductance (gsr, microsiemens); the simulated
sensor converts from resistance (conductance = 1/resistance) before encoding.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

FRAME_LEN = 28
FRAME_MAGIC = 0xA5
FRAME_VERSION = 0x01

U16_INVALID = 0xFFFF

_LAYOUT = struct.Struct("<BBHIBBBHHhBHHHBB")


class FrameFlags(enum.IntFlag):
    BUTTON_ESTOP = 0x01
    SENSOR_FAULT = 0x02
    LOW_BATTERY = 0x04
    ALERT_LED_ON = 0x08

    def names(self) -> list[str]:
        return [f.name for f in FrameFlags if f in self and f.name]


class FrameError(Exception):
    """Base class for codec failures."""


class EncodingError(FrameError):
    pass


class DecodeError(FrameError):
    pass


class ShortFrame(DecodeError):
    pass


class BadMagic(DecodeError):
    pass


class BadVersion(DecodeError):
    pass


class CrcMismatch(DecodeError):
    pass


class FieldOutOfRange(DecodeError):
    pass


def crc16_ccitt_false(data: bytes) -> int:
    """CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no xorout."""
    crc = 0xFFFF
    for byte in data:
        crc ^= byte << 8
        for _ in range(8):
            if crc & 0x8000:
                crc = ((crc << 1) ^ 0x1021) & 0xFFFF
            else:
                crc = (crc << 1) & 0xFFFF
    return crc


@dataclass(frozen=True, slots=True)
class DeviceFrame:
    """One wearable sample: vitals + environment + flags, raw wire units."""

    seq: int
    t_ms: int
    flags: FrameFlags = FrameFlags(0)
    hr: int = 0                     # bpm, 0 = invalid
    spo2: int = 0                   # percent, 0 = invalid
    body_temp: int = U16_INVALID    # centi-degC, 0xFFFF = invalid
    gsr: int = U16_INVALID          # 0.01 uS units, 0xFFFF = invalid
    amb_temp: int = 0               # centi-degC, signed
    humidity: int = 0               # percent RH
    light: int = 0                  # lux
    co2: int = 0                    # ppm
    voc: int = 0                    # ppb
    sound: int = 0                  # dB
    battery: int = 0                # percent

    def validate(self) -> None:
        if not 0 <= self.seq <= 0xFFFF:
            raise FieldOutOfRange(f"seq {self.seq} outside u16")
        if not 0 <= self.t_ms <= 0xFFFFFFFF:
            raise FieldOutOfRange(f"t_ms {self.t_ms} outside u32")
        if self.hr != 0 and not 25 <= self.hr <= 250:
            raise FieldOutOfRange(f"hr {self.hr} outside {{0}} or [25, 250]")
        if self.spo2 != 0 and not 70 <= self.spo2 <= 100:
            raise FieldOutOfRange(f"spo2 {self.spo2} outside {{0}} or [70, 100]")
        if self.body_temp != U16_INVALID and not 3000 <= self.body_temp <= 4300:
            raise FieldOutOfRange(f"body_temp {self.body_temp} outside [3000, 4300]")
        if not 0 <= self.gsr <= 0xFFFF:
            raise FieldOutOfRange(f"gsr {self.gsr} outside u16")
        if not -32768 <= self.amb_temp <= 32767:
            raise FieldOutOfRange(f"amb_temp {self.amb_temp} outside i16")
        if not 0 <= self.humidity <= 100:
            raise FieldOutOfRange(f"humidity {self.humidity} outside [0, 100]")
        if not 0 <= self.light <= 0xFFFF:
            raise FieldOutOfRange(f"light {self.light} outside u16")
        if not 0 <= self.co2 <= 0xFFFF:
            raise FieldOutOfRange(f"co2 {self.co2} outside u16")
        if not 0 <= self.voc <= 0xFFFF:
            raise FieldOutOfRange(f"voc {self.voc} outside u16")
        if not 0 <= self.sound <= 255:
            raise FieldOutOfRange(f"sound {self.sound} outside u8")
        if not 0 <= self.battery <= 100:
            raise FieldOutOfRange(f"battery {self.battery} outside [0, 100]")

    # Physical-unit views used at the gateway boundary.
    @property
    def body_temp_c(self) -> float | None:
        return None if self.body_temp == U16_INVALID else self.body_temp / 100.0

    @property
    def gsr_us(self) -> float | None:
        return None if self.gsr == U16_INVALID else self.gsr / 100.0

    @property
    def amb_temp_c(self) -> float:
        return self.amb_temp / 100.0


def encode_frame(frame: DeviceFrame) -> bytes:
    try:
        frame.validate()
    except FieldOutOfRange as exc:
        raise EncodingError(str(exc)) from exc
    body = _LAYOUT.pack(
        FRAME_MAGIC,
        FRAME_VERSION,
        frame.seq,
        frame.t_ms,
        int(frame.flags) & 0xFF,
        frame.hr,
        frame.spo2,
        frame.body_temp,
        frame.gsr,
        frame.amb_temp,
        frame.humidity,
        frame.light,
        frame.co2,
        frame.voc,
        frame.sound,
        frame.battery,
    )
    return body + struct.pack("<H", crc16_ccitt_false(body))


def decode_frame(data: bytes) -> DeviceFrame:
    if len(data) != FRAME_LEN:
        raise ShortFrame(f"expected {FRAME_LEN} bytes, got {len(data)}")
    body, (crc,) = data[:26], struct.unpack("<H", data[26:28])
    if crc16_ccitt_false(body) != crc:
        raise CrcMismatch(f"crc 0x{crc:04X} does not match payload")
    (magic, version, seq, t_ms, flags, hr, spo2, body_temp, gsr, amb_temp,
     humidity, light, co2, voc, sound, battery) = _LAYOUT.unpack(body)
    if magic != FRAME_MAGIC:
        raise BadMagic(f"magic 0x{magic:02X}")
    if version != FRAME_VERSION:
        raise BadVersion(f"version 0x{version:02X}")
    frame = DeviceFrame(
        seq=seq, t_ms=t_ms, flags=FrameFlags(flags), hr=hr, spo2=spo2,
        body_temp=body_temp, gsr=gsr, amb_temp=amb_temp, humidity=humidity,
        light=light, co2=co2, voc=voc, sound=sound, battery=battery,
    )
    frame.validate()
    return frame


@dataclass(frozen=True, slots=True)
class MotionSample:
    """One gateway accelerometer reading, m/s^2."""

    ax: float
    ay: float
    az: float
    magnitude: float
    sampled_at: int  # ms

    @classmethod
    def from_components(cls, ax: float, ay: float, az: float, sampled_at: int) -> "MotionSample":
        return cls(ax, ay, az, (ax * ax + ay * ay + az * az) ** 0.5, sampled_at)


@dataclass(frozen=True, slots=True)
class WorkerTelemetry:
    """Gateway-enriched record crossing the gateway-to-server hop."""

    worker_id: str
    site_id: str
    recv_ts: int          # gateway receive time, ms
    gateway_seq: int      # strictly increasing per gateway
    frame: DeviceFrame
    motion: MotionSample | None = None

    def to_payload(self) -> dict:
        f = self.frame
        return {
            "worker_id": self.worker_id,
            "site_id": self.site_id,
            "recv_ts": self.recv_ts,
            "gateway_seq": self.gateway_seq,
            "vitals": {
                "hr": f.hr or None,
                "spo2": f.spo2 or None,
                "body_temp_c": f.body_temp_c,
                "gsr_us": f.gsr_us,
            },
            "env": {
                "amb_temp_c": f.amb_temp_c,
                "humidity": f.humidity,
                "light": f.light,
                "co2": f.co2,
                "voc": f.voc,
                "sound": f.sound,
            },
            "motion": None if self.motion is None else {
                "ax": self.motion.ax,
                "ay": self.motion.ay,
                "az": self.motion.az,
                "mag": self.motion.magnitude,
            },
            "flags": self.frame.flags.names(),
            "battery": f.battery,
        }
