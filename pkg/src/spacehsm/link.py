"""Simulated UHF/VHF radio link.

Byte-level AX.25 UI framing (no bit stuffing / NRZI), a 5-byte message
header inside the info field, uplink/downlink bit rates, a transmit
duty-cycle limiter, square-wave pass windows and random frame loss.
"""

from __future__ import annotations

import enum
import math
import random
import struct
from bisect import bisect_right
from dataclasses import dataclass
from typing import Iterable, Sequence

from pydantic import BaseModel, ConfigDict, Field

from .errors import SizeError

INFO_MAX = 256
HEADER_SIZE = 5
DATA_PER_FRAME = INFO_MAX - HEADER_SIZE  # 251
MAX_FRAMES = 255
FRAME_OVERHEAD = 35
FRAME_MAX = INFO_MAX + FRAME_OVERHEAD  # 291

FLAG = 0x7E
UI_CONTROL = 0x03
PID_NO_L3 = 0xF0
DUTY_WINDOW_S = 60.0


# --- CRC-16/X.25 -----------------------------------------------------------

def _make_table() -> list[int]:
    table = []
    for byte in range(256):
        crc = byte
        for _ in range(8):
            crc = (crc >> 1) ^ 0x8408 if crc & 1 else crc >> 1
        table.append(crc)
    return table


_CRC_TABLE = _make_table()


def crc16_x25(data: bytes) -> int:
    """CRC-16/X.25 (reflected 0x1021, init 0xFFFF, xorout 0xFFFF)."""
    crc = 0xFFFF
    for b in data:
        crc = (crc >> 8) ^ _CRC_TABLE[(crc ^ b) & 0xFF]
    return crc ^ 0xFFFF


# --- addresses ---------------------------------------------------------------

def encode_address(callsign: str, ssid: int = 0, last: bool = False) -> bytes:
    """Standard AX.25 address: six shifted ASCII chars plus SSID byte."""
    call = callsign.upper()
    if len(call) > 6 or not call.isascii():
        raise ValueError(f"bad callsign {callsign!r}")
    if not 0 <= ssid <= 15:
        raise ValueError("ssid must be 0..15")
    out = bytes((ord(c) << 1) for c in call.ljust(6))
    return out + bytes([0x60 | (ssid << 1) | (1 if last else 0)])


def decode_address(raw: bytes) -> tuple[str, int]:
    call = "".join(chr(b >> 1) for b in raw[:6]).rstrip()
    return call, (raw[6] >> 1) & 0x0F


# Two fixed digipeater slots keep the overhead at the AX.25 maximum.
_VIA = encode_address("WIDE1", 1) + encode_address("WIDE2", 1, last=True)


class MessageKind(enum.IntEnum):
    REQUEST = 1
    RESPONSE = 2
    BEACON = 3
    ATTESTATION = 4


@dataclass(frozen=True)
class MessageHeader:
    message_id: int
    total_frames: int
    frame_index: int
    kind: MessageKind

    _FMT = struct.Struct(">HBBB")

    def __post_init__(self) -> None:
        if not 0 <= self.message_id <= 0xFFFF:
            raise ValueError("message_id must fit in 16 bits")
        if not 0 <= self.frame_index < self.total_frames <= MAX_FRAMES:
            raise ValueError("frame_index must be < total_frames <= 255")

    def to_bytes(self) -> bytes:
        return self._FMT.pack(self.message_id, self.total_frames, self.frame_index, int(self.kind))

    @classmethod
    def from_bytes(cls, data: bytes) -> "MessageHeader":
        mid, total, index, kind = cls._FMT.unpack(data[:HEADER_SIZE])
        return cls(mid, total, index, MessageKind(kind))


@dataclass(frozen=True)
class Ax25Frame:
    dest: str
    src: str
    info: bytes
    control: int = UI_CONTROL
    pid: int = PID_NO_L3

    def __post_init__(self) -> None:
        if len(self.info) > INFO_MAX:
            raise SizeError(f"info field of {len(self.info)} bytes exceeds {INFO_MAX}")

    def _body(self) -> bytes:
        return (encode_address(self.dest) + encode_address(self.src) + _VIA
                + bytes([self.control, self.pid]) + self.info)

    def encode(self) -> bytes:
        body = self._body()
        return bytes([FLAG, FLAG]) + body + struct.pack("<H", crc16_x25(body)) + bytes([FLAG])

    @property
    def wire_length(self) -> int:
        return len(self.info) + FRAME_OVERHEAD

    @property
    def bits(self) -> int:
        return 8 * self.wire_length

    @property
    def header(self) -> MessageHeader:
        return MessageHeader.from_bytes(self.info)

    @property
    def data(self) -> bytes:
        return self.info[HEADER_SIZE:]

    @classmethod
    def decode(cls, raw: bytes) -> "Ax25Frame":
        """Parse an encoded frame; raises ValueError on bad flags or FCS."""
        if len(raw) < FRAME_OVERHEAD or len(raw) > FRAME_MAX:
            raise ValueError("frame length out of range")
        if raw[0] != FLAG or raw[1] != FLAG or raw[-1] != FLAG:
            raise ValueError("missing frame flags")
        body, fcs = raw[2:-3], raw[-3:-1]
        if struct.unpack("<H", fcs)[0] != crc16_x25(body):
            raise ValueError("FCS mismatch")
        dest, _ = decode_address(body[0:7])
        src, _ = decode_address(body[7:14])
        control, pid = body[28], body[29]
        return cls(dest=dest, src=src, info=bytes(body[30:]), control=control, pid=pid)

    def hexdump(self) -> str:
        return self.encode().hex()


def fragment(payload: bytes, kind: MessageKind, message_id: int,
             src: str = "GROUND", dest: str = "SPCHSM") -> list[Ax25Frame]:
    if len(payload) > DATA_PER_FRAME * MAX_FRAMES:
        raise SizeError(f"payload of {len(payload)} bytes needs more than {MAX_FRAMES} frames")
    total = max(1, math.ceil(len(payload) / DATA_PER_FRAME))
    frames = []
    for i in range(total):
        chunk = payload[i * DATA_PER_FRAME:(i + 1) * DATA_PER_FRAME]
        hdr = MessageHeader(message_id, total, i, kind)
        frames.append(Ax25Frame(dest=dest, src=src, info=hdr.to_bytes() + chunk))
    return frames


def reassemble(frames: Iterable[Ax25Frame | bytes]) -> bytes | None:
    """Rebuild one message. Encoded frames failing the FCS are discarded.

    Returns None while any fragment is missing.
    """
    parts: dict[int, bytes] = {}
    ident = None
    total = None
    for f in frames:
        if isinstance(f, (bytes, bytearray)):
            try:
                f = Ax25Frame.decode(bytes(f))
            except ValueError:
                continue
        try:
            hdr = f.header
        except (ValueError, struct.error):
            continue
        if ident is None:
            ident, total = hdr.message_id, hdr.total_frames
        elif hdr.message_id != ident:
            raise ValueError("frames from more than one message")
        if hdr.total_frames != total:
            continue
        parts[hdr.frame_index] = f.data
    if total is None or len(parts) < total:
        return None
    return b"".join(parts[i] for i in range(total))


class Reassembler:
    """Buffers fragments per (source, message id) until complete."""

    def __init__(self) -> None:
        self._pending: dict[tuple[str, int], dict[int, Ax25Frame]] = {}

    def add(self, frame: Ax25Frame) -> tuple[MessageKind, bytes] | None:
        hdr = frame.header
        key = (frame.src, hdr.message_id)
        parts = self._pending.setdefault(key, {})
        if parts and next(iter(parts.values())).header.total_frames != hdr.total_frames:
            parts.clear()
        parts[hdr.frame_index] = frame
        if len(parts) < hdr.total_frames:
            return None
        del self._pending[key]
        return hdr.kind, b"".join(parts[i].data for i in range(hdr.total_frames))


# --- channel timing ------------------------------------------------------------

class LinkConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    uplink_bps: float = Field(1200.0, gt=0)
    downlink_bps: float = Field(2400.0, gt=0)
    tx_duty_cycle: float = Field(0.30, gt=0, le=1)
    pass_duration_s: float = Field(600.0, gt=0)
    orbit_period_s: float = Field(5400.0, gt=0)
    loss_probability: float = Field(0.0, ge=0, le=1)


class Direction(str, enum.Enum):
    UP = "up"
    DOWN = "down"


def pass_visible(config: LinkConfig, t: float, offset: float = 0.0) -> bool:
    if t < 0:
        raise ValueError("time must be non-negative")
    return (t - offset) % config.orbit_period_s < config.pass_duration_s


def pass_index(config: LinkConfig, t: float, offset: float = 0.0) -> int:
    return math.floor((t - offset) / config.orbit_period_s)


def pass_end(config: LinkConfig, t: float, offset: float = 0.0) -> float:
    """End of the pass containing ``t`` (assumes t is inside one)."""
    return offset + pass_index(config, t, offset) * config.orbit_period_s + config.pass_duration_s


def next_pass_start(config: LinkConfig, t: float, offset: float = 0.0) -> float:
    if pass_visible(config, max(t, 0.0), offset):
        return t
    return offset + (pass_index(config, t, offset) + 1) * config.orbit_period_s


def airtime(config: LinkConfig, frames: Sequence[Ax25Frame], direction: Direction) -> float:
    rate = config.uplink_bps if direction is Direction.UP else config.downlink_bps
    return sum(f.bits for f in frames) / rate


def payload_airtime(config: LinkConfig, payload_bytes: int, direction: Direction = Direction.UP) -> float:
    """Airtime of a payload of the given size, using exact encoded frame lengths."""
    full, rest = divmod(payload_bytes, DATA_PER_FRAME)
    bits = full * FRAME_MAX * 8
    if rest or not full:
        bits += (rest + HEADER_SIZE + FRAME_OVERHEAD) * 8
    rate = config.uplink_bps if direction is Direction.UP else config.downlink_bps
    return bits / rate


@dataclass(frozen=True)
class Delivery:
    frame: Ax25Frame
    start: float
    end: float
    arrival: float | None  # None means dropped
    reason: str = ""


class LinkChannel:
    """One transmitter: serializes frames and, on the downlink, enforces the
    duty cycle over a sliding window."""

    def __init__(self, config: LinkConfig, direction: Direction,
                 window_s: float = DUTY_WINDOW_S) -> None:
        self.config = config
        self.direction = direction
        self.window_s = window_s
        self.busy_until = 0.0
        self.intervals: list[tuple[float, float]] = []
        self._ends: list[float] = []

    @property
    def rate(self) -> float:
        c = self.config
        return c.uplink_bps if self.direction is Direction.UP else c.downlink_bps

    def _used(self, lo: float, hi: float) -> float:
        total = 0.0
        i = bisect_right(self._ends, lo)
        for s, e in self.intervals[i:]:
            if s >= hi:
                break
            total += min(e, hi) - max(s, lo)
        return total

    def _duty_start(self, t: float, a: float) -> float:
        """Earliest start >= t for a frame of airtime ``a`` within the duty budget.

        Nothing is booked after ``t``, so the worst window is the one ending
        when this frame ends. Walking back from the newest booking finds the
        point where the allowance (budget minus this frame) runs out; the
        window must begin no earlier than that.
        """
        budget = self.config.tx_duty_cycle * self.window_s
        if a > budget:
            raise SizeError(f"frame airtime {a:.3f}s exceeds duty budget {budget:.3f}s")
        allowance = budget - a
        used = 0.0
        for s, e in reversed(self.intervals):
            if e <= t + a - self.window_s:
                break
            if used + (e - s) > allowance:
                lo = e - (allowance - used)
                return max(t, lo + self.window_s - a)
            used += e - s
        return t

    def schedule(self, frames: Sequence[Ax25Frame], start_time: float) -> list[tuple[Ax25Frame, float, float]]:
        """Reserve airtime for ``frames`` back to back; returns (frame, start, end)."""
        out = []
        t = max(start_time, self.busy_until)
        for f in frames:
            a = f.bits / self.rate
            if self.direction is Direction.DOWN:
                t = self._duty_start(t, a)
            out.append((f, t, t + a))
            self.intervals.append((t, t + a))
            self._ends.append(t + a)
            t += a
        self.busy_until = t
        return out

    def airtime_between(self, lo: float, hi: float) -> float:
        return self._used(lo, hi)


def deliver(config: LinkConfig, start: float, end: float, rng: random.Random,
            offset: float = 0.0) -> tuple[float | None, str]:
    """Fate of one frame at one receiver: arrival time or a drop reason.

    The loss coin is always drawn so the random stream doesn't depend on
    visibility.
    """
    coin = rng.random()
    if not (pass_visible(config, start, offset) and pass_visible(config, end, offset)
            and pass_index(config, start, offset) == pass_index(config, end, offset)):
        return None, "no_visibility"
    if coin < config.loss_probability:
        return None, "lost"
    return end, ""


def transmit(config: LinkConfig, frames: Sequence[Ax25Frame], direction: Direction | str,
             start_time: float, rng: random.Random | None = None,
             channel: LinkChannel | None = None) -> list[Delivery]:
    """Send frames to a single receiver whose pass starts at t=0."""
    direction = Direction(direction)
    rng = rng or random.Random(0)
    channel = channel or LinkChannel(config, direction)
    out = []
    for f, s, e in channel.schedule(frames, start_time):
        arrival, reason = deliver(config, s, e, rng)
        out.append(Delivery(f, s, e, arrival, reason))
    return out
