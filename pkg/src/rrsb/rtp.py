"""RTP packetization, reassembly and a fixed-delay jitter buffer.

Only the 12-byte fixed header is used: no CSRCs, no extensions. An access
unit maps onto a run of packets sharing one timestamp, with the marker bit
on the last packet.
"""

from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass, field
from typing import Optional

from .errors import MalformedError, PreconditionError
from .media import AccessUnit

RTP_VERSION = 2
HEADER_SIZE = 12
DEFAULT_MTU_PAYLOAD = 1200
DEFAULT_PT = 96

_HDR = struct.Struct(">BBHII")


@dataclass(frozen=True)
class RtpHeader:
    marker: bool
    payload_type: int
    seq: int
    timestamp: int
    ssrc: int
    version: int = RTP_VERSION
    padding: bool = False
    extension: bool = False
    csrc_count: int = 0


@dataclass(frozen=True)
class RtpPacket:
    header: RtpHeader
    payload: bytes

    def to_bytes(self) -> bytes:
        return serialize_header(self.header) + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "RtpPacket":
        return cls(parse_header(data), bytes(data[HEADER_SIZE:]))


def serialize_header(h: RtpHeader) -> bytes:
    b0 = (h.version << 6) | (int(h.padding) << 5) | (int(h.extension) << 4) | (h.csrc_count & 0x0F)
    b1 = (int(h.marker) << 7) | (h.payload_type & 0x7F)
    return _HDR.pack(b0, b1, h.seq & 0xFFFF, h.timestamp & 0xFFFFFFFF, h.ssrc & 0xFFFFFFFF)


def parse_header(data: bytes) -> RtpHeader:
    if len(data) < HEADER_SIZE:
        raise MalformedError(f"RTP header needs {HEADER_SIZE} bytes, got {len(data)}", len(data))
    b0, b1, seq, ts, ssrc = _HDR.unpack_from(data)
    version = b0 >> 6
    if version != RTP_VERSION:
        raise MalformedError(f"RTP version {version} != 2", 0)
    return RtpHeader(
        marker=bool(b1 >> 7),
        payload_type=b1 & 0x7F,
        seq=seq,
        timestamp=ts,
        ssrc=ssrc,
        version=version,
        padding=bool(b0 & 0x20),
        extension=bool(b0 & 0x10),
        csrc_count=b0 & 0x0F,
    )


def packetize(
    au: AccessUnit,
    mtu_payload: int = DEFAULT_MTU_PAYLOAD,
    pt: int = DEFAULT_PT,
    ssrc: int = 0,
    seq_start: int = 0,
) -> list[RtpPacket]:
    if mtu_payload < 64:
        raise PreconditionError("mtu_payload must be >= 64")
    data = au.payload
    chunks = [data[i : i + mtu_payload] for i in range(0, len(data), mtu_payload)] or [b""]
    ts = au.pts_90k & 0xFFFFFFFF
    last = len(chunks) - 1
    return [
        RtpPacket(RtpHeader(i == last, pt, (seq_start + i) & 0xFFFF, ts, ssrc), chunk)
        for i, chunk in enumerate(chunks)
    ]


# --- reassembly --------------------------------------------------------------


@dataclass
class ReassembledAU:
    timestamp: int
    payload: bytes
    first_arrival_us: float
    last_arrival_us: float
    packets: int


@dataclass
class LossEvent:
    timestamp: int
    first_seq: int
    reason: str


@dataclass
class _Bucket:
    timestamp: int
    packets: dict = field(default_factory=dict)  # extended seq -> payload
    marker_seq: Optional[int] = None
    first_arrival: float = 0.0
    last_arrival: float = 0.0


class Depacketizer:
    """Reassembles access units from possibly reordered RTP packets.

    An AU is complete when its marker packet and every sequence number from
    its start boundary up to the marker are present. The start boundary is
    known once the packet just before it has been seen (it belongs to another
    AU), or when it equals ``initial_seq``. An incomplete AU is given up as
    lost as soon as the marker of a later AU arrives.
    """

    def __init__(self, initial_seq: Optional[int] = None, history: int = 4096):
        self._highest: Optional[int] = None
        self._initial = initial_seq
        self._buckets: dict[int, _Bucket] = {}
        self._seen: dict[int, int] = {}  # extended seq -> timestamp
        self._history = history
        self._resolved: set = set()
        self.losses: list[LossEvent] = []
        self.late_packets = 0
        self.backlog: list[bytes] = []

    def _extend(self, seq: int) -> int:
        if self._highest is None:
            self._highest = seq
            if self._initial is not None:
                self._initial = seq + ((self._initial - seq + 0x8000) & 0xFFFF) - 0x8000
            return seq
        ext = self._highest + ((seq - self._highest + 0x8000) & 0xFFFF) - 0x8000
        if ext > self._highest:
            self._highest = ext
        return ext

    def push(self, packet: RtpPacket, arrival_us: float = 0.0) -> list[ReassembledAU]:
        """Feed one packet; return the AUs it completed (usually zero or one)."""
        h = packet.header
        ext = self._extend(h.seq)
        if ext in self._seen or h.timestamp in self._resolved:
            self.late_packets += 1
            return []
        self._seen[ext] = h.timestamp
        if len(self._seen) > 2 * self._history:
            # trim in batches so the sort is amortised
            for old in sorted(self._seen)[: len(self._seen) - self._history]:
                del self._seen[old]
        bucket = self._buckets.get(h.timestamp)
        if bucket is None:
            bucket = self._buckets[h.timestamp] = _Bucket(h.timestamp, first_arrival=arrival_us)
        bucket.packets[ext] = packet.payload
        bucket.last_arrival = arrival_us
        if h.marker:
            bucket.marker_seq = ext
        out = []
        done = self._try_complete(bucket)
        if done is not None:
            out.append(done)
        # this packet may be the boundary that confirms the next AU's start
        nxt = self._seen.get(ext + 1)
        if nxt is not None and nxt != h.timestamp and nxt in self._buckets:
            later = self._try_complete(self._buckets[nxt])
            if later is not None:
                out.append(later)
        if h.marker:
            self._expire_older(ext)
        return out

    def _try_complete(self, b: _Bucket) -> Optional[ReassembledAU]:
        if b.marker_seq is None:
            return None
        start = min(b.packets)
        if b.marker_seq - start + 1 != len(b.packets):
            return None
        before = self._seen.get(start - 1)
        if not (start == self._initial or (before is not None and before != b.timestamp)):
            return None
        payload = b"".join(b.packets[s] for s in range(start, b.marker_seq + 1))
        del self._buckets[b.timestamp]
        self._mark_resolved(b.timestamp)
        return ReassembledAU(b.timestamp, payload, b.first_arrival, b.last_arrival, len(b.packets))

    def _expire_older(self, marker_ext: int) -> None:
        for ts, b in list(self._buckets.items()):
            top = b.marker_seq if b.marker_seq is not None else max(b.packets)
            if top < marker_ext:
                del self._buckets[ts]
                self._mark_resolved(ts)
                self.losses.append(LossEvent(ts, min(b.packets) & 0xFFFF, "gap"))

    def _mark_resolved(self, ts: int) -> None:
        self._resolved.add(ts)
        if len(self._resolved) > 2 * self._history:
            self._resolved = set(sorted(self._resolved)[-self._history :])


def depacketize(state: Depacketizer, packet: RtpPacket, arrival_us: float = 0.0) -> Optional[bytes]:
    """Payload of the oldest AU completed by ``packet``, if any.

    When one packet completes two AUs at once the newer one is kept in
    ``state.backlog``.
    """
    done = state.push(packet, arrival_us)
    if not done:
        return None
    state.backlog.extend(d.payload for d in done[1:])
    return done[0].payload


# --- jitter buffer -------------------------------------------------------------


@dataclass(frozen=True)
class JitterBufferConfig:
    target_delay_ms: float = 50
    max_late_ms: float = 200

    def __post_init__(self):
        if self.target_delay_ms < 0:
            raise PreconditionError("target_delay_ms must be >= 0")


@dataclass
class JitterEvent:
    kind: str  # "late" (released out of order) or "dropped-late"
    seq: int
    lateness_us: float


class JitterBuffer:
    """Fixed-delay playout buffer.

    An AU becomes ready ``target_delay`` after its arrival and leaves in pts
    order: a ready AU waits behind an earlier-pts AU still in the buffer.
    An AU that arrives after a later-pts AU already left is late; it is
    released at once if its lateness is within ``max_late_ms`` and dropped
    otherwise.
    """

    def __init__(self, cfg: JitterBufferConfig = JitterBufferConfig()):
        self.cfg = cfg
        self._heap: list = []
        self._late: list = []
        self._last_pts: Optional[int] = None
        self._last_pop_us: Optional[float] = None
        self.events: list[JitterEvent] = []

    def __len__(self):
        return len(self._heap) + len(self._late)

    def insert(self, au: AccessUnit, arrival_us: float) -> None:
        if self._last_pts is not None and au.pts_90k <= self._last_pts:
            lateness = arrival_us - self._last_pop_us
            if lateness > self.cfg.max_late_ms * 1000:
                self.events.append(JitterEvent("dropped-late", au.seq, lateness))
            else:
                self.events.append(JitterEvent("late", au.seq, lateness))
                self._late.append(au)
            return
        ready = arrival_us + self.cfg.target_delay_ms * 1000
        heapq.heappush(self._heap, (au.pts_90k, ready, au.seq, au))

    def next_ready_us(self) -> Optional[float]:
        if self._late:
            return self._last_pop_us
        return self._heap[0][1] if self._heap else None

    def pop_ready(self, now_us: float) -> list[AccessUnit]:
        out = self._late
        self._late = []
        while self._heap and self._heap[0][1] <= now_us:
            _, _, _, au = heapq.heappop(self._heap)
            out.append(au)
            self._last_pts = au.pts_90k
            self._last_pop_us = now_us
        return out


def jitter_insert(buf: JitterBuffer, au: AccessUnit, arrival_ts: float) -> None:
    buf.insert(au, arrival_ts)


def jitter_pop_ready(buf: JitterBuffer, now: float) -> list[AccessUnit]:
    return buf.pop_ready(now)
