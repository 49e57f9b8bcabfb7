"""SMT: a small stream-multiplexed transport over unreliable datagrams.

Each endpoint owns one :class:`SmtConnection`. Streams are unidirectional
and numbered per sending side from 1, so a STREAM frame always names a
stream of the peer and an ACK always names one of our own. Reliability is
cumulative ACKs plus a per-stream retransmission timer; there is no fast
retransmit, congestion control or flow control. An ACK that also reports
byte ranges held above the cumulative offset goes out as the extension
frame type ACK_RANGES, so plain ACKs keep the 13-byte layout.
"""

from __future__ import annotations

import bisect
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

from .errors import MalformedError, PreconditionError, ProtocolError

STREAM, ACK, DATAGRAM, PING, ACK_RANGES = 0, 1, 2, 3, 4
FIN = 0x01

_STREAM_HDR = struct.Struct(">BIQBH")
_ACK = struct.Struct(">BIQ")
_ACK_RANGES = struct.Struct(">BIQB")
_RANGE = struct.Struct(">QQ")
MAX_ACK_RANGES = 32
_DGRAM_HDR = struct.Struct(">BH")

STREAM_HEADER_SIZE = _STREAM_HDR.size  # 16
DEFAULT_MTU_PAYLOAD = 1200
MIN_RTO_US = 25_000
RTT_ALPHA = 0.125


# --- frames ------------------------------------------------------------------


@dataclass(frozen=True)
class StreamFrame:
    stream_id: int
    offset: int
    fin: bool
    data: bytes


@dataclass(frozen=True)
class AckFrame:
    stream_id: int
    cum_offset: int
    ranges: tuple = ()  # received (start, end) byte ranges above cum_offset


@dataclass(frozen=True)
class DatagramFrame:
    data: bytes


@dataclass(frozen=True)
class PingFrame:
    pass


SmtFrame = Union[StreamFrame, AckFrame, DatagramFrame, PingFrame]


def encode_frame(frame: SmtFrame) -> bytes:
    if isinstance(frame, StreamFrame):
        if len(frame.data) > 0xFFFF:
            raise PreconditionError("STREAM frame data exceeds 65535 bytes")
        return _STREAM_HDR.pack(STREAM, frame.stream_id, frame.offset, FIN if frame.fin else 0, len(frame.data)) + frame.data
    if isinstance(frame, AckFrame):
        if len(frame.ranges) > MAX_ACK_RANGES:
            raise PreconditionError(f"ACK frame carries more than {MAX_ACK_RANGES} ranges")
        if not frame.ranges:
            return _ACK.pack(ACK, frame.stream_id, frame.cum_offset)
        head = _ACK_RANGES.pack(ACK_RANGES, frame.stream_id, frame.cum_offset, len(frame.ranges))
        return head + b"".join(_RANGE.pack(a, b) for a, b in frame.ranges)
    if isinstance(frame, DatagramFrame):
        if len(frame.data) > 0xFFFF:
            raise PreconditionError("DATAGRAM frame data exceeds 65535 bytes")
        return _DGRAM_HDR.pack(DATAGRAM, len(frame.data)) + frame.data
    if isinstance(frame, PingFrame):
        return bytes([PING])
    raise TypeError(f"not an SMT frame: {frame!r}")


def decode_frame(data: bytes) -> SmtFrame:
    """Parse exactly one frame occupying the whole datagram."""
    if not data:
        raise MalformedError("empty datagram", 0)
    kind = data[0]
    if kind == STREAM:
        if len(data) < _STREAM_HDR.size:
            raise MalformedError("truncated STREAM header", len(data))
        _, sid, off, flags, n = _STREAM_HDR.unpack_from(data)
        if len(data) != _STREAM_HDR.size + n:
            raise MalformedError(f"STREAM length {n} does not match datagram", _STREAM_HDR.size)
        return StreamFrame(sid, off, bool(flags & FIN), bytes(data[_STREAM_HDR.size :]))
    if kind == ACK:
        if len(data) != _ACK.size:
            raise MalformedError("ACK frame must be 13 bytes", min(len(data), _ACK.size))
        _, sid, cum = _ACK.unpack(data)
        return AckFrame(sid, cum)
    if kind == ACK_RANGES:
        h = _ACK_RANGES.size
        if len(data) < h:
            raise MalformedError("truncated ACK_RANGES frame", len(data))
        _, sid, cum, n = _ACK_RANGES.unpack_from(data)
        if n == 0 or len(data) != h + n * _RANGE.size:
            raise MalformedError(f"ACK_RANGES count {n} does not match datagram", h)
        ranges = tuple(_RANGE.unpack_from(data, h + i * _RANGE.size) for i in range(n))
        if any(not cum < a < b for a, b in ranges):
            raise MalformedError("ACK range not above the cumulative offset", h)
        return AckFrame(sid, cum, ranges)
    if kind == DATAGRAM:
        if len(data) < _DGRAM_HDR.size:
            raise MalformedError("truncated DATAGRAM header", len(data))
        _, n = _DGRAM_HDR.unpack_from(data)
        if len(data) != _DGRAM_HDR.size + n:
            raise MalformedError(f"DATAGRAM length {n} does not match datagram", _DGRAM_HDR.size)
        return DatagramFrame(bytes(data[_DGRAM_HDR.size :]))
    if kind == PING:
        if len(data) != 1:
            raise MalformedError("PING frame carries no body", 1)
        return PingFrame()
    raise MalformedError(f"unknown frame type {kind}", 0)


# --- events ------------------------------------------------------------------


@dataclass(frozen=True)
class StreamData:
    stream_id: int
    data: bytes


@dataclass(frozen=True)
class StreamFin:
    stream_id: int


@dataclass(frozen=True)
class DatagramIn:
    data: bytes


@dataclass(frozen=True)
class AckProcessed:
    stream_id: int
    cum_offset: int


@dataclass(frozen=True)
class ConnectionError:
    reason: str


@dataclass(frozen=True)
class Retransmission:
    time_us: float
    stream_id: int
    offset: int
    length: int
    rto_us: float


# --- per-stream state --------------------------------------------------------


@dataclass
class _Sent:
    wire: bytes
    end: int  # cumulative offset once acked (FIN counts as one byte)
    sent_at: float
    departed: float  # deadline base: when this copy's write finished leaving
    retransmitted: bool = False


@dataclass
class _SendStream:
    next_offset: int = 0
    fin_sent: bool = False
    cum_acked: int = 0
    unacked: OrderedDict = field(default_factory=OrderedDict)
    last_departure: float = 0.0
    timer: object = None
    retx: dict = field(default_factory=dict)  # unacked frames sent more than once
    sack: tuple = ()  # latest selective ranges from the peer


@dataclass
class _RecvStream:
    delivered: int = 0
    buffer: dict = field(default_factory=dict)
    final_size: Optional[int] = None
    fin_emitted: bool = False
    ranges: list = field(default_factory=list)  # merged [start, end) held above delivered


class SmtConnection:
    """One endpoint of an SMT association.

    ``transmit(datagram)`` hands a datagram to the network and may return
    the time it finished leaving this host; the retransmission timer is
    measured from there.
    """

    def __init__(
        self,
        scheduler,
        transmit: Callable[[bytes], Optional[float]],
        mtu_payload: int = DEFAULT_MTU_PAYLOAD,
        initial_rtt_us: Optional[float] = None,
        min_rto_us: float = MIN_RTO_US,
    ):
        if mtu_payload < 1:
            raise PreconditionError("mtu_payload must be positive")
        self.scheduler = scheduler
        self._transmit = transmit
        self.mtu_payload = mtu_payload
        self.min_rto_us = min_rto_us
        self.srtt_us: Optional[float] = initial_rtt_us
        self._next_stream_id = 1
        self._send: dict[int, _SendStream] = {}
        self._recv: dict[int, _RecvStream] = {}
        self.retransmissions: list[Retransmission] = []
        self.frames_sent = 0
        self.closed = False

    # --- timing --------------------------------------------------------------

    @property
    def rto_us(self) -> float:
        if self.srtt_us is None:
            return self.min_rto_us
        return max(4 * self.srtt_us, self.min_rto_us)

    def _rtt_sample(self, sample: float) -> None:
        if self.srtt_us is None:
            self.srtt_us = sample
        else:
            self.srtt_us += RTT_ALPHA * (sample - self.srtt_us)

    def _put(self, wire: bytes) -> float:
        now = self.scheduler.now_us
        self.frames_sent += 1
        departed = self._transmit(wire)
        return now if departed is None else max(now, departed)

    # --- sending -------------------------------------------------------------

    def open_stream(self) -> int:
        sid = self._next_stream_id
        self._next_stream_id += 1
        self._send[sid] = _SendStream()
        return sid

    def stream_send(self, stream_id: int, data: bytes, fin: bool = False) -> None:
        st = self._send.get(stream_id)
        if st is None:
            raise ProtocolError(f"stream {stream_id} is not open")
        if st.fin_sent:
            raise ProtocolError(f"stream {stream_id} already finished")
        if not data and not fin:
            return
        now = self.scheduler.now_us
        step = self.mtu_payload
        pieces = [data[i : i + step] for i in range(0, len(data), step)] or [b""]
        batch = []
        for i, piece in enumerate(pieces):
            last = i == len(pieces) - 1
            frame = StreamFrame(stream_id, st.next_offset, fin and last, bytes(piece))
            wire = encode_frame(frame)
            st.next_offset += len(piece)
            end = st.next_offset + (1 if frame.fin else 0)
            sent = _Sent(wire, end, now, self._put(wire))
            st.unacked[frame.offset] = sent
            batch.append(sent)
        # the whole write shares one deadline, counted from when its last byte left
        for sent in batch:
            sent.departed = batch[-1].departed
        st.last_departure = batch[-1].departed
        st.fin_sent = fin
        if st.timer is None:
            self._arm(stream_id, st)

    def send_datagram(self, data: bytes) -> None:
        self._put(encode_frame(DatagramFrame(bytes(data))))

    def ping(self) -> None:
        self._put(encode_frame(PingFrame()))

    def _arm(self, sid: int, st: _SendStream, full: bool = False) -> None:
        """Point the stream timer at the earliest deadline among unrepaired frames.

        A frame's deadline is one RTO after its write finished leaving this
        host.
        The cheap form ignores selective ranges for never-retransmitted
        frames (they sit in departure order, so the first one is the
        earliest); a timer armed early just runs the full scan.
        """
        if st.timer is not None:
            st.timer.cancel()
            st.timer = None
        if full:
            pending = [x.departed for off, x in st.unacked.items() if not _covered(st.sack, off, x.end)]
        else:
            pending = [x.departed for off, x in st.retx.items() if not _covered(st.sack, off, x.end)]
            for x in st.unacked.values():
                if not x.retransmitted:
                    pending.append(x.departed)
                    break
        if pending:
            st.timer = self.scheduler.call_at(min(pending) + self.rto_us, self._on_timer, sid)

    def _on_timer(self, sid: int) -> None:
        st = self._send[sid]
        st.timer = None
        if self.closed or not st.unacked:
            return
        now = self.scheduler.now_us
        rto = self.rto_us
        for offset, sent in st.unacked.items():
            if sent.departed + rto > now or _covered(st.sack, offset, sent.end):
                continue
            sent.retransmitted = True
            st.retx[offset] = sent
            self.retransmissions.append(Retransmission(now, sid, offset, len(sent.wire) - STREAM_HEADER_SIZE, rto))
            sent.departed = self._put(sent.wire)
        self._arm(sid, st, full=True)

    def _on_ack(self, frame: AckFrame, now: float) -> list:
        st = self._send.get(frame.stream_id)
        if st is None:
            return []
        if frame.cum_offset < st.cum_acked:
            return []  # reordered, stale
        st.sack = frame.ranges
        if frame.cum_offset == st.cum_acked:
            return []
        st.cum_acked = frame.cum_offset
        oldest = None
        while st.unacked:
            offset, sent = next(iter(st.unacked.items()))
            if sent.end > frame.cum_offset:
                break
            st.unacked.popitem(last=False)
            st.retx.pop(offset, None)
            if oldest is None:
                oldest = sent
        # Karn: never sample from a retransmitted frame; sampling the oldest
        # newly acked frame also skips ACKs held back behind a filled hole.
        if oldest is not None and not oldest.retransmitted:
            self._rtt_sample(now - oldest.sent_at)
        self._arm(frame.stream_id, st)
        return [AckProcessed(frame.stream_id, frame.cum_offset)]

    # --- receiving -----------------------------------------------------------

    def on_datagram(self, datagram: bytes, now: Optional[float] = None) -> list:
        if now is None:
            now = self.scheduler.now_us
        try:
            frame = decode_frame(datagram)
        except MalformedError as e:
            return [ConnectionError(str(e))]
        if isinstance(frame, StreamFrame):
            return self._on_stream(frame)
        if isinstance(frame, AckFrame):
            return self._on_ack(frame, now)
        if isinstance(frame, DatagramFrame):
            return [DatagramIn(frame.data)]
        return []

    def _on_stream(self, frame: StreamFrame) -> list:
        rs = self._recv.setdefault(frame.stream_id, _RecvStream())
        end = frame.offset + len(frame.data)
        events = []
        if frame.fin:
            if rs.final_size is not None and rs.final_size != end:
                return [ConnectionError(f"stream {frame.stream_id}: conflicting final size")]
            rs.final_size = end
        if rs.final_size is not None and end > rs.final_size:
            return [ConnectionError(f"stream {frame.stream_id}: data beyond final size")]
        if end > rs.delivered and frame.data:
            start = max(frame.offset, rs.delivered)
            chunk = frame.data[start - frame.offset :]
            if len(rs.buffer.get(start, b"")) < len(chunk):
                rs.buffer[start] = chunk
                if start > rs.delivered:
                    _add_range(rs.ranges, start, end)
        out = []
        while True:
            chunk = rs.buffer.pop(rs.delivered, None)
            if chunk is None:
                chunk = self._overlapping(rs)
                if chunk is None:
                    break
            out.append(chunk)
            rs.delivered += len(chunk)
        if out:
            events.append(StreamData(frame.stream_id, b"".join(out)))
            while rs.ranges and rs.ranges[0][0] <= rs.delivered:
                rs.ranges.pop(0)
        if rs.final_size is not None and rs.delivered == rs.final_size and not rs.fin_emitted:
            rs.fin_emitted = True
            rs.buffer.clear()
            events.append(StreamFin(frame.stream_id))
        cum = rs.delivered + (1 if rs.fin_emitted else 0)
        self._put(encode_frame(AckFrame(frame.stream_id, cum, self._sack_ranges(rs))))
        return events

    @staticmethod
    def _sack_ranges(rs: _RecvStream) -> tuple:
        return tuple((a, b) for a, b in rs.ranges[:MAX_ACK_RANGES])

    @staticmethod
    def _overlapping(rs: _RecvStream) -> Optional[bytes]:
        for key in sorted(rs.buffer):
            if key > rs.delivered:
                return None
            data = rs.buffer.pop(key)
            if key + len(data) > rs.delivered:
                return data[rs.delivered - key :]
        return None

    # --- introspection -------------------------------------------------------

    def delivered_offset(self, stream_id: int) -> int:
        rs = self._recv.get(stream_id)
        return rs.delivered if rs else 0

    def acked_offset(self, stream_id: int) -> int:
        st = self._send.get(stream_id)
        return st.cum_acked if st else 0

    def unacked_frames(self, stream_id: int) -> int:
        st = self._send.get(stream_id)
        return len(st.unacked) if st else 0

    def close(self) -> None:
        self.closed = True
        for st in self._send.values():
            if st.timer is not None:
                st.timer.cancel()
                st.timer = None


def _add_range(ranges: list, start: int, end: int) -> None:
    i = bisect.bisect_left(ranges, [start, start])
    if i > 0 and ranges[i - 1][1] >= start:
        i -= 1
        start = ranges[i][0]
    j = i
    while j < len(ranges) and ranges[j][0] <= end:
        end = max(end, ranges[j][1])
        j += 1
    ranges[i:j] = [[start, end]]


def _covered(ranges: tuple, start: int, end: int) -> bool:
    i = bisect.bisect_right(ranges, (start, float("inf"))) - 1
    return i >= 0 and ranges[i][0] <= start and end <= ranges[i][1]


def open_stream(conn: SmtConnection) -> int:
    return conn.open_stream()


def stream_send(conn: SmtConnection, stream_id: int, data: bytes, fin: bool = False) -> None:
    conn.stream_send(stream_id, data, fin)


def conn_on_datagram(conn: SmtConnection, datagram: bytes, now: Optional[float] = None) -> list:
    return conn.on_datagram(datagram, now)


def send_datagram(conn: SmtConnection, data: bytes) -> None:
    conn.send_datagram(data)
