"""moq-lite: track/group/object delivery with one transport stream per group."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional, Union

from .errors import MalformedError, PreconditionError
from .isobmff import build_fragment, parse_fragment
from .media import AccessUnit, parse_au_header
from .smt import StreamData, StreamFin

ANNOUNCE, SUBSCRIBE = 1, 2
CONTROL_STREAM = 1

_OBJ = struct.Struct(">IQII")
OBJECT_HEADER_SIZE = _OBJ.size  # 20


@dataclass(frozen=True)
class Announce:
    track_id: int
    name: str


@dataclass(frozen=True)
class Subscribe:
    track_id: int


ControlMessage = Union[Announce, Subscribe]


def encode_control(msg: ControlMessage) -> bytes:
    if isinstance(msg, Announce):
        name = msg.name.encode()
        if len(name) > 255:
            raise PreconditionError("track name longer than 255 bytes")
        return struct.pack(">BIB", ANNOUNCE, msg.track_id, len(name)) + name
    if isinstance(msg, Subscribe):
        return struct.pack(">BI", SUBSCRIBE, msg.track_id)
    raise TypeError(f"not a control message: {msg!r}")


def decode_control(buf: bytes) -> tuple[Optional[ControlMessage], int]:
    """Parse one message from the front of ``buf``; ``(None, 0)`` if incomplete."""
    if not buf:
        return None, 0
    kind = buf[0]
    if kind == ANNOUNCE:
        if len(buf) < 6:
            return None, 0
        _, tid, n = struct.unpack_from(">BIB", buf)
        if len(buf) < 6 + n:
            return None, 0
        try:
            name = bytes(buf[6 : 6 + n]).decode()
        except UnicodeDecodeError:
            raise MalformedError("track name is not UTF-8", 6) from None
        return Announce(tid, name), 6 + n
    if kind == SUBSCRIBE:
        if len(buf) < 5:
            return None, 0
        return Subscribe(struct.unpack_from(">I", buf, 1)[0]), 5
    raise MalformedError(f"unknown control message type {kind}", 0)


@dataclass(frozen=True)
class ObjectHeader:
    track_id: int
    group_id: int
    object_id: int
    payload_len: int

    def to_bytes(self) -> bytes:
        return _OBJ.pack(self.track_id, self.group_id, self.object_id, self.payload_len)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ObjectHeader":
        if len(data) < _OBJ.size:
            raise MalformedError("truncated object header", len(data))
        return cls(*_OBJ.unpack_from(data))


# --- publisher ---------------------------------------------------------------


@dataclass(frozen=True)
class OpenStream:
    stream_id: int


@dataclass(frozen=True)
class StreamWrite:
    stream_id: int
    data: bytes
    fin: bool


class MoqPublisher:
    """Maps each GOP to a group on a fresh stream.

    An object is one fMP4 fragment of ``frames_per_object`` AUs (default 1),
    so a group holds ``gop_length / frames_per_object`` objects.
    """

    def __init__(
        self,
        conn,
        track_id: int = 1,
        name: str = "video",
        gop_length: int = 5,
        fps: int = 60,
        frames_per_object: int = 1,
    ):
        if gop_length < 1 or frames_per_object < 1 or gop_length % frames_per_object:
            raise PreconditionError("frames_per_object must divide gop_length")
        self.conn = conn
        self.track_id = track_id
        self.name = name
        self.gop_length = gop_length
        self.fps = fps
        self.frames_per_object = frames_per_object
        self.subscribed = False
        self._control = None
        self._stream = None
        self._next_seq: Optional[int] = None
        self._pending: list = []
        self._ctl_buf = b""
        self.groups_opened = 0

    @property
    def objects_per_group(self) -> int:
        return self.gop_length // self.frames_per_object

    def announce(self) -> None:
        self._control = self.conn.open_stream()
        self.conn.stream_send(self._control, encode_control(Announce(self.track_id, self.name)))

    def on_event(self, event) -> None:
        if isinstance(event, StreamData) and event.stream_id == CONTROL_STREAM:
            self._ctl_buf += event.data
            while True:
                msg, used = decode_control(self._ctl_buf)
                if msg is None:
                    break
                self._ctl_buf = self._ctl_buf[used:]
                if isinstance(msg, Subscribe) and msg.track_id == self.track_id:
                    self.subscribed = True

    def plan(self, au: AccessUnit) -> list:
        """Transport actions ``au`` would cause, without performing them."""
        if self._next_seq is not None and au.seq != self._next_seq:
            raise PreconditionError(f"expected AU {self._next_seq}, got {au.seq}")
        batch = self._pending + [au]
        if len(batch) < self.frames_per_object:
            return []
        group, pos = divmod(batch[0].seq, self.gop_length)
        obj = pos // self.frames_per_object
        actions = []
        if obj == 0 or self._stream is None:
            actions.append(OpenStream(-1))  # id assigned when performed
        payload = build_fragment(batch, batch[0].seq + 1, self.track_id, self.fps).data
        header = ObjectHeader(self.track_id, group, obj, len(payload)).to_bytes()
        actions.append(StreamWrite(self._stream or -1, header + payload, obj == self.objects_per_group - 1))
        return actions

    def on_au(self, au: AccessUnit) -> list:
        actions = self.plan(au)
        self._next_seq = au.seq + 1
        if not actions:
            self._pending.append(au)
            return []
        self._pending = []
        done = []
        for act in actions:
            if isinstance(act, OpenStream):
                self._stream = self.conn.open_stream()
                self.groups_opened += 1
                done.append(OpenStream(self._stream))
            else:
                self.conn.stream_send(self._stream, act.data, act.fin)
                done.append(StreamWrite(self._stream, act.data, act.fin))
                if act.fin:
                    self._stream = None
        return done


def publisher_on_au(pub: MoqPublisher, au: AccessUnit) -> list:
    return pub.on_au(au)


# --- subscriber --------------------------------------------------------------


@dataclass
class _Group:
    objects: dict = field(default_factory=dict)  # object_id -> list of AccessUnit
    object_count: Optional[int] = None  # known once the stream finishes


@dataclass(frozen=True)
class StreamError:
    stream_id: int
    reason: str


class MoqSubscriber:
    """Reassembles objects and releases AUs in play order.

    If playback is stuck inside group G while the keyframe of some later
    group is already complete, G and any groups in between are abandoned and
    their remaining frames counted as skipped.
    """

    def __init__(self, conn=None, track_id: int = 1, gop_length: int = 5, frames_per_object: int = 1):
        if gop_length < 1 or frames_per_object < 1 or gop_length % frames_per_object:
            raise PreconditionError("frames_per_object must divide gop_length")
        self.conn = conn
        self.track_id = track_id
        self.gop_length = gop_length
        self.frames_per_object = frames_per_object
        self.objects_per_group = gop_length // frames_per_object
        self.announced: Optional[Announce] = None
        self._ctl_buf = b""
        self._buffers: dict[int, bytes] = {}
        self._stream_group: dict[int, int] = {}
        self._groups: dict[int, _Group] = {}
        self._broken: set = set()
        self.next_group = 0
        self.next_object = 0
        self.skipped = 0
        self.skipped_seqs: list = []
        self.errors: list[StreamError] = []

    def subscribe(self) -> None:
        sid = self.conn.open_stream()
        self.conn.stream_send(sid, encode_control(Subscribe(self.track_id)))

    def on_event(self, event) -> list[AccessUnit]:
        if isinstance(event, StreamData):
            if event.stream_id == CONTROL_STREAM:
                self._on_control(event.data)
                return []
            self._on_stream_data(event.stream_id, event.data)
        elif isinstance(event, StreamFin) and event.stream_id != CONTROL_STREAM:
            self._on_fin(event.stream_id)
        return self._release()

    def _on_control(self, data: bytes) -> None:
        self._ctl_buf += data
        while True:
            msg, used = decode_control(self._ctl_buf)
            if msg is None:
                return
            self._ctl_buf = self._ctl_buf[used:]
            if isinstance(msg, Announce) and msg.track_id == self.track_id:
                self.announced = msg

    def _on_stream_data(self, sid: int, data: bytes) -> None:
        if sid in self._broken:
            return
        buf = self._buffers.get(sid, b"") + data
        while len(buf) >= OBJECT_HEADER_SIZE:
            hdr = ObjectHeader.from_bytes(buf)
            if hdr.track_id != self.track_id or hdr.object_id >= self.objects_per_group:
                self._fail(sid, f"bad object header {hdr}")
                return
            if len(buf) < OBJECT_HEADER_SIZE + hdr.payload_len:
                break
            body = buf[OBJECT_HEADER_SIZE : OBJECT_HEADER_SIZE + hdr.payload_len]
            buf = buf[OBJECT_HEADER_SIZE + hdr.payload_len :]
            try:
                aus = self._object_to_aus(hdr, body)
            except MalformedError as e:
                self._fail(sid, str(e))
                return
            self._stream_group[sid] = hdr.group_id
            if hdr.group_id >= self.next_group:
                self._groups.setdefault(hdr.group_id, _Group()).objects[hdr.object_id] = aus
        self._buffers[sid] = buf

    def _fail(self, sid: int, reason: str) -> None:
        self._broken.add(sid)
        self._buffers.pop(sid, None)
        self.errors.append(StreamError(sid, reason))

    def _object_to_aus(self, hdr: ObjectHeader, body: bytes) -> list[AccessUnit]:
        frag = parse_fragment(body)
        first = hdr.group_id * self.gop_length + hdr.object_id * self.frames_per_object
        out = []
        pts = frag.base_dts_90k
        for i, (payload, key, dur) in enumerate(zip(frag.payloads, frag.keyframes, frag.durations)):
            seq, capture, _, _ = parse_au_header(payload)
            if seq != first + i:
                raise MalformedError("object position does not match AU sequence", 0)
            out.append(AccessUnit(seq, pts, pts, key, capture, payload))
            pts += dur
        if not out:
            raise MalformedError("object carries no samples", 0)
        return out

    def _on_fin(self, sid: int) -> None:
        gid = self._stream_group.get(sid)
        if gid is not None and gid >= self.next_group:
            self._groups.setdefault(gid, _Group()).object_count = len(self._groups[gid].objects)
        self._buffers.pop(sid, None)

    def _group_size(self, gid: int) -> int:
        g = self._groups.get(gid)
        if g is not None and g.object_count is not None:
            return g.object_count
        return self.objects_per_group

    def _release(self) -> list[AccessUnit]:
        out = []
        while True:
            g = self._groups.get(self.next_group)
            if g is not None and self.next_object in g.objects:
                out.extend(g.objects.pop(self.next_object))
                self.next_object += 1
                if self.next_object >= self._group_size(self.next_group):
                    self._advance(self.next_group + 1)
                continue
            target = self._skip_target()
            if target is None:
                return out
            self._abandon_until(target)

    def _skip_target(self) -> Optional[int]:
        later = [gid for gid, g in self._groups.items() if gid > self.next_group and 0 in g.objects]
        return min(later) if later else None

    def _abandon_until(self, target: int) -> None:
        first = self.next_group * self.gop_length + self.next_object * self.frames_per_object
        last = target * self.gop_length
        self.skipped += last - first
        self.skipped_seqs.extend(range(first, last))
        self._advance(target)

    def _advance(self, gid: int) -> None:
        for old in [k for k in self._groups if k < gid]:
            del self._groups[old]
        self.next_group = gid
        self.next_object = 0


def subscriber_on_event(sub: MoqSubscriber, event) -> list[AccessUnit]:
    return sub.on_event(event)
