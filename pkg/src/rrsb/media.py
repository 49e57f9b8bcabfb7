"""Synthetic video source, mock encoder and the two ingestion modes.

Frames carry their capture time inside the access unit header so the
receiver can compute glass-to-glass latency without any pixel analysis.
Every payload byte after the header is regenerable from ``(seed, seq)``,
which lets a receiver verify integrity end to end.
"""

from __future__ import annotations

import hashlib
import io
import os
import queue
import struct
import threading
import time
import zlib
from dataclasses import dataclass
from fractions import Fraction
from typing import BinaryIO, Callable, Iterator, Optional

import numpy as np

from .errors import MalformedError, OrderingError, PreconditionError, TransportError

TIMESCALE = 90_000

AU_MAGIC = b"RRAU"
AU_VERSION = 1
_AU_HEAD = struct.Struct(">4sBIQI")  # magic, version, seq, capture_ts_us, payload_len
_AU_CRC = struct.Struct(">I")
AU_HEADER_SIZE = _AU_HEAD.size + _AU_CRC.size  # 25

# Pipe record: total length, then seq, pts, dts, keyframe, capture_ts.
_REC_LEN = struct.Struct(">I")
_REC_FIXED = struct.Struct(">IIIBQ")
RECORD_OVERHEAD = _REC_LEN.size + _REC_FIXED.size

_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class VideoConfig:
    width: int = 1920
    height: int = 1080
    fps: int = 60
    seed: int = 0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0 or self.fps <= 0:
            raise PreconditionError("width, height and fps must be positive")

    @property
    def frame_bytes(self) -> int:
        return self.width * self.height * 3 // 2


@dataclass(frozen=True)
class EncoderConfig:
    gop_length: int = 5
    bitrate_bps: int = 10_000_000
    fps: int = 60
    i_to_p_weight: float = 3

    def __post_init__(self):
        if self.gop_length < 1:
            raise PreconditionError("gop_length must be >= 1")
        if self.bitrate_bps <= 0 or self.fps <= 0 or self.i_to_p_weight <= 0:
            raise PreconditionError("bitrate, fps and weight must be positive")
        if self.p_frame_bytes < AU_HEADER_SIZE:
            raise PreconditionError(
                f"bitrate too low: frames would be smaller than the {AU_HEADER_SIZE}-byte header"
            )

    @property
    def gop_budget_bytes(self) -> int:
        return (self.bitrate_bps * self.gop_length) // (8 * self.fps)

    @property
    def _denominator(self) -> Fraction:
        return Fraction(self.i_to_p_weight) + (self.gop_length - 1)

    @property
    def keyframe_bytes(self) -> int:
        return int(Fraction(self.i_to_p_weight) * self.gop_budget_bytes // self._denominator)

    @property
    def p_frame_bytes(self) -> int:
        return int(self.gop_budget_bytes // self._denominator)

    def frame_bytes(self, seq: int) -> int:
        return self.keyframe_bytes if seq % self.gop_length == 0 else self.p_frame_bytes


@dataclass(frozen=True)
class RawFrame:
    seq: int
    capture_ts_us: int
    width: int
    height: int
    payload: bytes


@dataclass(frozen=True)
class AccessUnit:
    seq: int
    pts_90k: int
    dts_90k: int
    keyframe: bool
    capture_ts_us: int
    payload: bytes


@dataclass(frozen=True)
class VerifyResult:
    seq: int
    capture_ts_us: int
    verified: bool


def pts_for(seq: int, fps: int) -> int:
    """Presentation time in 90 kHz ticks, rounded half up."""
    return (2 * seq * TIMESCALE + fps) // (2 * fps)


def frame_pattern(seed: int, seq: int, length: int) -> bytes:
    """Pseudorandom raw picture content for frame ``seq``."""
    rng = np.random.Generator(np.random.PCG64([seed & _U64, seq]))
    return rng.bytes(length)


def padding_pattern(seed: int, seq: int, length: int) -> bytes:
    """Pseudorandom filler following the access unit header."""
    if length <= 0:
        return b""
    return hashlib.shake_128(struct.pack(">QQ", seed & _U64, seq)).digest(length)


def synthesize_frame(seq: int, cfg: VideoConfig, now_us: int) -> RawFrame:
    if seq < 0:
        raise PreconditionError("seq must be >= 0")
    payload = frame_pattern(cfg.seed, seq, cfg.frame_bytes)
    return RawFrame(seq, int(now_us), cfg.width, cfg.height, payload)


def au_header(seq: int, capture_ts_us: int, payload_len: int) -> bytes:
    head = _AU_HEAD.pack(AU_MAGIC, AU_VERSION, seq & 0xFFFFFFFF, capture_ts_us & _U64, payload_len)
    return head + _AU_CRC.pack(zlib.crc32(head))


def make_access_unit(seq: int, capture_ts_us: int, cfg: EncoderConfig, seed: int) -> AccessUnit:
    """Build the access unit the mock codec emits for frame ``seq``."""
    size = cfg.frame_bytes(seq)
    payload = au_header(seq, capture_ts_us, size) + padding_pattern(seed, seq, size - AU_HEADER_SIZE)
    pts = pts_for(seq, cfg.fps)
    return AccessUnit(seq, pts, pts, seq % cfg.gop_length == 0, capture_ts_us, payload)


class Encoder:
    """Mock encoder honouring GOP length, bitrate and frame rate.

    State is just the next expected sequence number; the first frame fixes it.
    """

    def __init__(self, cfg: EncoderConfig = EncoderConfig(), seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        self.next_seq: Optional[int] = None

    def _check(self, seq: int) -> None:
        if self.next_seq is not None and seq != self.next_seq:
            raise OrderingError(f"expected frame {self.next_seq}, got {seq}")
        self.next_seq = seq + 1

    def encode(self, frame: RawFrame) -> AccessUnit:
        self._check(frame.seq)
        return make_access_unit(frame.seq, frame.capture_ts_us, self.cfg, self.seed)

    def encode_meta(self, seq: int, capture_ts_us: int) -> AccessUnit:
        """Encode without materialising the raw picture.

        The mock codec output does not depend on pixel content, so simulated
        senders skip the multi-megabyte synthesis step.
        """
        self._check(seq)
        return make_access_unit(seq, capture_ts_us, self.cfg, self.seed)


def encode(frame: RawFrame, cfg: EncoderConfig, state: Encoder) -> AccessUnit:
    if state.cfg != cfg:
        raise PreconditionError("encoder state was created for a different config")
    return state.encode(frame)


def parse_au_header(data: bytes):
    """Return ``(seq, capture_ts_us, payload_len, crc_ok)`` from an AU payload."""
    if len(data) < AU_HEADER_SIZE:
        raise MalformedError(f"access unit truncated: {len(data)} bytes", 0)
    magic, version, seq, capture, payload_len = _AU_HEAD.unpack_from(data)
    if magic != AU_MAGIC:
        raise MalformedError(f"bad access unit magic {magic!r}", 0)
    if version != AU_VERSION:
        raise MalformedError(f"unsupported access unit version {version}", 4)
    (crc,) = _AU_CRC.unpack_from(data, _AU_HEAD.size)
    return seq, capture, payload_len, crc == zlib.crc32(data[: _AU_HEAD.size])


def decode_verify(au_bytes: bytes, seed: int) -> VerifyResult:
    seq, capture, payload_len, crc_ok = parse_au_header(au_bytes)
    if len(au_bytes) < payload_len:
        raise MalformedError(f"access unit truncated: {len(au_bytes)} of {payload_len} bytes", len(au_bytes))
    ok = (
        crc_ok
        and payload_len >= AU_HEADER_SIZE
        and len(au_bytes) == payload_len
        and au_bytes[AU_HEADER_SIZE:] == padding_pattern(seed, seq, payload_len - AU_HEADER_SIZE)
    )
    return VerifyResult(seq, capture, ok)


def serialize_au(au: AccessUnit) -> bytes:
    if not (0 <= au.pts_90k <= 0xFFFFFFFF and 0 <= au.dts_90k <= 0xFFFFFFFF):
        raise PreconditionError("timestamps exceed the 32-bit record fields")
    total = RECORD_OVERHEAD + len(au.payload)
    return (
        _REC_LEN.pack(total)
        + _REC_FIXED.pack(au.seq, au.pts_90k, au.dts_90k, int(au.keyframe), au.capture_ts_us)
        + au.payload
    )


def deserialize_au(record: bytes) -> AccessUnit:
    if len(record) < RECORD_OVERHEAD:
        raise MalformedError(f"record truncated: {len(record)} bytes", 0)
    (total,) = _REC_LEN.unpack_from(record)
    if total != len(record):
        raise MalformedError(f"record length field {total} != {len(record)} bytes", 0)
    seq, pts, dts, key, capture = _REC_FIXED.unpack_from(record, _REC_LEN.size)
    return AccessUnit(seq, pts, dts, bool(key), capture, bytes(record[RECORD_OVERHEAD:]))


def read_record(stream: BinaryIO) -> Optional[bytes]:
    """Read one record from a byte stream; None on clean EOF."""
    head = _read_exact(stream, _REC_LEN.size)
    if not head:
        return None
    if len(head) < _REC_LEN.size:
        raise MalformedError("record length truncated", 0)
    (total,) = _REC_LEN.unpack(head)
    if total < RECORD_OVERHEAD:
        raise MalformedError(f"record length field {total} too small", 0)
    body = _read_exact(stream, total - _REC_LEN.size)
    if len(body) != total - _REC_LEN.size:
        raise MalformedError("record body truncated", len(head) + len(body))
    return head + body


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    chunks = []
    while n:
        chunk = stream.read(n)
        if not chunk:
            break
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def iter_records(data: bytes) -> Iterator[AccessUnit]:
    """Decode a concatenation of records, as written by :class:`FileSink`."""
    stream = io.BytesIO(data)
    while (rec := read_record(stream)) is not None:
        yield deserialize_au(rec)


# --- sources and sinks -------------------------------------------------------


class FrameSource:
    """Renderer analog: synthesizes raw frames and mock-encodes them.

    Calling the source returns the next access unit. Capture timestamps come
    from ``clock_us`` (wall clock by default).
    """

    def __init__(
        self,
        video: VideoConfig = VideoConfig(),
        encoder: EncoderConfig = EncoderConfig(),
        clock_us: Callable[[], int] = lambda: time.time_ns() // 1000,
    ):
        self.video = video
        self.encoder = Encoder(encoder, video.seed)
        self.clock_us = clock_us
        self.seq = 0

    def render(self) -> RawFrame:
        frame = synthesize_frame(self.seq, self.video, self.clock_us())
        self.seq += 1
        return frame

    def __call__(self) -> AccessUnit:
        return self.encoder.encode(self.render())


class NullSink:
    """Counts access units and discards them."""

    def __init__(self):
        self.count = 0
        self.bytes = 0

    def write(self, au: AccessUnit) -> None:
        self.count += 1
        self.bytes += len(au.payload)

    def close(self) -> None:
        pass


class FileSink(NullSink):
    """Writes each access unit as a pipe record, concatenated, to ``path``."""

    def __init__(self, path):
        super().__init__()
        self._fh = open(path, "wb")

    def write(self, au: AccessUnit) -> None:
        self._fh.write(serialize_au(au))
        super().write(au)

    def close(self) -> None:
        self._fh.close()


class CollectingSink(NullSink):
    def __init__(self):
        super().__init__()
        self.items: list[AccessUnit] = []

    def write(self, au: AccessUnit) -> None:
        self.items.append(au)
        super().write(au)


_STOP = object()
_RAW_HEAD = struct.Struct(">IIQII")  # total length, seq, capture_ts_us, width, height


def _split(source):
    """``(render, encoder)`` for a :class:`FrameSource`, else ``(None, None)``."""
    render = getattr(source, "render", None)
    return (render, source.encoder) if render is not None else (None, None)


def ingest_inproc(source: Callable[[], AccessUnit], sink, n_frames: int, queue_depth: int = 8) -> float:
    """Move ``n_frames`` from source to sink through a bounded in-memory queue.

    With a :class:`FrameSource` the queue carries raw frames by reference
    from the renderer thread to the encoder, which feeds the sink. Any other
    callable is treated as an AU producer. Returns frames per second; a full
    queue blocks the producer.
    """
    render, encoder = _split(source)
    q: queue.Queue = queue.Queue(maxsize=queue_depth)
    failure: list[BaseException] = []

    def produce():
        try:
            for _ in range(n_frames):
                q.put(render() if render is not None else source())
        except BaseException as exc:  # surfaced on the consumer side
            failure.append(exc)
        finally:
            q.put(_STOP)

    start = time.perf_counter()
    producer = threading.Thread(target=produce, name="ingest-producer", daemon=True)
    producer.start()
    done = 0
    while (item := q.get()) is not _STOP:
        sink.write(encoder.encode(item) if encoder is not None else item)
        done += 1
    elapsed = time.perf_counter() - start
    producer.join()
    if done < n_frames:
        raise TransportError(f"in-process queue closed early ({failure[0] if failure else 'no cause'})", done)
    return n_frames / elapsed


def write_raw(out: BinaryIO, frame: RawFrame) -> None:
    out.write(_RAW_HEAD.pack(_RAW_HEAD.size + len(frame.payload), frame.seq, frame.capture_ts_us, frame.width, frame.height))
    out.write(frame.payload)


def read_raw(inp: BinaryIO) -> Optional[RawFrame]:
    head = _read_exact(inp, _RAW_HEAD.size)
    if not head:
        return None
    if len(head) < _RAW_HEAD.size:
        raise MalformedError("raw frame header truncated", len(head))
    total, seq, capture, w, h = _RAW_HEAD.unpack(head)
    payload = bytearray(total - _RAW_HEAD.size)
    view = memoryview(payload)
    got = 0
    while got < len(payload):
        n = inp.readinto(view[got:])
        if not n:
            raise MalformedError("raw frame payload truncated", _RAW_HEAD.size + got)
        got += n
    return RawFrame(seq, capture, w, h, payload)


def ingest_pipe(source: Callable[[], AccessUnit], sink, n_frames: int) -> float:
    """Move ``n_frames`` across real OS pipes.

    With a :class:`FrameSource` there are two pipes: raw frames go from the
    renderer thread to an encoder thread, and encoded AUs go from there to
    the consumer as :func:`serialize_au` records. Any other callable is
    treated as an AU producer feeding the record pipe directly.
    """
    render, encoder = _split(source)
    failure: list[BaseException] = []
    au_r, au_w = os.pipe()
    threads = []

    def run(fn, *args):
        def body():
            try:
                fn(*args)
            except BaseException as exc:
                failure.append(exc)

        t = threading.Thread(target=body, name=fn.__name__, daemon=True)
        threads.append(t)
        return t

    if render is None:

        def produce_aus(wfd):
            with os.fdopen(wfd, "wb", buffering=0) as out:
                for _ in range(n_frames):
                    out.write(serialize_au(source()))

        run(produce_aus, au_w)
    else:
        raw_r, raw_w = os.pipe()

        def render_frames(wfd):
            with os.fdopen(wfd, "wb", buffering=0) as out:
                for _ in range(n_frames):
                    write_raw(out, render())

        def encode_frames(rfd, wfd):
            with os.fdopen(rfd, "rb", buffering=0) as inp, os.fdopen(wfd, "wb", buffering=0) as out:
                while (frame := read_raw(inp)) is not None:
                    out.write(serialize_au(encoder.encode(frame)))

        run(render_frames, raw_w)
        run(encode_frames, raw_r, au_w)

    start = time.perf_counter()
    for t in threads:
        t.start()
    done = 0
    with os.fdopen(au_r, "rb") as inp:
        while done < n_frames:
            try:
                rec = read_record(inp)
            except MalformedError:
                rec = None
            if rec is None:
                break
            sink.write(deserialize_au(rec))
            done += 1
    elapsed = time.perf_counter() - start
    for t in threads:
        t.join()
    if done < n_frames:
        cause = failure[0] if failure else "writer closed"
        raise TransportError(f"pipe closed early ({cause})", done)
    return n_frames / elapsed
