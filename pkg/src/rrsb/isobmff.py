"""Minimal fragmented-MP4 writer and reader for a single video track."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Sequence

from .errors import MalformedError, NoSamplesError, PreconditionError
from .media import AccessUnit, pts_for

TIMESCALE = 90_000
KEY_SAMPLE_FLAGS = 0x02000000  # depends_on=2 (I-frame)
DELTA_SAMPLE_FLAGS = 0x01010000  # depends_on=1, non-sync

_TFHD_DEFAULT_BASE_IS_MOOF = 0x020000
_TRUN_FLAGS = 0x000001 | 0x000100 | 0x000200 | 0x000400  # offset, duration, size, flags

_IGNORED_TOP_LEVEL = {b"ftyp", b"moov", b"styp", b"sidx", b"free"}
_KNOWN_TOP_LEVEL = _IGNORED_TOP_LEVEL | {b"moof", b"mdat"}


@dataclass(frozen=True)
class TrackConfig:
    track_id: int = 1
    timescale: int = TIMESCALE
    width: int = 1920
    height: int = 1080
    fps: int = 60

    def __post_init__(self):
        if self.timescale != TIMESCALE:
            raise PreconditionError("timescale is fixed at 90000")
        if self.track_id < 1 or self.width <= 0 or self.height <= 0 or self.fps <= 0:
            raise PreconditionError("invalid track config")


@dataclass(frozen=True)
class MediaFragment:
    sequence_number: int
    base_dts_90k: int
    data: bytes


@dataclass(frozen=True)
class ParsedFragment:
    payloads: list
    base_dts_90k: int
    sizes: list
    keyframes: list
    durations: list
    sequence_number: int


# --- box helpers -------------------------------------------------------------


def box(fourcc: bytes, *parts: bytes) -> bytes:
    body = b"".join(parts)
    return struct.pack(">I4s", 8 + len(body), fourcc) + body


def full_box(fourcc: bytes, version: int, flags: int, *parts: bytes) -> bytes:
    return box(fourcc, struct.pack(">I", (version << 24) | flags), *parts)


_UNITY = struct.pack(">9I", 0x10000, 0, 0, 0, 0x10000, 0, 0, 0, 0x40000000)


def build_init_segment(cfg: TrackConfig = TrackConfig()) -> bytes:
    ftyp = box(b"ftyp", b"iso6", struct.pack(">I", 0), b"iso6", b"cmfc", b"dash")
    mvhd = full_box(
        b"mvhd", 0, 0,
        struct.pack(">IIII", 0, 0, cfg.timescale, 0),
        struct.pack(">IH", 0x00010000, 0x0100), b"\0" * 10, _UNITY, b"\0" * 24,
        struct.pack(">I", cfg.track_id + 1),
    )
    tkhd = full_box(
        b"tkhd", 0, 0x3,
        struct.pack(">IIIII", 0, 0, cfg.track_id, 0, 0),
        b"\0" * 8, struct.pack(">HHHH", 0, 0, 0, 0), _UNITY,
        struct.pack(">II", cfg.width << 16, cfg.height << 16),
    )
    mdhd = full_box(b"mdhd", 0, 0, struct.pack(">IIIIHH", 0, 0, cfg.timescale, 0, 0x55C4, 0))
    hdlr = full_box(b"hdlr", 0, 0, struct.pack(">I4s", 0, b"vide"), b"\0" * 12, b"video\0")
    vmhd = full_box(b"vmhd", 0, 1, b"\0" * 8)
    dref = full_box(b"dref", 0, 0, struct.pack(">I", 1), full_box(b"url ", 0, 1))
    dinf = box(b"dinf", dref)
    empty = struct.pack(">I", 0)
    stbl = box(
        b"stbl",
        full_box(b"stsd", 0, 0, empty),
        full_box(b"stts", 0, 0, empty),
        full_box(b"stsc", 0, 0, empty),
        full_box(b"stsz", 0, 0, empty, empty),
        full_box(b"stco", 0, 0, empty),
    )
    minf = box(b"minf", vmhd, dinf, stbl)
    mdia = box(b"mdia", mdhd, hdlr, minf)
    trak = box(b"trak", tkhd, mdia)
    trex = full_box(b"trex", 0, 0, struct.pack(">IIIII", cfg.track_id, 1, 0, 0, 0))
    mvex = box(b"mvex", trex)
    return ftyp + box(b"moov", mvhd, trak, mvex)


def _durations(aus: Sequence[AccessUnit], fps: int) -> list:
    # each sample lasts until the next one; the last until its successor would start
    nxt = [au.pts_90k for au in aus[1:]] + [pts_for(aus[-1].seq + 1, fps)]
    return [n - au.pts_90k for n, au in zip(nxt, aus)]


def build_moof_mdat(aus: Sequence[AccessUnit], sequence_number: int, track_id: int = 1, fps: int = 60) -> bytes:
    if not aus:
        raise PreconditionError("a fragment needs at least one access unit")
    for a, b in zip(aus, aus[1:]):
        if b.seq != a.seq + 1 or b.pts_90k <= a.pts_90k:
            raise PreconditionError("access units must be contiguous with increasing pts")
    durations = _durations(aus, fps)
    samples = b"".join(
        struct.pack(">III", d, len(au.payload), KEY_SAMPLE_FLAGS if au.keyframe else DELTA_SAMPLE_FLAGS)
        for d, au in zip(durations, aus)
    )

    def moof_with(offset: int) -> bytes:
        trun = full_box(b"trun", 0, _TRUN_FLAGS, struct.pack(">Ii", len(aus), offset), samples)
        traf = box(
            b"traf",
            full_box(b"tfhd", 0, _TFHD_DEFAULT_BASE_IS_MOOF, struct.pack(">I", track_id)),
            full_box(b"tfdt", 1, 0, struct.pack(">Q", aus[0].dts_90k)),
            trun,
        )
        return box(b"moof", full_box(b"mfhd", 0, 0, struct.pack(">I", sequence_number)), traf)

    moof = moof_with(0)
    moof = moof_with(len(moof) + 8)
    return moof + box(b"mdat", *(au.payload for au in aus))


def build_fragment(aus: Sequence[AccessUnit], sequence_number: int, track_id: int = 1, fps: int = 60, styp: bool = True) -> MediaFragment:
    body = build_moof_mdat(aus, sequence_number, track_id, fps)
    head = box(b"styp", b"msdh", struct.pack(">I", 0), b"msdh", b"msix") if styp else b""
    return MediaFragment(sequence_number, aus[0].dts_90k, head + body)


# --- parsing -----------------------------------------------------------------


def _walk(data: bytes, start: int, end: int) -> list:
    out = []
    pos = start
    while pos < end:
        if end - pos < 8:
            raise MalformedError("truncated box header", pos)
        size, fourcc = struct.unpack_from(">I4s", data, pos)
        hdr = 8
        if size == 1:
            if end - pos < 16:
                raise MalformedError("truncated largesize box header", pos)
            size = struct.unpack_from(">Q", data, pos + 8)[0]
            hdr = 16
        elif size == 0:
            size = end - pos
        if size < hdr or pos + size > end:
            raise MalformedError(f"box {fourcc!r} of size {size} overruns its container", pos)
        out.append((fourcc.decode("latin-1"), pos, size, hdr))
        pos += size
    return out


def parse_boxes(data: bytes) -> list:
    """Top-level boxes as ``(fourcc, offset, size)``; sizes must tile the input."""
    return [(f, o, s) for f, o, s, _ in _walk(data, 0, len(data))]


def _children(data, offset, size, hdr, full=False):
    skip = 4 if full else 0
    return _walk(data, offset + hdr + skip, offset + size)


def _need(data, pos, n, what):
    if pos + n > len(data):
        raise MalformedError(f"truncated {what}", pos)


def parse_fragment(data: bytes) -> ParsedFragment:
    """Extract samples from one or more ``moof``+``mdat`` pairs."""
    payloads, sizes, keys, durations = [], [], [], []
    base: Optional[int] = None
    seqno = 0
    pending = None  # (moof offset, trun entries, data offset)
    for fourcc, off, size, hdr in _walk(data, 0, len(data)):
        name = fourcc.encode("latin-1")
        if name in _IGNORED_TOP_LEVEL:
            continue
        if name not in _KNOWN_TOP_LEVEL:
            raise MalformedError(f"unexpected box {fourcc!r}", off)
        if name == b"moof":
            seq_i, tfdt, entries, data_off = _parse_moof(data, off, size, hdr)
            if base is None:
                base, seqno = tfdt, seq_i
            pending = (off, entries, data_off)
            continue
        if pending is None:
            raise MalformedError("mdat without preceding moof", off)
        moof_off, entries, data_off = pending
        pos = moof_off + data_off
        for dur, sz, flags in entries:
            if pos < off + hdr or pos + sz > off + size:
                raise MalformedError("sample extends outside mdat", pos)
            payloads.append(bytes(data[pos : pos + sz]))
            sizes.append(sz)
            keys.append(flags == KEY_SAMPLE_FLAGS or not (flags & 0x00010000))
            durations.append(dur)
            pos += sz
        pending = None
    if base is None:
        raise NoSamplesError("no moof box present", 0)
    if pending is not None:
        raise MalformedError("moof without mdat", pending[0])
    return ParsedFragment(payloads, base, sizes, keys, durations, seqno)


def _parse_moof(data, off, size, hdr):
    seq_i = tfdt = None
    entries, data_off = [], None
    for f, o, s, h in _children(data, off, size, hdr):
        if f == "mfhd":
            _need(data, o + h, 8, "mfhd")
            seq_i = struct.unpack_from(">I", data, o + h + 4)[0]
        elif f == "traf":
            for f2, o2, s2, h2 in _children(data, o, s, h):
                body = o2 + h2
                if f2 == "tfdt":
                    _need(data, body, 4, "tfdt")
                    version = data[body]
                    if version == 1:
                        _need(data, body, 12, "tfdt")
                        tfdt = struct.unpack_from(">Q", data, body + 4)[0]
                    else:
                        _need(data, body, 8, "tfdt")
                        tfdt = struct.unpack_from(">I", data, body + 4)[0]
                elif f2 == "trun":
                    entries, data_off = _parse_trun(data, body, o2 + s2)
    if seq_i is None or tfdt is None or data_off is None:
        raise MalformedError("moof is missing mfhd, tfdt or trun", off)
    return seq_i, tfdt, entries, data_off


def _parse_trun(data, body, end):
    _need(data, body, 8, "trun")
    vf, count = struct.unpack_from(">II", data, body)
    flags = vf & 0xFFFFFF
    pos = body + 8
    data_off = 0
    if flags & 0x1:
        _need(data, pos, 4, "trun")
        data_off = struct.unpack_from(">i", data, pos)[0]
        pos += 4
    if flags & 0x4:
        pos += 4
    fields = [bit for bit in (0x100, 0x200, 0x400, 0x800) if flags & bit]
    if pos + count * 4 * len(fields) > end:
        raise MalformedError("trun sample table overruns box", pos)
    entries = []
    for _ in range(count):
        vals = {}
        for bit in fields:
            vals[bit] = struct.unpack_from(">I", data, pos)[0]
            pos += 4
        entries.append((vals.get(0x100, 0), vals.get(0x200, 0), vals.get(0x400, KEY_SAMPLE_FLAGS)))
    return entries, data_off
