"""Independent reference computations used to derive expected test values.

Nothing here imports the package; each function re-derives a quantity from
first principles so tests can compare the implementation against it.
"""

from __future__ import annotations

import math
import struct
from fractions import Fraction


def gop_budget(bitrate_bps: int, gop: int, fps: int) -> int:
    return (bitrate_bps * gop) // (8 * fps)


def frame_sizes(bitrate_bps: int, gop: int, fps: int, w_i: int = 3) -> tuple[int, int]:
    b = gop_budget(bitrate_bps, gop, fps)
    d = w_i + gop - 1
    return (w_i * b) // d, b // d


def pts_90k(seq: int, fps: int) -> int:
    exact = Fraction(seq * 90_000, fps)
    return math.floor(exact + Fraction(1, 2))


def ntp(t1, t2, t3, t4):
    """(offset, rtt) from the four timestamps."""
    return ((t2 - t1) + (t3 - t4)) / 2, (t4 - t1) - (t3 - t2)


def walk_boxes(data: bytes, start: int = 0, end: int | None = None) -> list[tuple[bytes, int, int]]:
    """(type, offset, size) of each box in ``data[start:end]``; 32-bit sizes only."""
    end = len(data) if end is None else end
    out = []
    pos = start
    while pos < end:
        size, kind = struct.unpack_from(">I4s", data, pos)
        out.append((kind, pos, size))
        pos += size
    return out


def mdat_payload(data: bytes) -> bytes:
    for kind, off, size in walk_boxes(data):
        if kind == b"mdat":
            return data[off + 8 : off + size]
    raise ValueError("no mdat")


def iso_duration_seconds(text: str) -> float:
    """Only the PTxHyMzS subset."""
    assert text.startswith("PT")
    body = text[2:]
    total = 0.0
    num = ""
    for ch in body:
        if ch.isdigit() or ch == ".":
            num += ch
        else:
            total += float(num) * {"H": 3600, "M": 60, "S": 1}[ch]
            num = ""
    return total


def rtp_packet_count(payload_len: int, mtu_payload: int) -> int:
    return max(1, -(-payload_len // mtu_payload))


def dash_startup_latency_s(segment_s: float, buffer_target_s: float) -> float:
    """Frame 0 latency for a whole-segment player on a zero-delay link.

    Segment n completes at n*seg. Playout starts when the segments after the
    one holding frame 0 cover the buffer target, i.e. once segment
    1 + target/seg has completed.
    """
    return (1 + math.ceil(buffer_target_s / segment_s)) * segment_s


def lldash_startup_latency_s(fragment_s: float, buffer_target_s: float) -> float:
    """Same rule with fragments as the unit of delivery."""
    return (1 + math.ceil(buffer_target_s / fragment_s)) * fragment_s
