"""Live DASH / LL-DASH player model.

The player fetches the manifest once, then the init segment, then media
segments one at a time starting at the live edge. Media arrives in units:
whole segments for DASH, fragments (HTTP chunks) for LL-DASH. Playout starts
once the media buffered *after* the unit holding the next frame covers
``buffer_target_s``; from then on frames are shown at 1x. If a frame's unit
is missing when the frame is due, playout pauses and resumes under the same
rule.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import MalformedError, PreconditionError
from .http import BodyData, ResponseEnd, ResponseHead
from .isobmff import parse_fragment
from .media import decode_verify
from .mpd import MpdDocument, parse_mpd
from .rtp import JitterBufferConfig


@dataclass(frozen=True)
class PlayerModelConfig:
    buffer_target_s: float = 4.0
    poll_interval_ms: float = 100
    jitter: JitterBufferConfig = JitterBufferConfig()

    def __post_init__(self):
        if self.buffer_target_s <= 0:
            raise PreconditionError("buffer_target_s must be positive")
        if self.poll_interval_ms <= 0:
            raise PreconditionError("poll_interval_ms must be positive")

    @classmethod
    def default_for(cls, low_latency: bool) -> "PlayerModelConfig":
        return cls(buffer_target_s=1.5 if low_latency else 4.0)


@dataclass(frozen=True)
class Fetch:
    path: str


@dataclass(frozen=True)
class Display:
    seq: int
    capture_ts_us: int
    display_local_us: float
    after_rebuffer: bool


@dataclass(frozen=True)
class Rebuffer:
    time_local_us: float
    seq: int


@dataclass
class _Unit:
    first: int
    frames: list  # (seq, capture_ts_us) in order
    duration_us: float


@dataclass
class DashPlayer:
    cfg: PlayerModelConfig
    fps: int
    seed: int
    to_local: Callable[[float], float]  # sender-clock time -> receiver-clock time
    to_sender: Callable[[float], float]
    mpd: Optional[MpdDocument] = None
    init_received: bool = False
    next_segment: Optional[int] = None
    outstanding: Optional[str] = None
    retry_at: Optional[float] = None
    playing: bool = False
    started_once: bool = False
    next_frame: Optional[int] = None
    anchor: Optional[tuple] = None  # (local time, frame seq)
    rebuffers: list = field(default_factory=list)
    displayed: list = field(default_factory=list)
    invalid_frames: int = 0
    fetch_log: list = field(default_factory=list)
    _status: Optional[int] = None
    _body: list = field(default_factory=list)
    _units: dict = field(default_factory=dict)  # first seq -> _Unit
    _firsts: list = field(default_factory=list)  # sorted unit starts
    _frame_unit: dict = field(default_factory=dict)  # seq -> unit start
    _rebuffered: bool = False

    # --- manifest helpers ----------------------------------------------------

    @property
    def low_latency(self) -> bool:
        return self.mpd is not None and self.mpd.template.availability_time_offset is not None

    def _segment_us(self) -> float:
        return self.mpd.segment_duration_s * 1e6

    def _url(self, n: int) -> str:
        return "/" + self.mpd.template.media.replace("$Number$", str(n))

    def _available_local(self, n: int) -> float:
        """Receiver-clock time at which segment ``n``'s URL can be requested."""
        ast = self.mpd.availability_start_time_us
        whole = n - 1 if self.low_latency else n
        return self.to_local(ast + whole * self._segment_us())

    def _live_edge(self, now: float) -> int:
        elapsed = self.to_sender(now) - self.mpd.availability_start_time_us
        done = max(0, math.floor(elapsed / self._segment_us()))
        return max(1, done + 1 if self.low_latency else done)

    # --- network side --------------------------------------------------------

    def on_response_event(self, ev, now: float) -> None:
        if isinstance(ev, ResponseHead):
            self._status = ev.status
            self._body = []
        elif isinstance(ev, BodyData):
            if self._status == 200 and self.outstanding and self.outstanding.startswith("/seg-"):
                self._add_unit(ev.data)
            else:
                self._body.append(ev.data)
        elif isinstance(ev, ResponseEnd):
            self._finish(now)

    def _finish(self, now: float) -> None:
        path, status = self.outstanding, self._status
        self.outstanding = None
        self.fetch_log.append((now, path, status))
        if status != 200:
            self.retry_at = now + self.cfg.poll_interval_ms * 1000
            return
        self.retry_at = None
        if path == "/live.mpd":
            self.mpd = parse_mpd(b"".join(self._body).decode())
        elif path == "/init.mp4":
            self.init_received = True
        else:
            self.next_segment += 1

    def _add_unit(self, data: bytes) -> None:
        try:
            frag = parse_fragment(data)
        except MalformedError:
            self.invalid_frames += 1
            return
        frames = []
        for payload in frag.payloads:
            check = decode_verify(payload, self.seed)
            if check.verified:
                frames.append((check.seq, check.capture_ts_us))
            else:
                self.invalid_frames += 1
        if not frames:
            return
        unit = _Unit(frames[0][0], frames, sum(frag.durations) * 1e6 / 90_000)
        self._units[unit.first] = unit
        bisect.insort(self._firsts, unit.first)
        for seq, _ in frames:
            self._frame_unit[seq] = unit.first
        if self.next_frame is None:
            self.next_frame = unit.first

    # --- buffer model --------------------------------------------------------

    def _lookahead_us(self, seq: int) -> Optional[float]:
        """Media buffered after the unit holding ``seq``; None if that unit is absent."""
        start = self._frame_unit.get(seq)
        if start is None:
            return None
        i = bisect.bisect_left(self._firsts, start)
        total = 0.0
        prev = self._units[start]
        for first in self._firsts[i + 1 :]:
            if first != prev.first + len(prev.frames):
                break
            prev = self._units[first]
            total += prev.duration_us
        return total

    def _due(self, seq: int) -> float:
        t0, f0 = self.anchor
        return t0 + (seq - f0) * 1e6 / self.fps

    # --- stepping ------------------------------------------------------------

    def step(self, now: float) -> tuple[list, list]:
        """Advance to ``now``; return ``(fetch actions, playout events)``."""
        events = self._play(now)
        return self._fetches(now), events

    def _play(self, now: float) -> list:
        events = []
        while self.next_frame is not None:
            if not self.playing:
                ahead = self._lookahead_us(self.next_frame)
                if ahead is None or ahead < self.cfg.buffer_target_s * 1e6:
                    break
                self.playing = True
                self._rebuffered = self.started_once
                self.started_once = True
                self.anchor = (now, self.next_frame)
            due = self._due(self.next_frame)
            if due > now:
                break
            start = self._frame_unit.get(self.next_frame)
            if start is None:
                self.playing = False
                ev = Rebuffer(due, self.next_frame)
                self.rebuffers.append(ev)
                events.append(ev)
                continue
            unit = self._units[start]
            capture = unit.frames[self.next_frame - unit.first][1]
            ev = Display(self.next_frame, capture, due, self._rebuffered)
            self.displayed.append(ev)
            events.append(ev)
            self.next_frame += 1
        return events

    def _fetches(self, now: float) -> list:
        if self.outstanding is not None:
            return []
        if self.retry_at is not None and now < self.retry_at:
            return []
        if self.mpd is None:
            path = "/live.mpd"
        elif not self.init_received:
            path = "/" + self.mpd.template.initialization
        else:
            if self.next_segment is None:
                self.next_segment = self._live_edge(now)
            if now < self._available_local(self.next_segment):
                return []
            path = self._url(self.next_segment)
        self.outstanding = path
        return [Fetch(path)]

    def next_wakeup(self) -> Optional[float]:
        times = []
        if self.playing and self.next_frame is not None:
            times.append(self._due(self.next_frame))
        if self.outstanding is None:
            if self.retry_at is not None:
                times.append(self.retry_at)
            elif self.mpd is not None and self.init_received and self.next_segment is not None:
                times.append(self._available_local(self.next_segment))
        return min(times) if times else None


def dash_player_step(state: DashPlayer, now: float) -> tuple[list, list]:
    return state.step(now)
