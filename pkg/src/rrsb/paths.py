"""End-to-end delivery paths: sender pipeline, network, receiver, display.

Everything for one run lives in one scheduler. The scheduler clock is the
sender's clock; the receiver's clock runs ``clock_offset_us`` ahead of it
and is only ever related to the sender's through the sync handshake.
"""

from __future__ import annotations

import csv
import fcntl
import json
import math
import os
import struct
from collections import deque
from dataclasses import asdict, dataclass, field, is_dataclass
from enum import Enum
from typing import Callable, Optional

from .clocksync import SyncResponder, run_handshake
from .errors import PreconditionError, RunError
from .http import Origin, OriginConnection, ResponseParser, encode_request
from .isobmff import TrackConfig, build_fragment
from .media import (
    AccessUnit,
    Encoder,
    EncoderConfig,
    VideoConfig,
    decode_verify,
    deserialize_au,
    serialize_au,
)
from .moq import MoqPublisher, MoqSubscriber
from .mpd import MpdConfig
from .netem import EmuLink, NetProfile, UdpWire
from .player import DashPlayer, PlayerModelConfig
from .rtp import Depacketizer, JitterBuffer, JitterBufferConfig, RtpPacket, packetize
from .sim import RealtimeScheduler, VirtualScheduler
from .smt import SmtConnection, StreamData

MIN_DURATION_S = 5
_LEN16 = struct.Struct(">H")


class ProtocolPath(str, Enum):
    RTP_UDP = "rtp-udp"
    RTP_SMT = "rtp-smt"
    MOQ = "moq"
    DASH = "dash"
    LL_DASH = "lldash"

    @property
    def uses_http(self) -> bool:
        return self in (ProtocolPath.DASH, ProtocolPath.LL_DASH)


@dataclass(frozen=True)
class RunConfig:
    video: VideoConfig = VideoConfig()
    encoder: EncoderConfig = EncoderConfig()
    jitter: JitterBufferConfig = JitterBufferConfig()
    player: Optional[PlayerModelConfig] = None  # None: per-path default
    segment_duration_s: float = 2.0
    fragment_duration_s: float = 0.5
    encode_delay_us: int = 5_000
    package_delay_us: int = 500
    clock_offset_us: int = 1_234_567
    sender_epoch_us: int = 1_700_000_000_000_000
    mtu_payload: int = 1200
    sync_rounds: int = 8
    sync_timeout_us: int = 250_000
    setup_budget_us: int = 500_000
    moq_frames_per_object: int = 1
    ingest: str = "inproc"
    queue_depth: int = 8
    drain_s: Optional[float] = None
    realtime: bool = False
    outages_s: tuple = ()  # (start, end) seconds after the first capture, forward link
    trace: bool = False

    def __post_init__(self):
        if self.ingest not in ("inproc", "pipe"):
            raise PreconditionError(f"unknown ingest mode {self.ingest!r}")
        if self.video.fps != self.encoder.fps:
            raise PreconditionError("video and encoder frame rates differ")

    def player_for(self, path: ProtocolPath) -> PlayerModelConfig:
        if self.player is not None:
            return self.player
        return PlayerModelConfig.default_for(path == ProtocolPath.LL_DASH)


@dataclass(frozen=True)
class LatencySample:
    seq: int
    capture_ts_us: int
    display_ts_us: float
    latency_us: float
    flagged: bool = False


@dataclass
class RunResult:
    path: str
    profile: str
    seed: int
    duration_s: float
    frames_sent: int
    samples: list
    skipped: int
    lost: int
    offset_est_us: float
    offset_true_us: float
    sync_rtt_us: float
    counters: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.samples)

    def latencies_ms(self) -> list:
        return [s.latency_us / 1000 for s in self.samples]

    def write_samples_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seq", "capture_us", "display_us", "latency_us"])
            for s in self.samples:
                w.writerow([s.seq, s.capture_ts_us, _num(s.display_ts_us), _num(s.latency_us)])

    def summary(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "samples"}
        out["n"] = self.n
        return out

    def write_run_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True, default=str)


def _num(x: float):
    return int(x) if float(x).is_integer() else repr(float(x))


def _jsonable(obj):
    if is_dataclass(obj):
        return {k: _jsonable(v) for k, v in asdict(obj).items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Enum):
        return obj.value
    return obj


# --- sender ------------------------------------------------------------------


class _PipeAdapter:
    """Round-trips records through a real OS pipe inside one thread."""

    def __init__(self):
        self.r, self.w = os.pipe()
        for fd in (self.r, self.w):
            fcntl.fcntl(fd, fcntl.F_SETFL, fcntl.fcntl(fd, fcntl.F_GETFL) | os.O_NONBLOCK)

    def roundtrip(self, record: bytes) -> bytes:
        view = memoryview(record)
        got = []
        need = len(record)
        while view or need:
            if view:
                try:
                    view = view[os.write(self.w, view) :]
                except BlockingIOError:
                    pass
            try:
                chunk = os.read(self.r, need)
            except BlockingIOError:
                continue
            got.append(chunk)
            need -= len(chunk)
        return b"".join(got)

    def close(self) -> None:
        os.close(self.r)
        os.close(self.w)


@dataclass
class StageLog:
    capture: float
    encoded: Optional[float] = None
    packaged: Optional[float] = None
    sent: Optional[float] = None


class SenderPipeline:
    """source -> encode -> package -> transport, with modelled stage delays.

    Stages hand over through bounded queues; an overflowing queue drops its
    oldest entry and records the drop.
    """

    def __init__(self, sched, cfg: RunConfig, package: Callable[[AccessUnit], list], transmit: Callable[[list], None], ingest: str = "inproc"):
        self.sched = sched
        self.cfg = cfg
        self.encoder = Encoder(cfg.encoder, cfg.video.seed)
        self.package = package
        self.transmit = transmit
        self.ingest = ingest
        self._pipe = _PipeAdapter() if ingest == "pipe" else None
        self._to_package: deque = deque()
        self._to_send: deque = deque()
        self.stages: dict[int, StageLog] = {}
        self.drops: list = []
        self.frames_sent = 0
        self.bytes_in = 0

    def _push(self, q: deque, item, stage: str) -> None:
        if len(q) >= self.cfg.queue_depth:
            old = q.popleft()
            self.drops.append((self.sched.now_us, stage, old[0] if isinstance(old, tuple) else old.seq))
        q.append(item)

    def capture(self, seq: int, capture_us: int) -> None:
        self.stages[seq] = StageLog(capture_us)
        au = self.encoder.encode_meta(seq, capture_us)
        if self._pipe is not None:
            au = deserialize_au(self._pipe.roundtrip(serialize_au(au)))
        self.bytes_in += len(au.payload)
        self.sched.call_later(self.cfg.encode_delay_us, self._encoded, au)

    def _encoded(self, au: AccessUnit) -> None:
        self.stages[au.seq].encoded = self.sched.now_us
        self._push(self._to_package, au, "package")
        self.sched.call_later(self.cfg.package_delay_us, self._packaged)

    def _packaged(self) -> None:
        if not self._to_package:
            return
        au = self._to_package.popleft()
        self.stages[au.seq].packaged = self.sched.now_us
        self._push(self._to_send, (au.seq, self.package(au)), "transport")
        self._send()

    def _send(self) -> None:
        while self._to_send:
            seq, items = self._to_send.popleft()
            self.stages[seq].sent = self.sched.now_us
            self.frames_sent += 1
            self.transmit(items)

    def close(self) -> None:
        if self._pipe is not None:
            self._pipe.close()


def sender_pipeline(sched, cfg: RunConfig, package, transmit, ingest: str = "inproc") -> SenderPipeline:
    return SenderPipeline(sched, cfg, package, transmit, ingest)


class SegmentPackager:
    """Cuts AUs into DASH segments or LL-DASH fragments for an origin."""

    def __init__(self, mpd_cfg: MpdConfig, fps: int):
        self.mpd_cfg = mpd_cfg
        self.fps = fps
        unit_s = mpd_cfg.fragment_duration_s if mpd_cfg.low_latency else mpd_cfg.segment_duration_s
        per_unit = fps * unit_s
        if abs(per_unit - round(per_unit)) > 1e-9:
            raise PreconditionError("fragment duration must hold a whole number of frames")
        self.frames_per_unit = round(per_unit)
        self.units_per_segment = mpd_cfg.fragments_per_segment if mpd_cfg.low_latency else 1
        self._pending: list = []
        self._unit_index = 0

    def package(self, au: AccessUnit) -> list:
        self._pending.append(au)
        if len(self._pending) < self.frames_per_unit:
            return []
        return self._cut(last=None)

    def flush(self) -> list:
        return self._cut(last=True) if self._pending else []

    def _cut(self, last: Optional[bool]) -> list:
        n, k = divmod(self._unit_index, self.units_per_segment)
        aus, self._pending = self._pending, []
        frag = build_fragment(aus, self._unit_index + 1, fps=self.fps, styp=(k == 0))
        self._unit_index += 1
        done = k == self.units_per_segment - 1 if last is None else True
        if done:
            self._unit_index = (n + 1) * self.units_per_segment
        return [(n + 1, frag.data, done)]


class _LengthPrefixed:
    def __init__(self):
        self._buf = b""

    def feed(self, data: bytes) -> list:
        self._buf += data
        out = []
        while len(self._buf) >= 2:
            (n,) = _LEN16.unpack_from(self._buf)
            if len(self._buf) < 2 + n:
                break
            out.append(self._buf[2 : 2 + n])
            self._buf = self._buf[2 + n :]
        return out


# --- the run -----------------------------------------------------------------


class _Sync:
    """Blocking handshake endpoint that advances the scheduler while waiting."""

    def __init__(self, sched, link: EmuLink):
        self.sched = sched
        self.link = link
        self.inbox: deque = deque()

    def now_us(self) -> float:
        return self.sched.now_us

    def send(self, data: bytes) -> None:
        self.link.send(data, self.sched.now_us)

    def recv(self, deadline_us: float) -> Optional[bytes]:
        if not self.inbox:
            self.sched.run_until(deadline_us, stop=lambda: bool(self.inbox))
        return self.inbox.popleft() if self.inbox else None


class _Run:
    def __init__(self, path: ProtocolPath, prof: NetProfile, cfg: RunConfig, duration_s: float, seed: int):
        self.path = path
        self.cfg = cfg
        self.duration_s = duration_s
        self.seed = seed
        self.fps = cfg.video.fps
        self.prof = prof.with_(seed=seed)
        self.sched = RealtimeScheduler(cfg.sender_epoch_us) if cfg.realtime else VirtualScheduler(cfg.sender_epoch_us)
        self.fwd = EmuLink(self.prof, "fwd", trace=cfg.trace)
        self.rev = EmuLink(self.prof, "rev", trace=cfg.trace)
        self.wires = []
        self.on_fwd: Callable[[bytes], None] = lambda d: None
        self.on_rev: Callable[[bytes], None] = lambda d: None
        self._attach(self.fwd, lambda d: self.on_fwd(d))
        self._attach(self.rev, lambda d: self.on_rev(d))
        self.samples: list = []
        self.offset_est = 0.0
        self.sync_rtt = 0.0
        self.jb = JitterBuffer(cfg.jitter)
        self.invalid = 0
        self._jb_timer = None
        self.counters: dict = {}

    def _attach(self, link: EmuLink, fn) -> None:
        wire = None
        if self.cfg.realtime:
            wire = UdpWire()
            self.wires.append(wire)
        link.attach(self.sched, fn, wire)

    # receiver clock helpers
    def local_now(self) -> float:
        return self.sched.now_us + self.cfg.clock_offset_us

    def at_local(self, t_local: float, fn, *args):
        return self.sched.call_at(t_local - self.cfg.clock_offset_us, fn, *args)

    # --- phases --------------------------------------------------------------

    def sync(self) -> None:
        ep = _Sync(self.sched, self.fwd)
        responder = SyncResponder(self.local_now, lambda d: self.rev.send(d, self.sched.now_us))
        self.on_fwd = responder.on_datagram
        self.on_rev = ep.inbox.append
        est = run_handshake(ep, self.cfg.sync_rounds, self.cfg.sync_timeout_us)
        self.offset_est, self.sync_rtt = est.offset_us, est.rtt_us
        # let stragglers from abandoned rounds drain before switching handlers
        self.sched.run_until(self.sched.now_us + 2 * self.cfg.sync_timeout_us if est.samples_used < self.cfg.sync_rounds else self.sched.now_us)
        self.on_fwd = self.on_rev = lambda d: None

    def setup(self) -> None:
        # The first capture is pinned relative to the end of sync so every
        # path sees the same send instants, hence the same link draws.
        self.t_start = math.ceil((self.sched.now_us + self.cfg.setup_budget_us) / 1000) * 1000
        p = self.path
        if p == ProtocolPath.RTP_UDP:
            self._setup_rtp_udp()
        elif p == ProtocolPath.RTP_SMT:
            self._setup_rtp_smt()
        elif p == ProtocolPath.MOQ:
            self._setup_moq()
        else:
            self._setup_dash()
            self.packager = SegmentPackager(self.mpd_cfg, self.fps)
            self._player_kick()
            self.sched.run_until(self.t_start - 1, stop=lambda: self.player.init_received)
            if not self.player.init_received:
                raise RuntimeError("player could not fetch manifest and init segment")
        if self.sched.now_us >= self.t_start:
            raise RuntimeError("setup overran its time budget")
        for a, b in self.cfg.outages_s:
            self.fwd.outages.append((self.t_start + a * 1e6, self.t_start + b * 1e6))

    def stream(self) -> None:
        n = int(round(self.duration_s * self.fps))
        self.n_frames = n
        self.pipeline = SenderPipeline(self.sched, self.cfg, self._package, self._transmit, self.cfg.ingest)
        for seq in range(n):
            t = self.t_start + round(seq * 1_000_000 / self.fps)
            self.sched.call_at(t, self.pipeline.capture, seq, t)
        self.t_last = self.t_start + round((n - 1) * 1_000_000 / self.fps)
        if self.path.uses_http:
            done = self.t_last + self.cfg.encode_delay_us + self.cfg.package_delay_us + 1
            self.sched.call_at(done, self._flush_segments)
        self.sched.run_until(self.t_last + self.cfg.encode_delay_us + self.cfg.package_delay_us + 1)

    def drain(self) -> None:
        default = 4.0 + 3 * self.cfg.segment_duration_s if self.path.uses_http else 3.0
        if self.path.uses_http:
            default += self.cfg.player_for(self.path).buffer_target_s
        until = self.sched.now_us + (self.cfg.drain_s if self.cfg.drain_s is not None else default) * 1e6
        self.sched.run_until(until, stop=self._all_accounted)

    def _all_accounted(self) -> bool:
        return len(self.samples) + self._skipped() >= self.n_frames

    def _skipped(self) -> int:
        return self.subscriber.skipped if self.path == ProtocolPath.MOQ else 0

    # --- RTP/UDP -------------------------------------------------------------

    def _rtp_ids(self):
        ssrc = (self.seed * 2654435761 + 0x1234) & 0xFFFFFFFF
        seq0 = (self.seed * 40503 + 65000) & 0xFFFF  # wraps early in the run
        return ssrc, seq0

    def _setup_rtp_udp(self) -> None:
        self.ssrc, self.rtp_seq = self._rtp_ids()
        self.depack = Depacketizer(initial_seq=self.rtp_seq)
        self.on_fwd = self._rtp_datagram

    def _rtp_package(self, au: AccessUnit) -> list:
        pkts = packetize(au, self.cfg.mtu_payload, ssrc=self.ssrc, seq_start=self.rtp_seq)
        self.rtp_seq = (self.rtp_seq + len(pkts)) & 0xFFFF
        return pkts

    def _rtp_datagram(self, data: bytes) -> None:
        self._rtp_in(RtpPacket.from_bytes(data))

    def _rtp_in(self, pkt: RtpPacket) -> None:
        now = self.local_now()
        for done in self.depack.push(pkt, now):
            self._au_in(done.payload, now, pts=done.timestamp)

    # --- RTP over SMT --------------------------------------------------------

    def _smt_pair(self):
        rtt = self.sync_rtt or None
        snd = SmtConnection(self.sched, lambda d: self.fwd.send(d, self.sched.now_us), self.cfg.mtu_payload, rtt)
        rcv = SmtConnection(self.sched, lambda d: self.rev.send(d, self.sched.now_us), self.cfg.mtu_payload, rtt)
        return snd, rcv

    def _setup_rtp_smt(self) -> None:
        self.ssrc, self.rtp_seq = self._rtp_ids()
        self.depack = Depacketizer(initial_seq=self.rtp_seq)
        self.snd, self.rcv = self._smt_pair()
        self.on_rev = self.snd.on_datagram
        self.on_fwd = self._smt_rtp_datagram
        self.rtp_stream = self.snd.open_stream()
        self.framer = _LengthPrefixed()

    def _smt_rtp_datagram(self, data: bytes) -> None:
        for ev in self.rcv.on_datagram(data):
            if isinstance(ev, StreamData):
                for raw in self.framer.feed(ev.data):
                    self._rtp_in(RtpPacket.from_bytes(raw))

    # --- MoQ -----------------------------------------------------------------

    def _setup_moq(self) -> None:
        self.snd, self.rcv = self._smt_pair()
        gop = self.cfg.encoder.gop_length
        fpo = self.cfg.moq_frames_per_object
        self.publisher = MoqPublisher(self.snd, gop_length=gop, fps=self.fps, frames_per_object=fpo)
        self.subscriber = MoqSubscriber(self.rcv, gop_length=gop, frames_per_object=fpo)

        def on_rev(d):
            for ev in self.snd.on_datagram(d):
                self.publisher.on_event(ev)

        def on_fwd(d):
            now = self.local_now()
            for ev in self.rcv.on_datagram(d):
                for au in self.subscriber.on_event(ev):
                    self._au_in(au.payload, now, pts=au.pts_90k)

        self.on_rev, self.on_fwd = on_rev, on_fwd
        self.publisher.announce()
        self.subscriber.subscribe()
        self.sched.run_until(self.t_start - 1, stop=lambda: self.publisher.subscribed and self.subscriber.announced is not None)
        if not (self.publisher.subscribed and self.subscriber.announced):
            raise RuntimeError("moq announce/subscribe did not complete")

    # --- DASH / LL-DASH ------------------------------------------------------

    def _mpd_cfg(self, ast: int) -> MpdConfig:
        return MpdConfig(
            segment_duration_s=self.cfg.segment_duration_s,
            fragment_duration_s=self.cfg.fragment_duration_s,
            availability_start_time_us=ast,
            low_latency=self.path == ProtocolPath.LL_DASH,
        )

    def _setup_dash(self) -> None:
        self.snd, self.rcv = self._smt_pair()
        v = self.cfg.video
        self.mpd_cfg = self._mpd_cfg(self.t_start)
        self.origin = Origin(self.mpd_cfg, TrackConfig(width=v.width, height=v.height, fps=self.fps))
        resp_stream = self.snd.open_stream()
        self.server = OriginConnection(self.origin, lambda b: self.snd.stream_send(resp_stream, b), lambda: self.sched.now_us)
        self.req_stream = self.rcv.open_stream()
        self.resp_parser = ResponseParser()
        off = self.offset_est
        self.player = DashPlayer(self.cfg.player_for(self.path), self.fps, v.seed, lambda t: t + off, lambda t: t - off)
        self._player_timer = None

        def on_rev(d):
            for ev in self.snd.on_datagram(d):
                if isinstance(ev, StreamData):
                    self.server.on_bytes(ev.data)

        def on_fwd(d):
            now = self.local_now()
            for ev in self.rcv.on_datagram(d):
                if isinstance(ev, StreamData):
                    for rev in self.resp_parser.feed(ev.data):
                        self.player.on_response_event(rev, now)
            self._player_kick()

        self.on_rev, self.on_fwd = on_rev, on_fwd

    def _player_kick(self) -> None:
        now = self.local_now()
        fetches, events = self.player.step(now)
        for ev in events:
            if hasattr(ev, "capture_ts_us"):
                self._sample(ev.seq, ev.capture_ts_us, ev.display_local_us, ev.after_rebuffer)
        for f in fetches:
            self.rcv.stream_send(self.req_stream, encode_request(f.path))
        wake = self.player.next_wakeup()
        if self._player_timer is not None:
            self._player_timer.cancel()
            self._player_timer = None
        if wake is not None:
            self._player_timer = self.at_local(max(wake, now), self._player_kick)

    def _flush_segments(self) -> None:
        for n, data, last in self.packager.flush():
            self.origin.add_chunk(n, data, last)

    # --- package / transmit per path -----------------------------------------

    def _package(self, au: AccessUnit) -> list:
        if self.path in (ProtocolPath.RTP_UDP, ProtocolPath.RTP_SMT):
            return self._rtp_package(au)
        if self.path == ProtocolPath.MOQ:
            return [au]
        return self.packager.package(au)

    def _transmit(self, items: list) -> None:
        now = self.sched.now_us
        p = self.path
        if p == ProtocolPath.RTP_UDP:
            for pkt in items:
                self.fwd.send(pkt.to_bytes(), now)
        elif p == ProtocolPath.RTP_SMT:
            data = b"".join(_LEN16.pack(len(b)) + b for b in (pkt.to_bytes() for pkt in items))
            self.snd.stream_send(self.rtp_stream, data)
        elif p == ProtocolPath.MOQ:
            for au in items:
                self.publisher.on_au(au)
        else:
            for n, data, last in items:
                self.origin.add_chunk(n, data, last)

    # --- receiver: verification, jitter buffer, samples ----------------------

    def _au_in(self, payload: bytes, arrival_local: float, pts: int) -> None:
        check = decode_verify(payload, self.cfg.video.seed)
        if not check.verified:
            self.invalid += 1
            return
        au = AccessUnit(check.seq, pts, pts, False, check.capture_ts_us, payload)
        self.jb.insert(au, arrival_local)
        self._jb_arm()

    def _jb_arm(self) -> None:
        t = self.jb.next_ready_us()
        if t is None:
            return
        if self._jb_timer is not None:
            if self._jb_timer.when <= t - self.cfg.clock_offset_us:
                return
            self._jb_timer.cancel()
        self._jb_timer = self.at_local(t, self._jb_pop)

    def _jb_pop(self) -> None:
        self._jb_timer = None
        now = self.local_now()
        for au in self.jb.pop_ready(now):
            self._sample(au.seq, au.capture_ts_us, now, False)
        self._jb_arm()

    def _sample(self, seq: int, capture: int, display_local: float, flagged: bool) -> None:
        display = display_local - self.offset_est  # receiver clock mapped onto the sender's
        self.samples.append(LatencySample(seq, capture, display, display - capture, flagged))

    # --- result --------------------------------------------------------------

    def result(self) -> RunResult:
        samples = sorted(self.samples, key=lambda s: s.seq)
        skipped = self._skipped()
        sent = self.pipeline.frames_sent
        c = {
            "invalid_frames": self.invalid,
            "jitter_late": sum(1 for e in self.jb.events if e.kind == "late"),
            "jitter_dropped_late": sum(1 for e in self.jb.events if e.kind == "dropped-late"),
            "link_fwd_sent": self.fwd.sent,
            "link_fwd_dropped": self.fwd.dropped,
            "link_rev_sent": self.rev.sent,
            "link_rev_dropped": self.rev.dropped,
            "pipeline_drops": len(self.pipeline.drops),
            "flagged_samples": sum(1 for s in samples if s.flagged),
        }
        if hasattr(self, "depack"):
            c["rtp_au_losses"] = len(self.depack.losses)
        if hasattr(self, "snd"):
            c["retransmissions"] = len(self.snd.retransmissions) + len(self.rcv.retransmissions)
            c["rto_us"] = self.snd.rto_us
        if hasattr(self, "player"):
            c["rebuffers"] = len(self.player.rebuffers)
            c["invalid_frames"] += self.player.invalid_frames
        return RunResult(
            path=self.path.value,
            profile=self.prof.name,
            seed=self.seed,
            duration_s=self.duration_s,
            frames_sent=sent,
            samples=samples,
            skipped=skipped,
            lost=sent - len(samples) - skipped,
            offset_est_us=self.offset_est,
            offset_true_us=self.cfg.clock_offset_us,
            sync_rtt_us=self.sync_rtt,
            counters=c,
            config={"profile": _jsonable(self.prof), "run": _jsonable(self.cfg)},
        )

    def close(self) -> None:
        if hasattr(self, "pipeline"):
            self.pipeline.close()
        for w in self.wires:
            w.close()
        if isinstance(self.sched, RealtimeScheduler):
            self.sched.close()


def run_path(
    path,
    profile: NetProfile,
    cfgs: RunConfig = RunConfig(),
    duration_s: float = 30,
    seed: int = 0,
    hooks: Optional[Callable[["_Run"], None]] = None,
) -> RunResult:
    """Run one path end to end and collect per-frame latency samples.

    ``hooks`` is called with the run object after the links exist and before
    any traffic, which lets callers install drop filters or observers.
    """
    path = ProtocolPath(path)
    if duration_s < MIN_DURATION_S:
        raise PreconditionError(f"duration_s must be >= {MIN_DURATION_S}")
    run = _Run(path, profile, cfgs, duration_s, seed)
    try:
        if hooks is not None:
            hooks(run)
        for phase in ("sync", "setup", "stream", "drain"):
            try:
                getattr(run, phase)()
            except RunError:
                raise
            except Exception as e:
                raise RunError(phase, e) from e
        return run.result()
    finally:
        run.close()
