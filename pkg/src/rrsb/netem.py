"""Seeded network emulator: delay, jitter, loss, reordering, bandwidth.

Random draws are keyed by ``(seed, link name, send time, slot)`` rather than
taken from one sequential stream. Two runs that send at the same instants
therefore see the same impairments even if they send different bytes, and an
extra datagram (a retransmission, say) does not perturb the draws of the
datagrams around it.
"""

from __future__ import annotations

import csv
import hashlib
import heapq
import itertools
import json
import math
import socket
import struct
from dataclasses import asdict, dataclass, replace
from typing import Callable, Iterable, Optional

from .errors import OversizeError, PreconditionError, UnknownProfileError

MAX_DATAGRAM = 65507


@dataclass(frozen=True)
class NetProfile:
    one_way_delay_us: int
    jitter_us: int
    loss_rate: float
    reorder_rate: float
    bandwidth_bps: float
    seed: int = 0
    name: str = "custom"

    def __post_init__(self):
        if not (0 <= self.loss_rate <= 1 and 0 <= self.reorder_rate <= 1):
            raise PreconditionError("loss_rate and reorder_rate must be in [0, 1]")
        if self.bandwidth_bps <= 0:
            raise PreconditionError("bandwidth_bps must be positive")
        if self.one_way_delay_us < 0 or self.jitter_us < 0:
            raise PreconditionError("delay and jitter must be non-negative")

    def with_(self, **changes) -> "NetProfile":
        return replace(self, **changes)


PRESETS = {
    "wifi": NetProfile(2_000, 1_000, 0.001, 0.0, 300e6, name="wifi"),
    "fiveg": NetProfile(15_000, 5_000, 0.005, 0.0, 75e6, name="fiveg"),
    "ideal": NetProfile(0, 0, 0.0, 0.0, 1e9, name="ideal"),
}


def profile(name: str, registry: Optional[dict] = None) -> NetProfile:
    table = PRESETS if registry is None else {**PRESETS, **registry}
    try:
        return table[name]
    except KeyError:
        raise UnknownProfileError(f"unknown network profile {name!r}; known: {sorted(table)}") from None


def load_profiles(path) -> dict:
    """Read ``{name: {field: value}}`` from a JSON file."""
    with open(path) as fh:
        raw = json.load(fh)
    return {name: NetProfile(**{"name": name, **fields}) for name, fields in raw.items()}


def dump_profiles(profiles: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump({n: {k: v for k, v in asdict(p).items() if k != "name"} for n, p in profiles.items()}, fh, indent=2)


class EmuLink:
    """One direction of an emulated link.

    Pull usage: ``send`` then ``poll``. Push usage: ``attach`` a scheduler
    and a delivery callback and the link wakes itself up.
    """

    def __init__(
        self,
        prof: NetProfile,
        name: str = "link",
        drop_filter: Optional[Callable[[bytes, float], bool]] = None,
        outages: Iterable[tuple] = (),
        trace: bool = False,
    ):
        self.profile = prof
        self.name = name
        self.drop_filter = drop_filter
        self.outages = list(outages)
        self.on_drop: Optional[Callable[[bytes, float], None]] = None
        self.trace: Optional[list] = [] if trace else None
        self._key = hashlib.blake2b(
            struct.pack(">Q", prof.seed & ((1 << 64) - 1)) + name.encode(), digest_size=16
        ).digest()
        self._cursor = 0.0
        self._heap: list = []
        self._counter = itertools.count()
        self._slot_time = None
        self._slot = 0
        self._last = None
        self._scheduler = None
        self._on_deliver = None
        self._wire = None
        self.sent = self.dropped = self.delivered = 0

    # --- randomness --------------------------------------------------------

    def _draws(self, now: float):
        t = round(now * 1000)
        if t == self._slot_time:
            self._slot += 1
        else:
            self._slot_time, self._slot = t, 0
        digest = hashlib.blake2b(struct.pack(">qI", t, self._slot), key=self._key, digest_size=24).digest()
        a, b, c = struct.unpack(">QQQ", digest)
        return a / 2**64, b / 2**64, c / 2**64

    # --- sending -----------------------------------------------------------

    def send(self, datagram: bytes, now_us: float) -> float:
        """Queue ``datagram``; return when it finishes leaving the sender."""
        if len(datagram) > MAX_DATAGRAM:
            raise OversizeError(f"datagram of {len(datagram)} bytes exceeds {MAX_DATAGRAM}")
        p = self.profile
        u_loss, u_jitter, u_reorder = self._draws(now_us)
        self.sent += 1
        self._cursor = max(self._cursor, now_us) + len(datagram) * 8e6 / p.bandwidth_bps
        self._log(now_us, "send", len(datagram))
        if (
            u_loss < p.loss_rate
            or any(a <= now_us < b for a, b in self.outages)
            or (self.drop_filter is not None and self.drop_filter(datagram, now_us))
        ):
            self.dropped += 1
            self._log(now_us, "drop", len(datagram))
            if self.on_drop is not None:
                self.on_drop(datagram, now_us)
            return self._cursor
        earliest = math.ceil(self._cursor - 1e-9)
        deliver_at = max(earliest, math.ceil(self._cursor + p.one_way_delay_us + (2 * u_jitter - 1) * p.jitter_us - 1e-9))
        entry = [deliver_at, next(self._counter), datagram, True]
        prev = self._last
        if prev is not None and prev[3] and u_reorder < p.reorder_rate:
            entry[0], prev_new = max(prev[0], earliest), [deliver_at, prev[1], prev[2], True]
            prev[3] = False
            heapq.heappush(self._heap, prev_new)
            self._wake(prev_new[0])
        heapq.heappush(self._heap, entry)
        self._last = entry
        self._wake(entry[0])
        return self._cursor

    def _log(self, now, event, size):
        if self.trace is not None:
            self.trace.append((now, event, size))

    # --- receiving ---------------------------------------------------------

    def next_delivery_us(self) -> Optional[float]:
        while self._heap and not self._heap[0][3]:
            heapq.heappop(self._heap)
        return self._heap[0][0] if self._heap else None

    def poll(self, now_us: float) -> list:
        out = []
        heap = self._heap
        while heap and heap[0][0] <= now_us:
            entry = heapq.heappop(heap)
            if not entry[3]:
                continue
            entry[3] = False
            self.delivered += 1
            self._log(entry[0], "deliver", len(entry[2]))
            out.append(entry[2])
        return out

    def attach(self, scheduler, on_deliver: Callable[[bytes], None], wire=None) -> None:
        """Drive deliveries from ``scheduler``.

        With a ``wire`` (see :class:`UdpWire`) due datagrams are written to a
        real socket and ``on_deliver`` fires when the peer socket reads them.
        """
        self._scheduler = scheduler
        self._on_deliver = on_deliver
        self._wire = wire
        if wire is not None:
            wire.start(scheduler, on_deliver)

    def _wake(self, when):
        if self._scheduler is not None:
            self._scheduler.call_at(when, self._fire)

    def _fire(self):
        for datagram in self.poll(self._scheduler.now_us):
            if self._wire is not None:
                self._wire.send(datagram)
            else:
                self._on_deliver(datagram)

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["ts_us", "event", "bytes"])
            writer.writerows(self.trace or [])


def link_send(link: EmuLink, datagram: bytes, now_us: float) -> float:
    return link.send(datagram, now_us)


def link_poll(link: EmuLink, now_us: float) -> list:
    return link.poll(now_us)


class UdpWire:
    """A loopback UDP socket pair carrying one emulated link direction."""

    def __init__(self, host: str = "127.0.0.1"):
        self.rx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.rx.bind((host, 0))
        self.rx.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 4 << 20)
        self.rx.setblocking(False)
        self.tx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.addr = self.rx.getsockname()
        self._on_deliver = None

    def start(self, scheduler, on_deliver) -> None:
        self._on_deliver = on_deliver
        scheduler.add_reader(self.rx, self._readable)

    def send(self, datagram: bytes) -> None:
        self.tx.sendto(datagram, self.addr)

    def _readable(self) -> None:
        while True:
            try:
                data = self.rx.recv(MAX_DATAGRAM)
            except BlockingIOError:
                return
            self._on_deliver(data)

    def close(self) -> None:
        self.rx.close()
        self.tx.close()
