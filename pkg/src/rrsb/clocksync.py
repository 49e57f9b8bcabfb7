"""Four-timestamp clock offset estimation between sender and receiver.

The sender acts as client, the receiver as server, so the estimated offset
is ``receiver_clock - sender_clock``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Optional, Protocol

from .errors import InvalidSampleError, PreconditionError, SyncTimeoutError

SYNC_REQUEST = 0x51
SYNC_REPLY = 0x52

# Requests are padded to reply size so both directions serialize equally.
_MSG = struct.Struct(">Bqqq")

DEFAULT_ROUNDS = 8
DEFAULT_TIMEOUT_US = 250_000


@dataclass(frozen=True)
class ClockSample:
    t1: float  # client send
    t2: float  # server receive
    t3: float  # server send
    t4: float  # client receive

    def __post_init__(self):
        if self.t4 < self.t1 or self.t3 < self.t2:
            raise InvalidSampleError(f"timestamps out of order: {self}")


@dataclass(frozen=True)
class ClockEstimate:
    offset_us: float
    rtt_us: float
    samples_used: int = 1


def estimate_offset(s: ClockSample) -> ClockEstimate:
    rtt = (s.t4 - s.t1) - (s.t3 - s.t2)
    # a round trip cannot take zero time; treat it like a negative one
    if rtt <= 0:
        raise InvalidSampleError(f"non-positive round trip {rtt} us")
    offset = ((s.t2 - s.t1) + (s.t3 - s.t4)) / 2
    return ClockEstimate(offset, rtt, 1)


def encode_request(t1: int) -> bytes:
    return _MSG.pack(SYNC_REQUEST, int(t1), 0, 0)


def encode_reply(t1: int, t2: int, t3: int) -> bytes:
    return _MSG.pack(SYNC_REPLY, int(t1), int(t2), int(t3))


def is_sync_message(data: bytes) -> bool:
    return bool(data) and data[0] in (SYNC_REQUEST, SYNC_REPLY)


def decode(data: bytes):
    """Return ``("request", t1)`` or ``("reply", t1, t2, t3)``; None if not sync."""
    if len(data) != _MSG.size or not is_sync_message(data):
        return None
    kind, t1, t2, t3 = _MSG.unpack(data)
    if kind == SYNC_REQUEST:
        return ("request", t1)
    return ("reply", t1, t2, t3)


class SyncResponder:
    """Server half: answers requests using the local clock."""

    def __init__(self, clock_us: Callable[[], float], send: Callable[[bytes], None]):
        self.clock_us = clock_us
        self.send = send

    def on_datagram(self, data: bytes) -> bool:
        msg = decode(data)
        if msg is None or msg[0] != "request":
            return False
        t2 = self.clock_us()
        self.send(encode_reply(msg[1], round(t2), round(self.clock_us())))
        return True


class SyncEndpoint(Protocol):
    """What :func:`run_handshake` needs from a transport."""

    def now_us(self) -> float: ...

    def send(self, data: bytes) -> None: ...

    def recv(self, deadline_us: float) -> Optional[bytes]: ...


def run_handshake(endpoint: SyncEndpoint, rounds: int = DEFAULT_ROUNDS, timeout_us: float = DEFAULT_TIMEOUT_US) -> ClockEstimate:
    """Exchange ``rounds`` request/reply pairs and keep the minimum-RTT sample.

    A round whose reply misses its deadline is abandoned; if every round is
    abandoned the handshake fails with :class:`SyncTimeoutError`.
    """
    if rounds < 1:
        raise PreconditionError("rounds must be >= 1")
    best: Optional[ClockEstimate] = None
    used = 0
    for _ in range(rounds):
        t1 = round(endpoint.now_us())
        endpoint.send(encode_request(t1))
        deadline = t1 + timeout_us
        while True:
            data = endpoint.recv(deadline)
            if data is None:
                break
            msg = decode(data)
            if msg is None or msg[0] != "reply" or msg[1] != t1:
                continue  # stale reply from an abandoned round
            t4 = endpoint.now_us()
            try:
                est = estimate_offset(ClockSample(t1, msg[2], msg[3], t4))
            except InvalidSampleError:
                break
            used += 1
            if best is None or est.rtt_us < best.rtt_us:
                best = est
            break
    if best is None:
        raise SyncTimeoutError(f"no sync reply within {timeout_us} us in {rounds} rounds")
    return ClockEstimate(best.offset_us, best.rtt_us, used)
