import random

import oracles
import pytest

from rrsb.clocksync import (
    ClockSample,
    SyncResponder,
    decode,
    encode_reply,
    encode_request,
    estimate_offset,
    run_handshake,
)
from rrsb.errors import InvalidSampleError, PreconditionError, SyncTimeoutError
from rrsb.sim import VirtualScheduler


class SimulatedPair:
    """Client endpoint talking to a responder whose clock runs ``offset`` ahead.

    Each direction takes ``delay`` plus an independent uniform draw in
    [-jitter, +jitter], all in microseconds.
    """

    def __init__(self, offset, delay, jitter=0, seed=0, drop=()):
        self.sched = VirtualScheduler()
        self.rng = random.Random(seed)
        self.offset, self.delay, self.jitter = offset, delay, jitter
        self.drop = set(drop)
        self.sent = 0
        self.inbox = []
        self.responder = SyncResponder(lambda: self.sched.now_us + offset, self._reply)

    def _lag(self):
        return self.delay + (self.rng.uniform(-self.jitter, self.jitter) if self.jitter else 0)

    def _reply(self, data):
        self.sched.call_later(self._lag(), self.inbox.append, data)

    def now_us(self):
        return self.sched.now_us

    def send(self, data):
        self.sent += 1
        if self.sent in self.drop:
            return
        self.sched.call_later(self._lag(), self.responder.on_datagram, data)

    def recv(self, deadline_us):
        self.sched.run_until(deadline_us, stop=lambda: bool(self.inbox))
        return self.inbox.pop(0) if self.inbox else None


def test_formula_matches_oracle():
    e = estimate_offset(ClockSample(100, 150, 152, 112))
    assert (e.offset_us, e.rtt_us) == (45, 10)
    s = ClockSample(1000, 2600, 2700, 2300)
    est = estimate_offset(s)
    assert (est.offset_us, est.rtt_us) == oracles.ntp(1000, 2600, 2700, 2300)
    assert est.offset_us == 1000 and est.rtt_us == 1200


def test_invalid_samples():
    with pytest.raises(InvalidSampleError):
        ClockSample(10, 0, 0, 5)
    with pytest.raises(InvalidSampleError):
        estimate_offset(ClockSample(0, 100, 200, 100))  # rtt -100
    with pytest.raises(InvalidSampleError):
        estimate_offset(ClockSample(0, 50, 150, 100))  # rtt exactly 0
    assert oracles.ntp(0, 10, 12, 2)[1] == 0
    with pytest.raises(InvalidSampleError):
        estimate_offset(ClockSample(0, 10, 12, 2))


def test_wire_round_trip():
    assert decode(encode_request(123)) == ("request", 123)
    assert decode(encode_reply(1, 2, 3)) == ("reply", 1, 2, 3)
    assert decode(b"\x00junk") is None


def test_zero_jitter_is_exact():
    pair = SimulatedPair(offset=1000, delay=5000)
    est = run_handshake(pair, rounds=8)
    assert est.offset_us == 1000
    assert est.rtt_us == 10_000
    assert est.samples_used == 8


@pytest.mark.parametrize("seed", range(20))
def test_jitter_error_bounded(seed):
    pair = SimulatedPair(offset=-7_654_321, delay=8000, jitter=5000, seed=seed)
    est = run_handshake(pair, rounds=8)
    assert abs(est.offset_us - (-7_654_321)) <= 5000


def test_lost_round_is_skipped():
    pair = SimulatedPair(offset=42, delay=1000, drop={1, 2, 3})
    est = run_handshake(pair, rounds=8, timeout_us=250_000)
    assert est.samples_used == 5 and est.offset_us == 42


def test_all_rounds_lost_times_out():
    pair = SimulatedPair(offset=0, delay=1000, drop=set(range(1, 9)))
    with pytest.raises(SyncTimeoutError):
        run_handshake(pair, rounds=8)
    assert pair.sched.now_us == pytest.approx(8 * 250_000, abs=10)


def test_rounds_must_be_positive():
    with pytest.raises(PreconditionError):
        run_handshake(SimulatedPair(0, 1), rounds=0)
