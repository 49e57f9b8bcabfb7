import random

import pytest

from rrsb.errors import MalformedError, PreconditionError, ProtocolError
from rrsb.netem import EmuLink, NetProfile
from rrsb.sim import VirtualScheduler
from rrsb.smt import (
    AckFrame,
    AckProcessed,
    ConnectionError,
    DatagramFrame,
    DatagramIn,
    PingFrame,
    SmtConnection,
    StreamData,
    StreamFin,
    StreamFrame,
    _add_range,
    _covered,
    decode_frame,
    encode_frame,
)


class Pair:
    """Two connections joined by a pair of emulated links."""

    def __init__(self, prof=NetProfile(1000, 0, 0.0, 0.0, 1e9), drop_ab=None, min_rto_us=25_000):
        self.sched = VirtualScheduler()
        self.ab = EmuLink(prof, "ab", drop_filter=drop_ab)
        self.ba = EmuLink(prof.with_(loss_rate=0.0) if prof.loss_rate else prof, "ba")
        self.a = SmtConnection(self.sched, lambda w: self.ab.send(w, self.sched.now_us), min_rto_us=min_rto_us)
        self.b = SmtConnection(self.sched, lambda w: self.ba.send(w, self.sched.now_us), min_rto_us=min_rto_us)
        self.at_b = []  # (time, event)
        self.at_a = []
        self.ab.attach(self.sched, lambda d: self.at_b.extend((self.sched.now_us, e) for e in self.b.on_datagram(d)))
        self.ba.attach(self.sched, lambda d: self.at_a.extend((self.sched.now_us, e) for e in self.a.on_datagram(d)))

    def received(self, sid):
        return b"".join(e.data for _, e in self.at_b if isinstance(e, StreamData) and e.stream_id == sid)


def reassemble_oracle(frames):
    """Sort received STREAM frames by offset and keep the contiguous prefix."""
    out = bytearray()
    for f in sorted(frames, key=lambda f: f.offset):
        if f.offset > len(out):
            break
        out += f.data[len(out) - f.offset :]
    return bytes(out)


# --- wire format -----------------------------------------------------------------


@pytest.mark.parametrize(
    "frame",
    [
        StreamFrame(1, 0, False, b"abc"),
        StreamFrame(2**32 - 1, 2**40, True, b""),
        AckFrame(3, 1200),
        AckFrame(3, 10, ((20, 30), (40, 50))),
        DatagramFrame(b"hello"),
        PingFrame(),
    ],
)
def test_frame_round_trip(frame):
    wire = encode_frame(frame)
    assert decode_frame(wire) == frame


def test_frame_sizes():
    assert len(encode_frame(StreamFrame(1, 0, False, b"x" * 100))) == 16 + 100
    assert encode_frame(AckFrame(1, 0x0102)) == bytes([1, 0, 0, 0, 1]) + (0x0102).to_bytes(8, "big")
    assert len(encode_frame(AckFrame(1, 0, ((5, 9),)))) == 14 + 16
    assert len(encode_frame(DatagramFrame(b"xy"))) == 3 + 2


@pytest.mark.parametrize(
    "wire",
    [b"", b"\x09", b"\x00\x00", encode_frame(StreamFrame(1, 0, False, b"abc"))[:-1], b"\x03\x00",
     encode_frame(AckFrame(1, 10, ((20, 30),)))[:-3], encode_frame(AckFrame(1, 50)) + b"\x00",
     encode_frame(AckFrame(1, 10, ((20, 30),)))[:14 - 1] + b"\x00"],
)
def test_malformed_frames(wire):
    with pytest.raises(MalformedError):
        decode_frame(wire)


def test_ack_ranges_must_lie_above_cum():
    bad = encode_frame(AckFrame(1, 10, ((5, 30),)))
    with pytest.raises(MalformedError):
        decode_frame(bad)


def test_range_helpers():
    r = []
    for a, b in [(10, 20), (30, 40), (20, 30), (50, 60), (55, 70)]:
        _add_range(r, a, b)
    assert r == [[10, 40], [50, 70]]
    t = tuple(tuple(x) for x in r)
    assert _covered(t, 10, 40) and _covered(t, 55, 60)
    assert not _covered(t, 35, 45) and not _covered(t, 0, 5)


# --- connection behaviour -------------------------------------------------------


def test_stream_ids_increment_and_unique():
    c = SmtConnection(VirtualScheduler(), lambda w: None)
    assert [c.open_stream() for _ in range(3)] == [1, 2, 3]
    ids = {c.open_stream() for _ in range(100_000)}
    assert len(ids) == 100_000


def test_chunking_offsets():
    sent = []
    c = SmtConnection(VirtualScheduler(), sent.append)
    sid = c.open_stream()
    c.stream_send(sid, b"z" * 3000)
    frames = [decode_frame(w) for w in sent]
    assert [f.offset for f in frames] == [0, 1200, 2400]
    assert [len(f.data) for f in frames] == [1200, 1200, 600]


def test_fin_on_empty_stream_and_send_after_fin():
    sent = []
    c = SmtConnection(VirtualScheduler(), sent.append)
    sid = c.open_stream()
    c.stream_send(sid, b"", fin=True)
    assert decode_frame(sent[0]) == StreamFrame(sid, 0, True, b"")
    with pytest.raises(ProtocolError):
        c.stream_send(sid, b"more")
    with pytest.raises(ProtocolError):
        c.stream_send(99, b"x")
    with pytest.raises(PreconditionError):
        SmtConnection(VirtualScheduler(), sent.append, mtu_payload=0)


def test_in_order_delivery_and_fin():
    p = Pair()
    sid = p.a.open_stream()
    p.a.stream_send(sid, b"q" * 2500, fin=True)
    p.sched.run()
    data_events = [e for _, e in p.at_b if isinstance(e, StreamData)]
    assert [len(e.data) for e in data_events] == [1200, 1200, 100]
    assert isinstance(p.at_b[-1][1], StreamFin)
    assert p.a.acked_offset(sid) == 2501  # FIN counts as one
    assert p.a.unacked_frames(sid) == 0
    assert any(isinstance(e, AckProcessed) for _, e in p.at_a)


def test_swapped_frames_reassemble_oracle():
    sched = VirtualScheduler()
    sent = []
    tx = SmtConnection(sched, sent.append)
    rx = SmtConnection(sched, lambda w: None)
    sid = tx.open_stream()
    tx.stream_send(sid, bytes(range(256)) * 10)
    frames = [decode_frame(w) for w in sent]
    assert rx.on_datagram(sent[1]) == []
    events = rx.on_datagram(sent[0])
    assert events == [StreamData(sid, reassemble_oracle(frames[:2]))]
    assert len(events[0].data) == 2400
    assert rx.on_datagram(sent[0]) == []  # duplicate ignored
    assert rx.delivered_offset(sid) == 2400


def test_datagrams_pass_through():
    p = Pair()
    p.a.send_datagram(b"unreliable")
    p.sched.run()
    assert [e for _, e in p.at_b] == [DatagramIn(b"unreliable")]


def test_malformed_datagram_yields_connection_error():
    c = SmtConnection(VirtualScheduler(), lambda w: None)
    (ev,) = c.on_datagram(b"\xff")
    assert isinstance(ev, ConnectionError)


def test_conflicting_final_size():
    c = SmtConnection(VirtualScheduler(), lambda w: None)
    c.on_datagram(encode_frame(StreamFrame(1, 0, True, b"abc")))
    (ev,) = c.on_datagram(encode_frame(StreamFrame(1, 0, True, b"abcd")))
    assert isinstance(ev, ConnectionError)


def test_single_drop_stalls_until_rto():
    """Offsets >= 1200 are held back until the lost frame comes back one RTO later.

    Oracle on a 1 ms, 1 Gb/s link with no RTT sample yet: the RTO is the
    25 ms floor, measured from when the last frame of the write left the sender.
    """
    dropped = []

    def drop_once(d, now):
        f = decode_frame(d)
        if isinstance(f, StreamFrame) and f.offset == 1200 and not dropped:
            dropped.append(now)
            return True
        return False

    p = Pair(drop_ab=drop_once)
    sid = p.a.open_stream()
    p.a.stream_send(sid, b"s" * 3000)
    p.sched.run()
    events = [(t, e) for t, e in p.at_b if isinstance(e, StreamData)]
    assert len(events) == 2
    (t0, first), (t1, rest) = events
    assert len(first.data) == 1200 and len(rest.data) == 1800
    assert t0 == pytest.approx(1000 + 10, abs=2)  # delay + serialization
    wire = [16 + 1200, 16 + 1200, 16 + 600]
    write_done = dropped[0] + sum(wire) * 8 / 1e3  # serialization at 1 Gb/s
    expect = write_done + 25_000 + wire[1] * 8 / 1e3 + 1000
    assert t1 == pytest.approx(expect, abs=1)
    assert p.received(sid) == b"s" * 3000
    assert len(p.a.retransmissions) == 1 and p.a.retransmissions[0].offset == 1200


def test_rto_tracks_srtt():
    p = Pair(NetProfile(10_000, 0, 0.0, 0.0, 1e9))
    sid = p.a.open_stream()
    p.a.stream_send(sid, b"x" * 100)
    p.sched.run()
    assert p.a.srtt_us == pytest.approx(20_000, abs=10)
    assert p.a.rto_us == pytest.approx(80_000, abs=40)


@pytest.mark.parametrize("loss", [0.0, 0.005, 0.05])
@pytest.mark.parametrize("seed", [1, 2, 3])
def test_exact_delivery_under_loss(loss, seed):
    """Every stream delivers exactly the bytes sent, once, in order."""
    prof = NetProfile(2000, 1000, loss, 0.0, 300e6, seed=seed)
    p = Pair(prof)
    p.ba.profile = prof.with_(seed=seed + 100)  # ACKs are lost too
    rng = random.Random(seed)
    sent = {}
    for k in range(20):
        sid = p.a.open_stream()
        payload = rng.randbytes(rng.randint(0, 60_000))
        sent[sid] = payload
        p.sched.call_at(k * 16_667, p.a.stream_send, sid, payload, True)
    p.sched.run()
    for sid, payload in sent.items():
        assert p.received(sid) == payload
        fins = [e for _, e in p.at_b if isinstance(e, StreamFin) and e.stream_id == sid]
        assert len(fins) == 1
    if loss == 0:
        assert p.a.retransmissions == []


def test_streams_are_independent():
    """Loss on one stream does not delay another stream's delivery."""

    def run(drop):
        def filt(d, now):
            f = decode_frame(d)
            return drop and isinstance(f, StreamFrame) and f.stream_id == 1 and f.offset == 0 and now < 1

        p = Pair(drop_ab=filt)
        s1, s2 = p.a.open_stream(), p.a.open_stream()
        p.a.stream_send(s1, b"a" * 500)
        p.a.stream_send(s2, b"b" * 500)
        p.sched.run()
        return [(t, e) for t, e in p.at_b if isinstance(e, StreamData)]

    clean, lossy = run(False), run(True)
    t2_clean = [t for t, e in clean if e.stream_id == 2]
    t2_lossy = [t for t, e in lossy if e.stream_id == 2]
    assert t2_clean == t2_lossy
    t1_lossy = [t for t, e in lossy if e.stream_id == 1][0]
    assert t1_lossy > 25_000


def test_close_cancels_timers():
    sched = VirtualScheduler()
    c = SmtConnection(sched, lambda w: None)
    sid = c.open_stream()
    c.stream_send(sid, b"x")
    c.close()
    sched.run()
    assert c.retransmissions == []
