import json

import pytest

from rrsb.errors import OversizeError, PreconditionError, UnknownProfileError
from rrsb.netem import (
    PRESETS,
    EmuLink,
    NetProfile,
    dump_profiles,
    load_profiles,
    profile,
)
from rrsb.sim import VirtualScheduler


def test_scheduler_orders_by_time_then_insertion():
    s = VirtualScheduler()
    log = []
    s.call_at(20, log.append, "c")
    s.call_at(10, log.append, "a")
    s.call_at(10, log.append, "b")
    t = s.call_at(15, log.append, "x")
    t.cancel()
    s.run()
    assert log == ["a", "b", "c"]
    assert s.now_us == 20


def test_run_until_stop_and_past_events():
    s = VirtualScheduler()
    hits = []
    for when in (5, 10, 15):
        s.call_at(when, hits.append, when)
    assert s.run_until(100, stop=lambda: len(hits) == 2) is True
    assert s.now_us == 10
    s.call_at(1, hits.append, "late")  # clamped to now
    assert s.next_event_time() == 10
    assert s.run_until(12) is False and s.now_us == 12
    assert hits == [5, 10, "late"]


def test_presets_and_registry(tmp_path):
    assert profile("wifi").one_way_delay_us == 2000
    assert profile("fiveg").one_way_delay_us == 15000
    assert profile("fiveg").one_way_delay_us > profile("wifi").one_way_delay_us
    with pytest.raises(UnknownProfileError):
        profile("lte")
    extra = {"lab": NetProfile(100, 0, 0.0, 0.0, 1e8, name="lab")}
    path = tmp_path / "p.json"
    dump_profiles(extra, path)
    loaded = load_profiles(path)
    assert loaded == extra
    assert profile("lab", loaded) == extra["lab"]
    assert json.loads(path.read_text())["lab"]["one_way_delay_us"] == 100


@pytest.mark.parametrize("bad", [dict(loss_rate=1.5), dict(bandwidth_bps=0), dict(jitter_us=-1)])
def test_profile_validation(bad):
    base = dict(one_way_delay_us=0, jitter_us=0, loss_rate=0.0, reorder_rate=0.0, bandwidth_bps=1e6)
    with pytest.raises(PreconditionError):
        NetProfile(**{**base, **bad})


def test_ideal_link_has_only_serialization_delay():
    link = EmuLink(NetProfile(1000, 0, 0.0, 0.0, 8e6))
    dep = link.send(b"x" * 1000, 0)  # 8000 bits at 8 Mb/s
    assert dep == 1000
    assert link.poll(1999) == []
    assert link.poll(2000) == [b"x" * 1000]


def test_fifo_bandwidth_queueing():
    link = EmuLink(NetProfile(0, 0, 0.0, 0.0, 8e6))
    deps = [link.send(b"y" * 100, 0) for _ in range(3)]
    assert deps == [100, 200, 300]


def test_full_loss_and_oversize():
    link = EmuLink(NetProfile(0, 0, 1.0, 0.0, 1e9))
    dropped = []
    link.on_drop = lambda d, t: dropped.append(d)
    link.send(b"a", 0)
    assert link.poll(10**9) == [] and dropped == [b"a"] and link.dropped == 1
    with pytest.raises(OversizeError):
        link.send(b"z" * 70_000, 0)


def _schedule(prof, n=500):
    link = EmuLink(prof, "fwd")
    out = []
    for i in range(n):
        link.send(i.to_bytes(4, "big"), i * 1000)
    t = 0
    while (nxt := link.next_delivery_us()) is not None:
        t = nxt
        out += [(t, d) for d in link.poll(t)]
    return out, link.dropped


def test_same_seed_same_schedule():
    prof = PRESETS["fiveg"].with_(seed=3, reorder_rate=0.05)
    assert _schedule(prof) == _schedule(prof)
    assert _schedule(prof) != _schedule(prof.with_(seed=4))


def test_loss_rate_roughly_honoured():
    _, dropped = _schedule(PRESETS["wifi"].with_(loss_rate=0.1, seed=1), n=4000)
    assert 300 < dropped < 500


def test_jitter_stays_in_band():
    prof = NetProfile(10_000, 2_000, 0.0, 0.0, 1e12)
    link = EmuLink(prof)
    for i in range(200):
        link.send(b"p", i * 50_000)
        got_at = link.next_delivery_us()
        assert 8_000 <= got_at - i * 50_000 <= 12_000
        link.poll(got_at)


def test_draws_keyed_by_send_time():
    """An extra send at another instant leaves the others' fates unchanged."""
    prof = PRESETS["wifi"].with_(loss_rate=0.3, seed=9)

    def dropped_times(extras):
        link = EmuLink(prof, "l")
        lost = []
        link.on_drop = lambda d, t: lost.append(t) if d == b"q" else None
        for i in range(200):
            link.send(b"q", i * 10_000)
            if extras and i % 7 == 0:
                link.send(b"extra", i * 10_000 + 5000)
        return lost

    assert dropped_times(False) == dropped_times(True)
    assert len(dropped_times(False)) > 30


def test_attach_drives_delivery():
    s = VirtualScheduler()
    link = EmuLink(NetProfile(500, 0, 0.0, 0.0, 1e12))
    got = []
    link.attach(s, lambda d: got.append((s.now_us, d)))
    link.send(b"m", 0)
    s.run()
    assert got == [(501, b"m")]  # serialization time rounds up to a whole microsecond


def test_outage_drops_everything_inside_window():
    link = EmuLink(NetProfile(0, 0, 0.0, 0.0, 1e12), outages=[(100, 200)])
    for t in (50, 100, 150, 199, 200):
        link.send(b"o", t)
    assert link.dropped == 3
