import threading
import urllib.error
import urllib.request

import oracles
import pytest

from rrsb.errors import MalformedError, PreconditionError
from rrsb.http import (
    LAST_CHUNK,
    BodyData,
    Origin,
    OriginConnection,
    Request,
    RequestParser,
    ResponseEnd,
    ResponseHead,
    ResponseParser,
    encode_chunk,
    encode_request,
    encode_response_head,
    make_http_server,
)
from rrsb.isobmff import parse_fragment
from rrsb.media import EncoderConfig, make_access_unit
from rrsb.mpd import MpdConfig
from rrsb.paths import SegmentPackager
from rrsb.player import DashPlayer, Fetch, PlayerModelConfig
from rrsb.sim import VirtualScheduler

ENC = EncoderConfig(bitrate_bps=1_000_000)


# --- parsers ---------------------------------------------------------------------


def test_request_parser_incremental():
    p = RequestParser()
    wire = encode_request("/live.mpd") + encode_request("/seg-1.m4s")
    got = []
    for i in range(len(wire)):
        got += p.feed(wire[i : i + 1])
    assert [(r.method, r.path, r.headers["host"]) for r in got] == [("GET", "/live.mpd", "origin"), ("GET", "/seg-1.m4s", "origin")]
    with pytest.raises(MalformedError):
        RequestParser().feed(b"NONSENSE\r\n\r\n")


def test_response_parser_content_length_and_chunked():
    wire = encode_response_head(200, {"Content-Length": "5"}) + b"hello"
    wire += encode_response_head(200, {"Transfer-Encoding": "chunked"}) + encode_chunk(b"ab") + encode_chunk(b"cde") + LAST_CHUNK
    wire += encode_response_head(404, {"Content-Length": "0"})
    p = ResponseParser()
    events = []
    for i in range(0, len(wire), 3):
        events += p.feed(wire[i : i + 3])
    assert events == [
        ResponseHead(200, {"content-length": "5"}), BodyData(b"hello"), ResponseEnd(),
        ResponseHead(200, {"transfer-encoding": "chunked"}), BodyData(b"ab"), BodyData(b"cde"), ResponseEnd(),
        ResponseHead(404, {"content-length": "0"}), ResponseEnd(),
    ]
    with pytest.raises(MalformedError):
        ResponseParser().feed(b"HTTP/1.1 200 OK\r\nTransfer-Encoding: chunked\r\n\r\nzz\r\n")


# --- origin ----------------------------------------------------------------------


def _get(origin, path, now=0):
    return origin.handle(Request("GET", path, {}), now)


def test_dash_origin_serves_only_complete_segments():
    o = Origin(MpdConfig())
    assert _get(o, "/live.mpd").status == 200
    assert _get(o, "/init.mp4").body == o.init
    assert _get(o, "/seg-1.m4s").status == 404
    o.add_chunk(1, b"part", last=False)
    assert _get(o, "/seg-1.m4s").status == 404
    o.add_chunk(1, b"rest", last=True)
    r = _get(o, "/seg-1.m4s")
    assert (r.status, r.body) == (200, b"partrest")
    assert _get(o, "/seg-0.m4s").status == 404
    assert _get(o, "/nope").status == 404
    assert o.handle(Request("POST", "/live.mpd", {}), 0).status == 405
    with pytest.raises(PreconditionError):
        o.add_chunk(1, b"more", last=False)


def test_ll_origin_admits_early_and_streams_chunks():
    """Request for segment 1 at t=0.1 s is admitted; first chunk lands at 0.5 s."""
    cfg = MpdConfig(low_latency=True)
    o = Origin(cfg)
    sched = VirtualScheduler()
    received = []
    parser = ResponseParser()
    conn = OriginConnection(o, lambda b: received.extend((sched.now_us, e) for e in parser.feed(b)), lambda: sched.now_us)
    assert _get(o, "/seg-2.m4s", now=100_000).status == 404  # not yet available
    sched.call_at(100_000, conn.on_bytes, encode_request("/seg-1.m4s"))
    for k in range(4):
        sched.call_at(500_000 * (k + 1), o.add_chunk, 1, bytes([k]) * 10, k == 3)
    sched.run()
    head_t, head = received[0]
    assert head_t == 100_000 and head.status == 200
    bodies = [(t, e.data) for t, e in received if isinstance(e, BodyData)]
    assert [t for t, _ in bodies] == [500_000, 1_000_000, 1_500_000, 2_000_000]
    assert isinstance(received[-1][1], ResponseEnd)
    assert conn.requests == [(100_000, "/seg-1.m4s", 200)]


def test_origin_connection_pipelines_requests():
    o = Origin(MpdConfig())
    o.add_segment(1, b"one")
    out = []
    parser = ResponseParser()
    conn = OriginConnection(o, lambda b: out.extend(parser.feed(b)), lambda: 0)
    conn.on_bytes(encode_request("/seg-1.m4s") + encode_request("/seg-2.m4s"))
    assert [e.status for e in out if isinstance(e, ResponseHead)] == [200, 404]


def test_real_tcp_server_serves_ll_chunks():
    cfg = MpdConfig(low_latency=True)
    o = Origin(cfg)
    server = make_http_server(o, clock_us=lambda: 10**12, chunk_timeout_s=5)
    t = threading.Thread(target=server.serve_forever, daemon=True)
    t.start()
    try:
        base = f"http://127.0.0.1:{server.server_address[1]}"
        assert b"MPD" in urllib.request.urlopen(base + "/live.mpd").read()
        for k in range(4):
            o.add_chunk(1, bytes([k]) * 3, k == 3)
        body = urllib.request.urlopen(base + "/seg-1.m4s").read()
        assert body == b"".join(bytes([k]) * 3 for k in range(4))
        with pytest.raises(urllib.error.HTTPError):
            urllib.request.urlopen(base + "/seg-0.m4s")
    finally:
        server.shutdown()
        server.server_close()


# --- packager + player -------------------------------------------------------------


def test_packager_units():
    pk = SegmentPackager(MpdConfig(low_latency=True), 60)
    outs = []
    for s in range(240):
        outs += pk.package(make_access_unit(s, 0, ENC, 0))
    assert [(n, last) for n, _, last in outs] == [(1, False), (1, False), (1, False), (1, True)] + [(2, False)] * 3 + [(2, True)]
    assert all(len(parse_fragment(d).payloads) == 30 for _, d, _ in outs)
    dash = SegmentPackager(MpdConfig(), 60)
    outs = []
    for s in range(130):
        outs += dash.package(make_access_unit(s, 0, ENC, 0))
    outs += dash.flush()
    assert [(n, last, len(parse_fragment(d).payloads)) for n, d, last in outs] == [(1, True, 120), (2, True, 10)]


def run_player(low_latency, buffer_target_s, seconds=12, seg=2.0, frag=0.5, fps=60, gap=None):
    """Zero-delay harness: the player's fetches are answered instantly by an origin
    fed in real (virtual) time by the packager. ``gap`` = (start_s, end_s) withholds
    frames captured in that window from the packager's output until ``end_s``.
    """
    sched = VirtualScheduler()
    mpd_cfg = MpdConfig(seg, frag, low_latency=low_latency)
    origin = Origin(mpd_cfg)
    player = DashPlayer(PlayerModelConfig(buffer_target_s=buffer_target_s), fps, 0, lambda t: t, lambda t: t)
    packager = SegmentPackager(mpd_cfg, fps)
    parser = ResponseParser()
    conn = OriginConnection(origin, lambda b: [player.on_response_event(e, sched.now_us) for e in parser.feed(b)], lambda: sched.now_us)
    held = []

    def publish(items):
        for n, data, last in items:
            origin.add_chunk(n, data, last)

    def capture(seq):
        au = make_access_unit(seq, sched.now_us, ENC, 0)
        items = packager.package(au)
        if gap and gap[0] * 1e6 <= sched.now_us < gap[1] * 1e6:
            held.extend(items)
        else:
            publish(held + items)
            held.clear()
        kick()

    wake = [None]

    def kick():
        fetches, _ = player.step(sched.now_us)
        for f in fetches:
            conn.on_bytes(encode_request(f.path))
        nxt = player.next_wakeup()
        if nxt is not None and (wake[0] is None or wake[0].when != nxt or wake[0].cancelled):
            if wake[0] is not None:
                wake[0].cancel()
            wake[0] = sched.call_at(max(nxt, sched.now_us), kick)

    for seq in range(int(seconds * fps)):
        # capture at frame start; the AU is complete one frame later
        sched.call_at(round((seq + 1) * 1e6 / fps), capture, seq)
    sched.call_at(0, kick)
    sched.run_until(seconds * 1e6 + 20e6)
    return player


def test_dash_startup_waits_for_buffer():
    p = run_player(False, 4.0)
    first = p.displayed[0]
    assert first.seq == 0
    # frame 0 needs its own segment plus 4 s after it
    assert first.display_local_us == pytest.approx(oracles.dash_startup_latency_s(2.0, 4.0) * 1e6, abs=20_000)
    assert first.display_local_us >= 2_000_000  # no earlier than segment availability
    lat = [d.display_local_us - d.capture_ts_us for d in p.displayed]
    assert max(lat) - min(lat) < 20_000  # 1x playout keeps latency constant
    assert [d.seq for d in p.displayed] == list(range(len(p.displayed)))


def test_lldash_startup_uses_fragments():
    p = run_player(True, 1.5)
    first = p.displayed[0]
    assert first.display_local_us == pytest.approx(oracles.lldash_startup_latency_s(0.5, 1.5) * 1e6, abs=20_000)
    assert p.low_latency
    assert p.fetch_log[0][1] == "/live.mpd" and p.fetch_log[1][1] == "/init.mp4"


def test_lldash_beats_dash_with_equal_buffer():
    dash = run_player(False, 4.0)
    ll = run_player(True, 4.0)
    mean = lambda p: sum(d.display_local_us - d.capture_ts_us for d in p.displayed) / len(p.displayed)  # noqa: E731
    assert mean(ll) < mean(dash)


def test_outage_triggers_rebuffer_and_flags_frames():
    p = run_player(True, 1.5, seconds=14, gap=(5.0, 8.0))
    assert p.rebuffers
    flagged = [d for d in p.displayed if d.after_rebuffer]
    assert flagged and flagged[0].seq >= p.rebuffers[0].seq
    assert [d.seq for d in p.displayed] == list(range(len(p.displayed)))


def test_player_config_validation():
    with pytest.raises(PreconditionError):
        PlayerModelConfig(buffer_target_s=0)
    assert PlayerModelConfig.default_for(True).buffer_target_s == 1.5
    assert PlayerModelConfig.default_for(False).buffer_target_s == 4.0


def test_first_action_is_manifest_fetch():
    p = DashPlayer(PlayerModelConfig(), 60, 0, lambda t: t, lambda t: t)
    fetches, events = p.step(0)
    assert fetches == [Fetch("/live.mpd")] and events == []
    assert p.step(1)[0] == []  # one request outstanding at a time
