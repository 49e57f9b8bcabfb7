import io
import struct
import zlib

import oracles
import pytest

from rrsb.errors import MalformedError, OrderingError, PreconditionError, TransportError
from rrsb.media import (
    AU_HEADER_SIZE,
    RECORD_OVERHEAD,
    CollectingSink,
    Encoder,
    EncoderConfig,
    FileSink,
    FrameSource,
    VideoConfig,
    decode_verify,
    deserialize_au,
    encode,
    frame_pattern,
    ingest_inproc,
    ingest_pipe,
    iter_records,
    make_access_unit,
    pts_for,
    read_raw,
    read_record,
    serialize_au,
    synthesize_frame,
    write_raw,
)

SMALL = VideoConfig(width=64, height=32, seed=7)


def test_frame_pattern_depends_on_seq_and_is_reproducible():
    a = synthesize_frame(0, SMALL, 0).payload
    b = synthesize_frame(1, SMALL, 0).payload
    assert a != b
    assert a == frame_pattern(7, 0, SMALL.frame_bytes)
    assert len(a) == 64 * 32 * 3 // 2


def test_negative_seq_rejected():
    with pytest.raises(PreconditionError):
        synthesize_frame(-1, SMALL, 0)


@pytest.mark.parametrize(
    "bitrate,budget,key,p",
    [
        # frozen from oracles.gop_budget / oracles.frame_sizes
        (10_000_000, 104_166, 44_642, 14_880),
        (1_000_000, 10_416, 4_464, 1_488),
    ],
)
def test_gop_budget_and_weights(bitrate, budget, key, p):
    cfg = EncoderConfig(bitrate_bps=bitrate)
    assert oracles.gop_budget(bitrate, 5, 60) == budget
    assert oracles.frame_sizes(bitrate, 5, 60) == (key, p)
    assert cfg.gop_budget_bytes == budget
    assert (cfg.keyframe_bytes, cfg.p_frame_bytes) == (key, p)
    assert [cfg.frame_bytes(s) for s in range(6)] == [key, p, p, p, p, key]
    assert key + 4 * p <= budget


def test_too_low_bitrate_rejected():
    with pytest.raises(PreconditionError):
        EncoderConfig(bitrate_bps=1000)


@pytest.mark.parametrize("seq", [0, 1, 2, 3, 59, 60, 61, 12345])
@pytest.mark.parametrize("fps", [24, 30, 60, 90])
def test_pts_matches_rational_rounding(seq, fps):
    assert pts_for(seq, fps) == oracles.pts_90k(seq, fps)


def test_access_unit_header_layout():
    cfg = EncoderConfig(bitrate_bps=1_000_000)
    au = make_access_unit(3, 123_456_789, cfg, seed=9)
    head = au.payload[:21]
    magic, ver, seq, cap, plen = struct.unpack(">4sBIQI", head)
    assert (magic, ver, seq, cap, plen) == (b"RRAU", 1, 3, 123_456_789, 1488)
    assert struct.unpack(">I", au.payload[21:25])[0] == zlib.crc32(head)
    assert AU_HEADER_SIZE == 25
    assert not au.keyframe and au.pts_90k == au.dts_90k == 4500


def test_decode_verify_accepts_and_rejects():
    au = make_access_unit(5, 1000, EncoderConfig(), seed=1)
    ok = decode_verify(au.payload, 1)
    assert ok.verified and ok.seq == 5 and ok.capture_ts_us == 1000
    assert not decode_verify(au.payload, 2).verified
    flipped = bytearray(au.payload)
    flipped[-1] ^= 1
    assert not decode_verify(bytes(flipped), 1).verified
    bad_crc = bytearray(au.payload)
    bad_crc[10] ^= 0xFF
    assert not decode_verify(bytes(bad_crc), 1).verified
    with pytest.raises(MalformedError):
        decode_verify(au.payload[:10], 1)
    with pytest.raises(MalformedError):
        decode_verify(b"XXXX" + au.payload[4:], 1)


def test_encoder_enforces_order():
    enc = Encoder(EncoderConfig(), seed=0)
    enc.encode(synthesize_frame(0, SMALL, 0))
    with pytest.raises(OrderingError):
        enc.encode(synthesize_frame(2, SMALL, 0))
    with pytest.raises(PreconditionError):
        encode(synthesize_frame(1, SMALL, 0), EncoderConfig(gop_length=4), enc)


def test_record_round_trip_and_length_field():
    au = make_access_unit(11, 42, EncoderConfig(), seed=3)
    rec = serialize_au(au)
    # length prefix (4) + seq, pts, dts (12) + keyframe flag (1) + capture (8)
    assert RECORD_OVERHEAD == 25
    assert struct.unpack(">I", rec[:4])[0] == len(rec) == 25 + len(au.payload)
    assert deserialize_au(rec) == au
    assert read_record(io.BytesIO(rec)) == rec
    assert read_record(io.BytesIO(b"")) is None
    with pytest.raises(MalformedError):
        read_record(io.BytesIO(rec[:-1]))
    with pytest.raises(MalformedError):
        deserialize_au(rec[:-1])


def test_raw_frame_pipe_format():
    buf = io.BytesIO()
    frames = [synthesize_frame(i, SMALL, 100 + i) for i in range(3)]
    for f in frames:
        write_raw(buf, f)
    buf.seek(0)
    got = [read_raw(buf) for _ in range(3)]
    assert [(g.seq, g.capture_ts_us, g.width, g.height, bytes(g.payload)) for g in got] == [
        (f.seq, f.capture_ts_us, f.width, f.height, f.payload) for f in frames
    ]
    assert read_raw(buf) is None


def _clock():
    t = iter(range(0, 10**9, 16_667))
    return lambda: next(t)


@pytest.mark.parametrize("mover", [ingest_inproc, ingest_pipe])
def test_ingest_modes_deliver_every_frame_in_order(mover):
    sink = CollectingSink()
    fps = mover(FrameSource(SMALL, EncoderConfig(), clock_us=_clock()), sink, 40)
    assert fps > 0
    assert [au.seq for au in sink.items] == list(range(40))
    assert all(decode_verify(au.payload, 7).verified for au in sink.items)


def test_pipe_output_equals_inproc_output(tmp_path):
    outs = []
    for name, mover in (("a", ingest_inproc), ("b", ingest_pipe)):
        sink = FileSink(tmp_path / name)
        mover(FrameSource(SMALL, EncoderConfig(), clock_us=_clock()), sink, 30)
        sink.close()
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]
    assert [au.seq for au in iter_records(outs[0])] == list(range(30))


def test_ingest_accepts_plain_callable():
    for mover in (ingest_inproc, ingest_pipe):
        enc = Encoder()
        seqs = iter(range(100))
        sink = CollectingSink()
        mover(lambda: enc.encode_meta(next(seqs), 0), sink, 10)
        assert [a.seq for a in sink.items] == list(range(10))


def test_ingest_surfaces_producer_failure():
    def broken():
        raise RuntimeError("boom")

    for mover in (ingest_inproc, ingest_pipe):
        with pytest.raises(TransportError):
            mover(broken, CollectingSink(), 5)
