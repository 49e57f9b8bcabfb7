"""A small HTTP/1.1 subset: GET, 200/404, Content-Length or chunked bodies.

The parsers are incremental and transport-agnostic so the same origin runs
over an SMT stream in simulation and over TCP via :mod:`http.server`.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Iterator, Optional

from .errors import MalformedError, PreconditionError
from .isobmff import TrackConfig, build_init_segment
from .mpd import MpdConfig, availability_time, render_mpd

REASONS = {200: "OK", 400: "Bad Request", 404: "Not Found", 405: "Method Not Allowed"}
MAX_HEADER_BYTES = 16 * 1024
_SEG = re.compile(r"^/seg-(\d+)\.m4s$")


@dataclass(frozen=True)
class Request:
    method: str
    path: str
    headers: dict


def encode_request(path: str, host: str = "origin") -> bytes:
    return f"GET {path} HTTP/1.1\r\nHost: {host}\r\n\r\n".encode()


def encode_response_head(status: int, headers: dict) -> bytes:
    lines = [f"HTTP/1.1 {status} {REASONS.get(status, 'Unknown')}"]
    lines += [f"{k}: {v}" for k, v in headers.items()]
    return ("\r\n".join(lines) + "\r\n\r\n").encode()


def encode_chunk(data: bytes) -> bytes:
    return f"{len(data):x}\r\n".encode() + data + b"\r\n"


LAST_CHUNK = b"0\r\n\r\n"


def _parse_headers(lines: list) -> dict:
    headers = {}
    for line in lines:
        name, sep, value = line.partition(":")
        if not sep:
            raise MalformedError(f"bad header line {line!r}", 0)
        headers[name.strip().lower()] = value.strip()
    return headers


class RequestParser:
    def __init__(self):
        self._buf = b""

    def feed(self, data: bytes) -> list[Request]:
        self._buf += data
        out = []
        while True:
            end = self._buf.find(b"\r\n\r\n")
            if end < 0:
                if len(self._buf) > MAX_HEADER_BYTES:
                    raise MalformedError("request head too large", 0)
                return out
            head, self._buf = self._buf[:end].decode("latin-1"), self._buf[end + 4 :]
            lines = head.split("\r\n")
            parts = lines[0].split(" ")
            if len(parts) != 3 or not parts[2].startswith("HTTP/1."):
                raise MalformedError(f"bad request line {lines[0]!r}", 0)
            out.append(Request(parts[0], parts[1], _parse_headers(lines[1:])))


@dataclass(frozen=True)
class ResponseHead:
    status: int
    headers: dict


@dataclass(frozen=True)
class BodyData:
    data: bytes


@dataclass(frozen=True)
class ResponseEnd:
    pass


class ResponseParser:
    """Incremental response parser yielding head, body pieces and end events.

    With chunked transfer every complete chunk is yielded as one
    :class:`BodyData`, so chunk boundaries survive the transport.
    """

    def __init__(self):
        self._buf = b""
        self._state = "head"
        self._remaining = 0
        self._chunked = False

    def feed(self, data: bytes) -> list:
        self._buf += data
        out = []
        while True:
            if self._state == "head":
                end = self._buf.find(b"\r\n\r\n")
                if end < 0:
                    return out
                head, self._buf = self._buf[:end].decode("latin-1"), self._buf[end + 4 :]
                lines = head.split("\r\n")
                m = re.match(r"^HTTP/1\.\d (\d{3})", lines[0])
                if not m:
                    raise MalformedError(f"bad status line {lines[0]!r}", 0)
                headers = _parse_headers(lines[1:])
                out.append(ResponseHead(int(m.group(1)), headers))
                self._chunked = headers.get("transfer-encoding", "").lower() == "chunked"
                if self._chunked:
                    self._state = "size"
                else:
                    self._remaining = int(headers.get("content-length", "0"))
                    self._state = "body"
            elif self._state == "body":
                if self._remaining == 0:
                    out.append(ResponseEnd())
                    self._state = "head"
                    continue
                if len(self._buf) < self._remaining:
                    return out  # wait for the whole body
                piece, self._buf = self._buf[: self._remaining], self._buf[self._remaining :]
                self._remaining = 0
                out.append(BodyData(piece))
            elif self._state == "size":
                end = self._buf.find(b"\r\n")
                if end < 0:
                    return out
                try:
                    size = int(self._buf[:end].split(b";")[0], 16)
                except ValueError:
                    raise MalformedError("bad chunk size line", 0) from None
                self._buf = self._buf[end + 2 :]
                self._remaining = size
                self._state = "chunk" if size else "trailer"
            elif self._state == "chunk":
                if len(self._buf) < self._remaining + 2:
                    return out
                piece = self._buf[: self._remaining]
                if self._buf[self._remaining : self._remaining + 2] != b"\r\n":
                    raise MalformedError("chunk not terminated by CRLF", self._remaining)
                self._buf = self._buf[self._remaining + 2 :]
                out.append(BodyData(piece))
                self._state = "size"
            elif self._state == "trailer":
                end = self._buf.find(b"\r\n")
                if end < 0:
                    return out
                line, self._buf = self._buf[:end], self._buf[end + 2 :]
                if not line:
                    out.append(ResponseEnd())
                    self._state = "head"


# --- origin ------------------------------------------------------------------


@dataclass
class OriginResponse:
    status: int
    body: bytes = b""
    chunked: bool = False
    segment: Optional[int] = None  # for chunked responses still being produced
    content_type: str = "application/octet-stream"


@dataclass
class _Segment:
    chunks: list = field(default_factory=list)
    complete: bool = False


class Origin:
    """Live segment store answering ``/live.mpd``, ``/init.mp4``, ``/seg-N.m4s``.

    The packager calls :meth:`add_chunk` as fragments are produced. Plain DASH
    only serves complete segments; low-latency mode admits a request once the
    segment's URL is available and streams its fragments as they appear.
    """

    def __init__(self, mpd_cfg: MpdConfig = MpdConfig(), track: TrackConfig = TrackConfig()):
        self.mpd_cfg = mpd_cfg
        self.track = track
        self.init = build_init_segment(track)
        self._segments: dict[int, _Segment] = {}
        self._listeners: list = []
        self.cond = threading.Condition()

    @property
    def low_latency(self) -> bool:
        return self.mpd_cfg.low_latency

    def add_chunk(self, n: int, data: bytes, last: bool) -> None:
        with self.cond:
            seg = self._segments.setdefault(n, _Segment())
            if seg.complete:
                raise PreconditionError(f"segment {n} is already complete")
            seg.chunks.append(data)
            seg.complete = last
            self.cond.notify_all()
            listeners = list(self._listeners)
        for fn in listeners:
            fn(n, len(seg.chunks) - 1, data, last)

    def add_segment(self, n: int, data: bytes) -> None:
        self.add_chunk(n, data, True)

    def on_chunk(self, fn: Callable[[int, int, bytes, bool], None]) -> None:
        self._listeners.append(fn)

    def segment_chunks(self, n: int) -> tuple[list, bool]:
        with self.cond:
            seg = self._segments.get(n)
            return (list(seg.chunks), seg.complete) if seg else ([], False)

    def handle(self, request: Request, now_us: float) -> OriginResponse:
        if request.method != "GET":
            return OriginResponse(405)
        path = request.path.split("?", 1)[0]
        if path == "/live.mpd":
            return OriginResponse(200, render_mpd(self.mpd_cfg).encode(), content_type="application/dash+xml")
        if path == "/init.mp4":
            return OriginResponse(200, self.init, content_type="video/mp4")
        m = _SEG.match(path)
        if not m or int(m.group(1)) < 1:
            return OriginResponse(404)
        n = int(m.group(1))
        chunks, complete = self.segment_chunks(n)
        if not self.low_latency:
            if complete:
                return OriginResponse(200, b"".join(chunks), content_type="video/iso.segment")
            return OriginResponse(404)
        if now_us < availability_time(n, self.mpd_cfg) and not chunks:
            return OriginResponse(404)
        return OriginResponse(200, chunked=True, segment=n, content_type="video/iso.segment")


def http_origin(origin: Origin, request: Request, now_us: float) -> OriginResponse:
    return origin.handle(request, now_us)


class OriginConnection:
    """Serves one client over a byte pipe such as an SMT stream pair.

    Requests are answered in order; a chunked response keeps the connection
    busy until its segment completes.
    """

    def __init__(self, origin: Origin, write: Callable[[bytes], None], clock_us: Callable[[], float]):
        self.origin = origin
        self.write = write
        self.clock_us = clock_us
        self._parser = RequestParser()
        self._queue: list = []
        self._streaming: Optional[tuple] = None  # (segment, chunks sent)
        self.requests: list = []
        origin.on_chunk(self._on_chunk)

    def on_bytes(self, data: bytes) -> None:
        self._queue.extend(self._parser.feed(data))
        self._pump()

    def _pump(self) -> None:
        while self._queue and self._streaming is None:
            req = self._queue.pop(0)
            resp = self.origin.handle(req, self.clock_us())
            self.requests.append((self.clock_us(), req.path, resp.status))
            if not resp.chunked:
                self.write(encode_response_head(resp.status, {
                    "Content-Type": resp.content_type, "Content-Length": str(len(resp.body)),
                }) + resp.body)
                continue
            self.write(encode_response_head(200, {"Content-Type": resp.content_type, "Transfer-Encoding": "chunked"}))
            self._streaming = (resp.segment, 0)
            self._flush()

    def _flush(self) -> None:
        n, sent = self._streaming
        chunks, complete = self.origin.segment_chunks(n)
        out = b"".join(encode_chunk(c) for c in chunks[sent:])
        if complete:
            out += LAST_CHUNK
            self._streaming = None
        else:
            self._streaming = (n, len(chunks))
        if out:
            self.write(out)
        if self._streaming is None:
            self._pump()

    def _on_chunk(self, n, k, data, last) -> None:
        if self._streaming is not None and self._streaming[0] == n:
            self._flush()


# --- real sockets ------------------------------------------------------------


def _iter_live_chunks(origin: Origin, n: int, timeout_s: float) -> Iterator[bytes]:
    sent = 0
    while True:
        with origin.cond:
            ok = origin.cond.wait_for(lambda: len(origin.segment_chunks(n)[0]) > sent or origin.segment_chunks(n)[1], timeout_s)
            chunks, complete = origin.segment_chunks(n)
        if not ok:
            return
        yield from chunks[sent:]
        sent = len(chunks)
        if complete:
            return


def make_http_server(origin: Origin, host: str = "127.0.0.1", port: int = 0, clock_us: Optional[Callable[[], float]] = None, chunk_timeout_s: float = 10.0) -> ThreadingHTTPServer:
    """Bind ``origin`` to a TCP socket; call ``serve_forever`` to run it."""
    import time

    clock = clock_us or (lambda: time.time_ns() / 1000)

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, *args):  # keep test output quiet
            pass

        def do_GET(self):
            resp = origin.handle(Request("GET", self.path, dict(self.headers)), clock())
            self.send_response(resp.status)
            self.send_header("Content-Type", resp.content_type)
            if not resp.chunked:
                self.send_header("Content-Length", str(len(resp.body)))
                self.end_headers()
                self.wfile.write(resp.body)
                return
            self.send_header("Transfer-Encoding", "chunked")
            self.end_headers()
            for chunk in _iter_live_chunks(origin, resp.segment, chunk_timeout_s):
                self.wfile.write(encode_chunk(chunk))
                self.wfile.flush()
            self.wfile.write(LAST_CHUNK)

    return ThreadingHTTPServer((host, port), Handler)
