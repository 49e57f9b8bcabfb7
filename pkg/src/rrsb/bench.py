"""Latency and throughput benchmarks plus table output."""

from __future__ import annotations

import csv
import io
import json
import os
import statistics
import tempfile
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Union

import numpy as np

from .errors import InvalidRunError, PreconditionError
from .media import (
    EncoderConfig,
    FileSink,
    FrameSource,
    VideoConfig,
    ingest_inproc,
    ingest_pipe,
)
from .netem import NetProfile
from .paths import ProtocolPath, RunConfig, RunResult, run_path

MIN_FPS_FRAMES = 300
PATH_ORDER = [p.value for p in ProtocolPath]


@dataclass(frozen=True)
class LatencyStats:
    avg_ms: float
    dev_ms: float
    p95_ms: float
    n: int
    skipped: int = 0
    lost: int = 0


def latency_stats(latencies_ms: Iterable[float], skipped: int = 0, lost: int = 0) -> LatencyStats:
    """Mean, sample standard deviation (n-1) and linear-interpolated p95."""
    xs = list(latencies_ms)
    if not xs:
        raise InvalidRunError("run delivered no verified frames")
    dev = statistics.stdev(xs) if len(xs) > 1 else 0.0
    return LatencyStats(statistics.fmean(xs), dev, float(np.percentile(xs, 95)), len(xs), skipped, lost)


def stats_for(result: RunResult) -> LatencyStats:
    return latency_stats(result.latencies_ms(), result.skipped, result.lost)


def bench_latency(
    path,
    profile: NetProfile,
    duration_s: float = 30,
    seed: int = 0,
    cfgs: RunConfig = RunConfig(),
) -> LatencyStats:
    return stats_for(run_path(path, profile, cfgs, duration_s, seed))


def parse_resolution(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise PreconditionError(f"resolution must look like 1920x1080, got {text!r}") from None
    return w, h


def bench_fps(
    ingest: str,
    resolution: Union[str, tuple] = (1920, 1080),
    n_frames: int = 1200,
    repeats: int = 1,
    out_dir: Optional[str] = None,
    seed: int = 0,
) -> float:
    """Best sustained post-encode rate over ``repeats`` trials into a file sink."""
    if n_frames < MIN_FPS_FRAMES:
        raise PreconditionError(f"n_frames must be >= {MIN_FPS_FRAMES}")
    if repeats < 1:
        raise PreconditionError("repeats must be >= 1")
    mover = {"inproc": ingest_inproc, "pipe": ingest_pipe}.get(ingest)
    if mover is None:
        raise PreconditionError(f"unknown ingest mode {ingest!r}")
    w, h = parse_resolution(resolution) if isinstance(resolution, str) else resolution
    video = VideoConfig(width=w, height=h, seed=seed)
    best = 0.0
    with tempfile.TemporaryDirectory(dir=out_dir) as tmp:
        for i in range(repeats):
            sink = FileSink(os.path.join(tmp, f"{ingest}-{i}.au"))
            try:
                best = max(best, mover(FrameSource(video, EncoderConfig()), sink, n_frames))
            finally:
                sink.close()
    return best


# --- reports -----------------------------------------------------------------


@dataclass
class BenchReport:
    latency: dict = field(default_factory=dict)  # (path, profile) -> LatencyStats
    fps: dict = field(default_factory=dict)  # (ingest, "WxH") -> frames/second
    config: dict = field(default_factory=dict)
    seed: int = 0

    def merge(self, other: "BenchReport") -> "BenchReport":
        return BenchReport({**self.latency, **other.latency}, {**self.fps, **other.fps}, {**self.config, **other.config}, other.seed)

    def latency_rows(self) -> list:
        def order(key):
            path, prof = key
            return (PATH_ORDER.index(path) if path in PATH_ORDER else len(PATH_ORDER), path, prof)

        return [(k, self.latency[k]) for k in sorted(self.latency, key=order)]

    def to_json(self) -> str:
        doc = {
            "seed": self.seed,
            "config": self.config,
            "latency": [{"path": p, "profile": q, **asdict(s)} for (p, q), s in self.latency_rows()],
            "fps": [{"ingest": i, "resolution": r, "fps": v} for (i, r), v in sorted(self.fps.items())],
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "BenchReport":
        doc = json.loads(text)
        lat = {}
        for row in doc.get("latency", []):
            row = dict(row)
            key = (row.pop("path"), row.pop("profile"))
            lat[key] = LatencyStats(**row)
        fps = {(r["ingest"], r["resolution"]): r["fps"] for r in doc.get("fps", [])}
        return cls(lat, fps, doc.get("config", {}), doc.get("seed", 0))


_CSV_COLUMNS = ["kind", "path", "profile", "avg_ms", "dev_ms", "p95_ms", "n", "skipped", "lost", "ingest", "resolution", "fps"]


def _report_md(rep: BenchReport) -> str:
    out = []
    profiles = []
    for (_, prof), _ in rep.latency_rows():
        if prof not in profiles:
            profiles.append(prof)
    for prof in profiles:
        out += [f"### {prof}", "", "| Protocol | Latency_avg (ms) | Latency_dev (ms) |", "|---|---:|---:|"]
        for (path, q), s in rep.latency_rows():
            if q == prof:
                out.append(f"| {path} | {round(s.avg_ms)} | {round(s.dev_ms)} |")
        out.append("")
    if rep.fps:
        out += ["### ingest throughput", "", "| Ingest | Resolution | fps |", "|---|---|---:|"]
        for (ingest, res), v in sorted(rep.fps.items()):
            out.append(f"| {ingest} | {res} | {round(v)} |")
        out.append("")
    return "\n".join(out)


def _report_csv(rep: BenchReport) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, _CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for (path, prof), s in rep.latency_rows():
        w.writerow({"kind": "latency", "path": path, "profile": prof, **{k: repr(v) if isinstance(v, float) else v for k, v in asdict(s).items()}})
    for (ingest, res), v in sorted(rep.fps.items()):
        w.writerow({"kind": "fps", "ingest": ingest, "resolution": res, "fps": repr(float(v))})
    return buf.getvalue()


def report(reports, fmt: str = "md") -> str:
    """Render one report, or several merged in order, as md, csv or json."""
    if isinstance(reports, BenchReport):
        reports = [reports]
    merged = BenchReport()
    for r in reports:
        merged = merged.merge(r)
    if fmt == "md":
        return _report_md(merged)
    if fmt == "csv":
        return _report_csv(merged)
    if fmt == "json":
        return merged.to_json()
    raise PreconditionError(f"unknown report format {fmt!r}")
