"""Remote-rendering delivery testbed.

Synthetic timestamped video is pushed through five delivery paths over an
emulated network and per-frame glass-to-glass latency is recorded.
"""

from .bench import BenchReport, LatencyStats, bench_fps, bench_latency, report
from .netem import PRESETS, EmuLink, NetProfile, profile
from .paths import LatencySample, ProtocolPath, RunConfig, RunResult, run_path

__all__ = [
    "BenchReport",
    "EmuLink",
    "LatencySample",
    "LatencyStats",
    "NetProfile",
    "PRESETS",
    "ProtocolPath",
    "RunConfig",
    "RunResult",
    "bench_fps",
    "bench_latency",
    "profile",
    "report",
    "run_path",
]
