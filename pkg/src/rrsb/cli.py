"""Command-line harness.

    rrsb bench latency --path moq --profile wifi --duration 30 --seed 1
    rrsb bench fps --ingest pipe --res 1920x1080 --frames 1200
    rrsb report --format md --input out/report.json
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

from .bench import BenchReport, bench_fps, parse_resolution, report, stats_for
from .errors import RrsbError
from .netem import load_profiles, profile
from .paths import ProtocolPath, RunConfig, run_path
from .player import PlayerModelConfig

PATHS = [p.value for p in ProtocolPath]


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rrsb", description="Remote-rendering delivery testbed")
    sub = ap.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("bench", help="run benchmarks")
    bsub = bench.add_subparsers(dest="kind", required=True)

    lat = bsub.add_parser("latency", help="end-to-end frame latency per path and profile")
    lat.add_argument("--path", action="append", choices=PATHS, help="repeatable; default all")
    lat.add_argument("--profile", action="append", help="repeatable; default wifi")
    lat.add_argument("--profiles-file", help="JSON file of extra named profiles")
    lat.add_argument("--loss-rate", type=float, help="override the profile loss rate")
    lat.add_argument("--duration", type=float, default=30.0)
    lat.add_argument("--seed", type=int)
    lat.add_argument("--realtime", action="store_true", help="wall clock and loopback sockets")
    lat.add_argument("--ingest", choices=["inproc", "pipe"], default="inproc")
    lat.add_argument("--buffer-target", type=float, help="player buffer target in seconds (DASH paths)")
    lat.add_argument("--jitter-target-ms", type=float, help="jitter buffer target (RTP and MoQ paths)")
    lat.add_argument("--segment", type=float, default=2.0, help="segment duration in seconds")
    lat.add_argument("--fragment", type=float, default=0.5, help="LL-DASH fragment duration in seconds")
    lat.add_argument("--parallel", action="store_true", help="run independent runs in separate processes")
    lat.add_argument("--out", default="out")
    lat.add_argument("--config", help="JSON object whose keys override any flag")

    fps = bsub.add_parser("fps", help="ingest throughput")
    fps.add_argument("--ingest", action="append", choices=["inproc", "pipe"], help="repeatable; default both")
    fps.add_argument("--res", action="append", help="WxH, repeatable; default 1920x1080")
    fps.add_argument("--frames", type=int, default=1200)
    fps.add_argument("--repeats", type=int, default=1)
    fps.add_argument("--seed", type=int)
    fps.add_argument("--out", default="out")
    fps.add_argument("--config", help="JSON object whose keys override any flag")

    rep = sub.add_parser("report", help="render a saved report")
    rep.add_argument("--format", choices=["md", "csv", "json"], default="md")
    rep.add_argument("--input", default=os.path.join("out", "report.json"))
    rep.add_argument("--config", help="JSON object whose keys override any flag")
    return ap


def _apply_config(args: argparse.Namespace) -> argparse.Namespace:
    if not args.config:
        return args
    with open(args.config) as fh:
        overrides = json.load(fh)
    if not isinstance(overrides, dict):
        raise SystemExit("config file must hold a JSON object")
    for key, value in overrides.items():
        dest = key.replace("-", "_")
        if dest not in vars(args) or dest in ("command", "kind", "config"):
            raise SystemExit(f"config key {key!r} does not match any option")
        setattr(args, dest, value)
    return args


def _seed(args) -> int:
    if args.seed is not None:
        return int(args.seed)
    return int(os.environ.get("RRSB_SEED", "0"))


def _load_report(path: str) -> BenchReport:
    if os.path.exists(path):
        with open(path) as fh:
            return BenchReport.from_json(fh.read())
    return BenchReport()


def _save_report(rep: BenchReport, out: str) -> str:
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "report.json")
    merged = _load_report(path).merge(rep)
    with open(path, "w") as fh:
        fh.write(merged.to_json())
    return path


def _one_run(job):
    path, prof, cfg, duration, seed, out = job
    result = run_path(path, prof, cfg, duration, seed)
    run_dir = os.path.join(out, f"{path}-{prof.name}")
    os.makedirs(run_dir, exist_ok=True)
    result.write_samples_csv(os.path.join(run_dir, "samples.csv"))
    result.write_run_json(os.path.join(run_dir, "run.json"))
    return stats_for(result)


def _latency(args) -> int:
    seed = _seed(args)
    extra = load_profiles(args.profiles_file) if args.profiles_file else None
    cfg = RunConfig(
        segment_duration_s=args.segment,
        fragment_duration_s=args.fragment,
        realtime=args.realtime,
        ingest=args.ingest,
    )
    if args.buffer_target is not None:
        cfg = replace(cfg, player=PlayerModelConfig(buffer_target_s=args.buffer_target))
    if args.jitter_target_ms is not None:
        cfg = replace(cfg, jitter=replace(cfg.jitter, target_delay_ms=args.jitter_target_ms))
    jobs = []
    for name in args.profile or ["wifi"]:
        prof = profile(name, extra)
        if args.loss_rate is not None:
            prof = prof.with_(loss_rate=args.loss_rate)
        for path in args.path or PATHS:
            jobs.append((path, prof, cfg, args.duration, seed, args.out))

    rep = BenchReport(seed=seed, config={"duration_s": args.duration, "realtime": args.realtime, "ingest": args.ingest})
    failures = []
    if args.parallel and len(jobs) > 1:
        with ProcessPoolExecutor() as pool:
            futures = [pool.submit(_one_run, j) for j in jobs]
            outcomes = []
            for f in futures:
                try:
                    outcomes.append(f.result())
                except Exception as e:
                    outcomes.append(e)
    else:
        outcomes = []
        for j in jobs:
            try:
                outcomes.append(_one_run(j))
            except Exception as e:
                outcomes.append(e)
    for (path, prof, *_), res in zip(jobs, outcomes):
        if isinstance(res, Exception):
            failures.append(f"{path}/{prof.name}: {type(res).__name__}: {res}")
        else:
            rep.latency[(path, prof.name)] = res
    if rep.latency:
        _save_report(rep, args.out)
        print(report(rep, "md"))
    for line in failures:
        print(f"error: {line}", file=sys.stderr)
    return 1 if failures else 0


def _fps(args) -> int:
    seed = _seed(args)
    rep = BenchReport(seed=seed, config={"frames": args.frames, "repeats": args.repeats})
    failures = []
    for res in args.res or ["1920x1080"]:
        w, h = parse_resolution(res)
        for ingest in args.ingest or ["inproc", "pipe"]:
            try:
                rep.fps[(ingest, f"{w}x{h}")] = bench_fps(ingest, (w, h), args.frames, args.repeats, seed=seed)
            except (RrsbError, OSError) as e:
                failures.append(f"{ingest}/{res}: {type(e).__name__}: {e}")
    if rep.fps:
        _save_report(rep, args.out)
        print(report(rep, "md"))
    for line in failures:
        print(f"error: {line}", file=sys.stderr)
    return 1 if failures else 0


def _report(args) -> int:
    if not os.path.exists(args.input):
        print(f"error: no report at {args.input}", file=sys.stderr)
        return 1
    print(report(_load_report(args.input), args.format))
    return 0


def main(argv=None) -> int:
    args = _apply_config(_parser().parse_args(argv))
    try:
        if args.command == "report":
            return _report(args)
        if args.kind == "latency":
            return _latency(args)
        return _fps(args)
    except RrsbError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
