"""Command line: ``mmtcp run | matrix | trace``.

Examples::

    mmtcp run --config configs/remote_bbr.toml --runs 3 --out-dir out/bbr
    mmtcp matrix --out-dir out/matrix --scale 0.1 --duration 20
    mmtcp trace --config configs/remote_newreno.toml --out-dir out/trace
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys
from pathlib import Path

from . import __version__
from .backend import BACKENDS, available, default_backend
from .config import SCENARIOS, ConfigError, ScenarioConfig, load_config
from .harness import RunReport, experiment_matrix, run, run_matrix
from .report import emit_report


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="first seed (later runs use seed+1, seed+2, ...)")
    p.add_argument("--runs", type=int, help="number of seeds")
    p.add_argument("--out-dir", default="out", help="directory for CSVs and manifest.json (default: out)")
    p.add_argument("--scale", type=float, help="capacity scale factor in (0, 1]")
    p.add_argument("--duration", type=float, dest="duration_s", help="simulated seconds per run")
    p.add_argument("--backend", choices=BACKENDS, help="engine backend (default: compiled if built)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mmtcp", description="TCP congestion control over mmWave links")
    ap.add_argument("--version", action="version", version=f"mmtcp {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one configuration over several seeds")
    p.add_argument("--config", required=True, help="TOML configuration file")
    _common(p)

    p = sub.add_parser("matrix", help="run the full buffer/MSS/CC grid")
    p.add_argument("--scenario", choices=[s for s in SCENARIOS if s != "urban"], default="high_speed")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    _common(p)

    p = sub.add_parser("trace", help="run one configuration with cwnd and queue traces enabled")
    p.add_argument("--config", required=True, help="TOML configuration file")
    p.add_argument("--interval-ms", type=float, default=None, help="sampling interval of the traces")
    _common(p)
    return ap


def _overrides(args) -> dict:
    return {k: getattr(args, k) for k in ("seed", "runs", "scale", "duration_s")}


def _fmt_bps(x: float) -> str:
    return f"{x / 1e6:9.1f}"


def print_summary(reports: list[RunReport], out=None) -> None:
    out = out or sys.stdout
    print(f"{'config':44s} {'goodput Mb/s':>12s} {'RTT ms':>8s} {'retx':>10s} {'RTOs':>6s}", file=out)
    for rep in reports:
        if rep.empty:
            print(f"{rep.config.label():44s} {'(no runs)':>12s}", file=out)
            continue
        for f in rep.flows:
            rtt = "-" if math.isnan(f.mean_rtt_ms) else f"{f.mean_rtt_ms:8.2f}"
            name = rep.config.label() if len(rep.flows) == 1 else f"{rep.config.label()}#{f.flow}:{f.ue_class}"
            print(f"{name:44s} {_fmt_bps(f.goodput_bps):>12s} {rtt:>8s} {f.retransmits:10.0f} {f.rtos:6.1f}",
                  file=out)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    backend = args.backend or default_backend()
    if backend not in available():
        print(f"mmtcp: backend {backend!r} is not built", file=sys.stderr)
        return 2
    try:
        if args.command == "matrix":
            over = {k: v for k, v in _overrides(args).items() if v is not None}
            base = ScenarioConfig(**over)
            base.validate()
            configs = experiment_matrix(args.scenario, **over)

            def progress(rep):
                print(f"done {rep.config.label()}", file=sys.stderr)

            reports = run_matrix(configs, jobs=args.jobs, backend=backend, progress=progress)
        else:
            cfg = load_config(args.config, _overrides(args))
            if args.command == "trace":
                out = dataclasses.replace(cfg.output, trace=True)
                if args.interval_ms is not None:
                    out.trace_interval_ms = args.interval_ms
                cfg = dataclasses.replace(cfg, output=out)
                cfg.validate()
            reports = [run(cfg, backend)]
    except ConfigError as exc:
        print(f"mmtcp: {exc}", file=sys.stderr)
        return 2
    try:
        paths = emit_report(reports, args.out_dir, backend=backend)
    except OSError as exc:
        print(f"mmtcp: {exc}", file=sys.stderr)
        return 1
    print_summary(reports)
    print(f"wrote {len(paths)} files to {Path(args.out_dir)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
