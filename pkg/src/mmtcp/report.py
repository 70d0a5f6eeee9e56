"""CSV and manifest emission for finished runs.

Every file is a plain CSV with a header row. Numbers are written with a
fixed format and rows in a fixed order, so re-running the same configs and
seeds reproduces the files byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

from . import __version__
from .harness import RequirementBox, RunReport, mss_ratio_rows
from .tcp import write_flow_trace

QUEUE_TRACE_HEADER = ("time_s", "buffer_id", "occupancy_bytes", "sojourn_ms", "drop_flag")

SUMMARY_HEADER = (
    "config_id", "cc", "server", "mss", "buffer", "aqm", "goodput_bps", "mean_rtt_ms", "scenario",
    "goodput_std_bps", "rtt_std_ms", "cell_goodput_bps", "jain_index", "tail_drops", "codel_drops",
    "channel_losses", "mean_capacity_bps", "runs",
)
PER_FLOW_HEADER = (
    "config_id", "flow", "ue", "ue_class", "server", "cc", "mss", "buffer", "aqm", "goodput_bps",
    "goodput_std_bps", "goodput_min_bps", "goodput_max_bps", "mean_rtt_ms", "rtt_std_ms", "retransmits",
    "rtos", "max_backoff", "aborted_runs",
)
PER_SEED_HEADER = (
    "config_id", "seed", "flow", "goodput_bps", "mean_rtt_ms", "retransmits", "channel_retransmits",
    "rtos", "max_backoff", "aborted", "mean_capacity_bps", "handovers",
)
RATIO_HEADER = ("scenario", "cc", "server", "buffer", "aqm", "goodput_1400_bps", "goodput_14000_bps", "ratio")
SCATTER_HEADER = (
    "config_id", "flow", "ue_class", "server", "cc", "goodput_bps", "mean_rtt_ms", "in_requirement_box",
    "box_min_goodput_bps", "box_max_delay_ms",
)


def fmt(x) -> str:
    """Stable text for a number; empty for missing values."""
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, int):
        return str(x)
    x = float(x)
    if math.isnan(x):
        return ""
    return f"{x:.6f}" if abs(x) < 1e6 else f"{x:.1f}"


def _buffer_label(rep: RunReport) -> str:
    b = rep.config.buffer
    return b if isinstance(b, str) else str(b)


def _write(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if not isinstance(v, str) else v for v in r])
    return path


def safe_name(config_id: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in config_id)


def write_queue_trace(rows, path: str | Path) -> None:
    """Rows of (time_ns, buffer, occupancy, sojourn_ns, drop_flag) to CSV."""
    _write(Path(path), QUEUE_TRACE_HEADER,
           ((f"{t / 1e9:.6f}", b, occ, f"{soj / 1e6:.3f}", flag) for t, b, occ, soj, flag in rows))


def summary_rows(reports: list[RunReport]):
    for rep in reports:
        c = rep.config
        if rep.empty:
            yield (c.label(), c.cc, c.server, c.mss_bytes, _buffer_label(rep), c.aqm, None, None, c.scenario,
                   None, None, None, None, None, None, None, None, 0)
            continue
        f0 = rep.flows[0]
        gp = f0.goodput_bps if len(rep.flows) == 1 else rep.cell_goodput_bps
        gp_std = f0.goodput_std if len(rep.flows) == 1 else rep.cell_goodput_std
        rtts = [f.mean_rtt_ms for f in rep.flows if not math.isnan(f.mean_rtt_ms)]
        rtt = sum(rtts) / len(rtts) if rtts else None
        rtt_std = f0.rtt_std_ms if len(rep.flows) == 1 else None
        yield (c.label(), c.cc, c.server, c.mss_bytes, _buffer_label(rep), c.aqm, gp, rtt, c.scenario, gp_std,
               rtt_std, rep.cell_goodput_bps, rep.jain, rep.drops.get("tail"), rep.drops.get("codel"),
               rep.drops.get("channel"), rep.mean_capacity_bps, len(rep.runs))


def per_flow_rows(reports: list[RunReport]):
    for rep in reports:
        c = rep.config
        for f in rep.flows:
            yield (c.label(), f.flow, f.ue, f.ue_class, f.server, f.cc, c.mss_bytes, _buffer_label(rep), c.aqm,
                   f.goodput_bps, f.goodput_std, f.goodput_min, f.goodput_max, f.mean_rtt_ms, f.rtt_std_ms,
                   f.retransmits, f.rtos, f.max_backoff, f.aborted_runs)


def per_seed_rows(reports: list[RunReport]):
    for rep in reports:
        for run in rep.runs:
            cap = sum(run.mean_capacity_bps)
            for i, f in enumerate(run.result.flows):
                yield (rep.config.label(), run.seed, i, f.goodput_bps, f.mean_rtt_ms, f.retransmits, f.chan_retx,
                       f.rtos, f.max_backoff, f.aborted, cap, run.handovers)


def scatter_rows(reports: list[RunReport], box: RequirementBox | None = None):
    for rep in reports:
        b = box or RequirementBox().scaled(rep.config.scale)
        for f in rep.flows:
            if f.cc == "udp_reference":
                continue
            inside = not math.isnan(f.mean_rtt_ms) and b.contains(f.goodput_bps, f.mean_rtt_ms)
            yield (rep.config.label(), f.flow, f.ue_class, f.server, f.cc, f.goodput_bps, f.mean_rtt_ms, inside,
                   b.min_goodput_bps, b.max_delay_ms)


def manifest(reports: list[RunReport], backend: str | None = None) -> dict:
    return {
        "tool": "mmtcp",
        "version": __version__,
        "backend": backend,
        "runs": [
            {"config_id": r.config.label(), "config_hash": r.config.digest(), "seeds": list(r.seeds),
             "config": r.config.to_dict()}
            for r in reports
        ],
    }


def emit_report(reports: RunReport | list[RunReport], out_dir: str | Path, backend: str | None = None,
                traces: bool = True) -> list[Path]:
    """Write the CSV set and ``manifest.json`` into ``out_dir``; returns the paths."""
    if isinstance(reports, RunReport):
        reports = [reports]
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    paths = [
        _write(out / "summary.csv", SUMMARY_HEADER, summary_rows(reports)),
        _write(out / "per_flow.csv", PER_FLOW_HEADER, per_flow_rows(reports)),
        _write(out / "per_seed.csv", PER_SEED_HEADER, per_seed_rows(reports)),
        _write(out / "mss_ratio.csv", RATIO_HEADER,
               ((r["scenario"], r["cc"], r["server"], r["buffer"], r["aqm"], r["goodput_1400_bps"],
                 r["goodput_14000_bps"], r["ratio"]) for r in mss_ratio_rows(reports))),
        _write(out / "scatter.csv", SCATTER_HEADER, scatter_rows(reports)),
    ]
    if traces:
        for rep in reports:
            for run in rep.runs:
                stem = f"{safe_name(rep.config.label())}_s{run.seed}"
                if run.result.flow_trace:
                    p = out / f"cwnd_{stem}.csv"
                    write_flow_trace(run.result.flow_trace, p)
                    paths.append(p)
                if run.result.queue_trace:
                    p = out / f"queue_{stem}.csv"
                    write_queue_trace(run.result.queue_trace, p)
                    paths.append(p)
    mpath = out / "manifest.json"
    with open(mpath, "w") as fh:
        json.dump(manifest(reports, backend), fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(mpath)
    return paths


__all__ = ["emit_report", "fmt", "manifest", "write_queue_trace", "QUEUE_TRACE_HEADER", "SUMMARY_HEADER"]
