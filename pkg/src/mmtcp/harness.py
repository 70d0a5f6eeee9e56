"""Scenario runner: turns a :class:`ScenarioConfig` into channel traces and
engine specs, runs seeds, and aggregates per-flow and per-cell metrics."""

from __future__ import annotations

import dataclasses
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .backend import run_engine
from .channel import (ChannelModel, ChannelTrace, LosClass, high_speed_config, load_sinr_csv,
                      lte_config, urban_config)
from .config import MATRIX_MSS, ONE_WAY_MS, ScenarioConfig
from .engine import EngineResult, EngineSpec, FlowSpec, UeLinkSpec
from .link import HarqConfig
from .sim_core import NS_PER_MS, NS_PER_S

MATRIX_CCS = ("newreno", "highspeed", "cubic", "bbr")
# (buffer preset, aqm) variants of the matrix
MATRIX_BUFFERS = (("bdp", "none"), ("tenth_bdp", "none"), ("bdp", "codel"), ("oversized", "none"))


@dataclass(frozen=True)
class RequirementBox:
    """Target region of the goodput/latency plane."""

    min_goodput_bps: float = 100e6
    max_delay_ms: float = 10.0

    def scaled(self, factor: float) -> "RequirementBox":
        return RequirementBox(self.min_goodput_bps * factor, self.max_delay_ms)

    def contains(self, goodput_bps: float, delay_ms: float) -> bool:
        return goodput_bps > self.min_goodput_bps and delay_ms < self.max_delay_ms


def jain_index(rates) -> float | None:
    """(sum r)^2 / (n sum r^2); ``None`` when every rate is zero."""
    r = np.asarray(list(rates), dtype=float)
    if r.size == 0:
        return None
    if np.any(r < 0):
        raise ValueError("rates must be non-negative")
    sq = float(np.sum(r * r))
    if sq == 0.0:
        return None
    return float(np.sum(r)) ** 2 / (r.size * sq)


# ---------------------------------------------------------------------------
# building one run


@dataclass
class FlowMeta:
    flow: int
    ue: int
    ue_class: str
    server: str
    cc: str


def channel_for(cfg: ScenarioConfig, seed: int) -> ChannelTrace:
    duration_ns = int(round(cfg.duration_s * NS_PER_S))
    if cfg.scenario == "urban":
        ch = urban_config(cfg.scale)
    elif cfg.scenario == "lte_profile":
        ch = lte_config(cfg.channel.handover, cfg.scale)
    else:
        ch = high_speed_config(cfg.channel.handover, cfg.scale)
    if cfg.channel.sinr_trace:
        return load_sinr_csv(cfg.channel.sinr_trace, duration_ns, ch.rate, ch.handover)
    return ChannelModel(ch, seed).generate(duration_ns)


def receive_window(cfg: ScenarioConfig, server: str) -> int:
    """Twice the most a loss-based window can hold before the buffer
    overflows, so flow control only binds behind a long-lived hole."""
    bdp = cfg.rate_max * 2.0 * ONE_WAY_MS[server] / 1e3 / 8.0
    return int(round(2.0 * (cfg.buffer_bytes + bdp)))


def flows_for(cfg: ScenarioConfig) -> tuple[list[FlowSpec], list[FlowMeta], int]:
    """Flow list, metadata and UE count of the scenario."""
    kind = "udp" if cfg.cc == "udp_reference" else "tcp"
    cc = "newreno" if kind == "udp" else cfg.cc
    udp_rate = cfg.rate_max if kind == "udp" else 0.0
    flows, meta = [], []
    if cfg.scenario == "urban":
        geo = urban_config().geometry
        for i, ue in enumerate(geo.ues):
            server = "edge" if i % 2 == 1 else "remote"
            d = int(ONE_WAY_MS[server] * NS_PER_MS)
            flows.append(FlowSpec(ue=i, kind=kind, cc=cc, mss=cfg.mss_bytes, delay_down=d, delay_up=d,
                                  udp_rate=udp_rate, rwnd=receive_window(cfg, server)))
            meta.append(FlowMeta(i, i, LosClass(ue.los_class).name, server, cfg.cc))
        return flows, meta, len(geo.ues)
    d = int(ONE_WAY_MS[cfg.server] * NS_PER_MS)
    flows.append(FlowSpec(ue=0, kind=kind, cc=cc, mss=cfg.mss_bytes, delay_down=d, delay_up=d, udp_rate=udp_rate,
                          rwnd=receive_window(cfg, cfg.server)))
    meta.append(FlowMeta(0, 0, "LOS", cfg.server, cfg.cc))
    return flows, meta, 1


def engine_spec(cfg: ScenarioConfig, seed: int, trace: ChannelTrace) -> tuple[EngineSpec, list[FlowMeta]]:
    flows, meta, n_ue = flows_for(cfg)
    if trace.n_ues < n_ue:
        raise ValueError(f"channel trace has {trace.n_ues} UEs, scenario needs {n_ue}")
    lk = cfg.link
    harq = HarqConfig(
        max_harq_retx=lk.max_harq_retx,
        harq_rtt=int(round(lk.harq_rtt_ms * NS_PER_MS)),
        rlc_am_enabled=lk.rlc_am,
        rlc_retx_timer=int(round(lk.rlc_retx_timer_ms * NS_PER_MS)),
    )
    pe = [np.asarray(harq.error_prob(trace.serving_sinr_db[u]), dtype=float) for u in range(n_ue)]
    spec = EngineSpec(
        flows=flows,
        ues=[UeLinkSpec(cfg.buffer_bytes, cfg.aqm) for _ in range(n_ue)],
        capacity=[trace.capacity_bps[u] for u in range(n_ue)],
        error_prob=pe,
        duration_ns=int(round(cfg.duration_s * NS_PER_S)),
        warmup_ns=int(round(cfg.warmup_s * NS_PER_S)),
        seed=seed,
        harq=harq,
        trace_interval_ns=int(round(cfg.output.trace_interval_ms * NS_PER_MS)) if cfg.output.trace else 0,
    )
    return spec, meta


@dataclass
class SeedRun:
    seed: int
    result: EngineResult
    mean_capacity_bps: list[float]
    handovers: int
    wall_s: float


def run_seed(cfg: ScenarioConfig, seed: int, backend: str | None = None) -> SeedRun:
    t0 = time.perf_counter()
    trace = channel_for(cfg, seed)
    spec, _ = engine_spec(cfg, seed, trace)
    res = run_engine(spec, backend)
    caps = [trace.mean_capacity(u, spec.warmup_ns, spec.duration_ns) for u in range(len(spec.ues))]
    hos = sum(len(h) for h in trace.handovers)
    return SeedRun(seed, res, caps, hos, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# aggregation


@dataclass
class FlowSummary:
    flow: int
    ue: int
    ue_class: str
    server: str
    cc: str
    goodput_bps: float
    goodput_std: float
    goodput_min: float
    goodput_max: float
    mean_rtt_ms: float
    rtt_std_ms: float
    retransmits: float
    rtos: float
    max_backoff: int
    aborted_runs: int


@dataclass
class RunReport:
    config: ScenarioConfig
    seeds: list[int]
    runs: list[SeedRun] = field(default_factory=list)
    flows: list[FlowSummary] = field(default_factory=list)
    cell_goodput_bps: float = 0.0
    cell_goodput_std: float = 0.0
    jain: float | None = None
    drops: dict[str, float] = field(default_factory=dict)
    mean_capacity_bps: float = 0.0

    @property
    def empty(self) -> bool:
        return not self.runs

    def flow_metric(self, name: str) -> list[float]:
        return [getattr(f, name) for f in self.flows]


def _nanmean(xs) -> float:
    xs = [x for x in xs if not math.isnan(x)]
    return float(np.mean(xs)) if xs else float("nan")


def _nanstd(xs) -> float:
    xs = [x for x in xs if not math.isnan(x)]
    return float(np.std(xs)) if xs else float("nan")


def summarize(cfg: ScenarioConfig, runs: list[SeedRun]) -> RunReport:
    rep = RunReport(config=cfg, seeds=[r.seed for r in runs], runs=runs)
    if not runs:
        return rep
    _, meta, n_ue = flows_for(cfg)
    for i, m in enumerate(meta):
        fr = [r.result.flows[i] for r in runs]
        gp = [f.goodput_bps for f in fr]
        rtt = [f.mean_rtt_ms for f in fr]
        rep.flows.append(FlowSummary(
            flow=m.flow, ue=m.ue, ue_class=m.ue_class, server=m.server, cc=m.cc,
            goodput_bps=float(np.mean(gp)), goodput_std=float(np.std(gp)),
            goodput_min=float(np.min(gp)), goodput_max=float(np.max(gp)),
            mean_rtt_ms=_nanmean(rtt), rtt_std_ms=_nanstd(rtt),
            retransmits=float(np.mean([f.retransmits for f in fr])),
            rtos=float(np.mean([f.rtos for f in fr])),
            max_backoff=max(f.max_backoff for f in fr),
            aborted_runs=sum(1 for f in fr if f.aborted),
        ))
    cells = [sum(f.goodput_bps for f in r.result.flows) for r in runs]
    rep.cell_goodput_bps = float(np.mean(cells))
    rep.cell_goodput_std = float(np.std(cells))
    rep.jain = jain_index([f.goodput_bps for f in rep.flows]) if len(rep.flows) > 1 else None
    rep.drops = {
        "tail": float(np.mean([sum(u.tail_drops for u in r.result.ues) for r in runs])),
        "codel": float(np.mean([sum(u.codel_drops for u in r.result.ues) for r in runs])),
        "channel": float(np.mean([sum(f.chan_losses for f in r.result.flows) for r in runs])),
    }
    rep.mean_capacity_bps = float(np.mean([np.sum(r.mean_capacity_bps) for r in runs]))
    return rep


def run(cfg: ScenarioConfig, backend: str | None = None) -> RunReport:
    """Run every seed of ``cfg`` and aggregate. Zero duration gives an empty report."""
    cfg.validate()
    if cfg.duration_s == 0:
        return RunReport(config=cfg, seeds=[])
    return summarize(cfg, [run_seed(cfg, s, backend) for s in cfg.seeds])


# ---------------------------------------------------------------------------
# experiment matrix


def experiment_matrix(scenario: str = "high_speed", **overrides) -> list[ScenarioConfig]:
    """{remote, edge} x 4 CC x 2 MSS x 4 buffer variants, plus one UDP
    ceiling run per server: 66 configs."""
    out = []
    for server in ("remote", "edge"):
        for cc in MATRIX_CCS:
            for mss in MATRIX_MSS:
                for buf, aqm in MATRIX_BUFFERS:
                    cid = f"{scenario}/{server}/{cc}/p{mss}/{buf}" + ("+codel" if aqm == "codel" else "")
                    out.append(ScenarioConfig(scenario=scenario, server=server, cc=cc, mss_bytes=mss, buffer=buf,
                                              aqm=aqm, config_id=cid, **overrides))
        out.append(ScenarioConfig(scenario=scenario, server=server, cc="udp_reference", mss_bytes=1400,
                                  buffer="bdp", config_id=f"{scenario}/{server}/udp", **overrides))
    return out


def _run_job(args):
    cfg, backend = args
    return run(cfg, backend)


def run_matrix(configs: list[ScenarioConfig], jobs: int = 1, backend: str | None = None,
               progress=None) -> list[RunReport]:
    """Run configs, optionally in worker processes; order of the result
    follows ``configs``."""
    if jobs <= 1:
        out = []
        for cfg in configs:
            rep = run(cfg, backend)
            if progress:
                progress(rep)
            out.append(rep)
        return out
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        out = []
        for rep in ex.map(_run_job, [(c, backend) for c in configs]):
            if progress:
                progress(rep)
            out.append(rep)
        return out


def with_overrides(cfg: ScenarioConfig, **kw) -> ScenarioConfig:
    return dataclasses.replace(cfg, **kw)


def mss_ratio_rows(reports: list[RunReport]) -> list[dict]:
    """goodput(14 KB) / goodput(1.4 KB) for every config pair differing only in MSS."""
    by_key: dict[tuple, dict[int, RunReport]] = {}
    for rep in reports:
        c = rep.config
        if c.cc == "udp_reference" or rep.empty:
            continue
        key = (c.scenario, c.cc, c.server, str(c.buffer), c.aqm)
        by_key.setdefault(key, {})[c.mss_bytes] = rep
    rows = []
    for key, d in by_key.items():
        if 1400 in d and 14000 in d:
            lo = d[1400].flows[0].goodput_bps
            hi = d[14000].flows[0].goodput_bps
            rows.append(dict(scenario=key[0], cc=key[1], server=key[2], buffer=key[3], aqm=key[4],
                             goodput_1400_bps=lo, goodput_14000_bps=hi,
                             ratio=hi / lo if lo > 0 else float("nan")))
    return rows


__all__ = [
    "FlowMeta", "FlowSummary", "MATRIX_BUFFERS", "MATRIX_CCS", "RequirementBox", "RunReport",
    "SeedRun", "channel_for", "engine_spec", "experiment_matrix", "flows_for", "jain_index", "mss_ratio_rows",
    "run", "run_matrix", "run_seed", "summarize", "with_overrides",
]
