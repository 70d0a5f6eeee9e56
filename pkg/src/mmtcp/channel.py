"""Parametric mmWave channel: geometry, pathloss, shadowing, fast fading,
blockage, SINR-to-capacity mapping and SINR-driven handover.

The channel does not depend on traffic, so a whole run is precomputed on the
1 ms grid into a :class:`ChannelTrace` that the packet engine consumes.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import lfilter

from .sim_core import NS_PER_MS, rng_stream

GRID_NS = NS_PER_MS
SPEED_OF_LIGHT = 299_792_458.0


class LosClass(enum.IntEnum):
    LOS = 0
    NLOS = 1
    INDOOR = 2


@dataclass(frozen=True)
class RateModel:
    """Truncated-Shannon mapping from SINR to link rate."""

    bandwidth_hz: float = 1e9
    efficiency: float = 0.29
    rate_max: float = 3e9
    sinr_floor_db: float = -5.0
    sinr_cap_db: float = 40.0

    def scaled(self, factor: float) -> "RateModel":
        return replace(self, bandwidth_hz=self.bandwidth_hz * factor, rate_max=self.rate_max * factor)


def capacity(sinr_db, model: RateModel):
    """Link rate in bit/s for ``sinr_db`` (scalar or array).

    ``min(rate_max, efficiency * bandwidth * log2(1 + sinr))``, and 0 below the
    outage floor.
    """
    s = np.minimum(np.asarray(sinr_db, dtype=float), model.sinr_cap_db)
    rate = model.efficiency * model.bandwidth_hz * np.log2(1.0 + 10.0 ** (s / 10.0))
    rate = np.minimum(rate, model.rate_max)
    rate = np.where(s < model.sinr_floor_db, 0.0, rate)
    if rate.ndim == 0:
        return float(rate)
    return rate


@dataclass(frozen=True)
class RadioParams:
    carrier_ghz: float = 28.0
    tx_power_dbm: float = 30.0
    antenna_gain_db: float = 24.0
    noise_figure_db: float = 7.0
    noise_bandwidth_hz: float = 1e9
    # per class LOS, NLOS, INDOOR; an indoor UE sees the outdoor LOS law plus
    # the wall penetration loss
    pl_exponent: tuple[float, float, float] = (2.0, 3.2, 2.0)
    shadow_sigma_db: tuple[float, float, float] = (4.0, 7.8, 4.0)
    shadow_decorrelation_m: tuple[float, float, float] = (10.0, 13.0, 10.0)
    fading_sigma_db: float = 2.5
    fading_coherence_s: float = 0.002
    penetration_loss_db: float = 20.0

    @property
    def fspl_1m_db(self) -> float:
        return 20.0 * math.log10(4.0 * math.pi * self.carrier_ghz * 1e9 / SPEED_OF_LIGHT)

    @property
    def noise_dbm(self) -> float:
        return -174.0 + 10.0 * math.log10(self.noise_bandwidth_hz) + self.noise_figure_db

    @property
    def link_budget_db(self) -> float:
        """Transmit power plus gains minus noise floor; SINR = budget - losses."""
        return self.tx_power_dbm + self.antenna_gain_db - self.noise_dbm


def pathloss_db(distance_m, los_class: LosClass, radio: RadioParams):
    n = radio.pl_exponent[int(los_class)]
    d = np.maximum(np.asarray(distance_m, dtype=float), 1.0)
    pl = radio.fspl_1m_db + 10.0 * n * np.log10(d)
    if los_class == LosClass.INDOOR:
        pl = pl + radio.penetration_loss_db
    return pl


@dataclass(frozen=True)
class BlockerProcess:
    """Poisson blocker arrivals on a UE-gNB link with exponential dwell.

    ``region`` restricts the process to UE positions with x inside the
    interval; ``gnbs`` restricts it to a subset of base stations.
    """

    arrival_rate: float
    blockage_loss_db: float = 25.0
    mean_dwell_s: float = 0.5
    region: tuple[float, float] | None = None
    gnbs: tuple[int, ...] | None = None

    def affects(self, gnb: int) -> bool:
        return self.gnbs is None or gnb in self.gnbs


@dataclass(frozen=True)
class HandoverParams:
    enabled: bool = True
    hysteresis_db: float = 3.0
    time_to_trigger_s: float = 0.016
    delay_s: float = 0.010


@dataclass
class UeSpec:
    """Static description of one UE: start point, velocity and link class."""

    start: tuple[float, float, float]
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    los_class: LosClass = LosClass.LOS
    walk_radius_m: float = 0.0


@dataclass
class ScenarioGeometry:
    gnb_positions: list[tuple[float, float, float]]
    ues: list[UeSpec]
    gnb_height: float
    ue_speed: float
    intersite_distance: float
    # region of the track where every link is NLOS instead of LOS
    nlos_regions: list[tuple[float, float]] = field(default_factory=list)


@dataclass
class ChannelConfig:
    geometry: ScenarioGeometry
    radio: RadioParams = field(default_factory=RadioParams)
    rate: RateModel = field(default_factory=RateModel)
    blockers: list[BlockerProcess] = field(default_factory=list)
    handover: HandoverParams = field(default_factory=HandoverParams)
    fading: bool = True
    shadowing: bool = True


# ---------------------------------------------------------------------------
# scenario presets

HS_GNB_HEIGHT = 35.0
HS_INTERSITE = 580.0
HS_SPEED = 108.0 / 3.6
HS_TRACK_OFFSET = 20.0
UE_HEIGHT = 2.5


def high_speed_geometry(n_gnbs: int = 6) -> ScenarioGeometry:
    """Train track along x; gNB k sits at x = (k - 1) * 580 m, alternating sides.

    gNB indices follow the figure: gNB 1 is the one next to the start of the
    track, the blocked stretch lies between gNBs 2 and 3.
    """
    gnbs = []
    for k in range(n_gnbs):
        x = (k - 1) * HS_INTERSITE
        y = HS_TRACK_OFFSET if k % 2 == 0 else -HS_TRACK_OFFSET
        gnbs.append((x, y, HS_GNB_HEIGHT))
    ue = UeSpec(start=(0.0, 0.0, UE_HEIGHT), velocity=(HS_SPEED, 0.0, 0.0))
    return ScenarioGeometry(
        gnb_positions=gnbs,
        ues=[ue],
        gnb_height=HS_GNB_HEIGHT,
        ue_speed=HS_SPEED,
        intersite_distance=HS_INTERSITE,
    )


def high_speed_blockers() -> list[BlockerProcess]:
    # Obstacles between gNBs 2 and 3 (x in [580, 1160]) hit the two closest
    # sites often; elsewhere blockage is occasional.
    return [
        BlockerProcess(arrival_rate=0.1),
        BlockerProcess(arrival_rate=1.5, region=(HS_INTERSITE, 2 * HS_INTERSITE), gnbs=(2, 3)),
    ]


URBAN_GNB_HEIGHT = 25.0
URBAN_WALK_SPEED = 1.0


def urban_geometry() -> ScenarioGeometry:
    """One gNB, ten UEs: four LOS, four NLOS, two indoor."""
    gnb = (0.0, 0.0, URBAN_GNB_HEIGHT)
    classes = [LosClass.LOS] * 4 + [LosClass.NLOS] * 4 + [LosClass.INDOOR] * 2
    dists = [60.0, 90.0, 120.0, 150.0, 60.0, 80.0, 100.0, 120.0, 110.0, 130.0]
    ues = []
    for i, (cls, d) in enumerate(zip(classes, dists)):
        ang = 2.0 * math.pi * i / len(classes)
        start = (d * math.cos(ang), d * math.sin(ang), 1.5)
        if cls == LosClass.INDOOR:
            ues.append(UeSpec(start=start, los_class=cls))
        else:
            v = (URBAN_WALK_SPEED * math.cos(ang + 1.0), URBAN_WALK_SPEED * math.sin(ang + 1.0), 0.0)
            ues.append(UeSpec(start=start, velocity=v, los_class=cls, walk_radius_m=10.0))
    return ScenarioGeometry(
        gnb_positions=[gnb],
        ues=ues,
        gnb_height=URBAN_GNB_HEIGHT,
        ue_speed=URBAN_WALK_SPEED,
        intersite_distance=0.0,
    )


def urban_blockers() -> list[BlockerProcess]:
    return [BlockerProcess(arrival_rate=0.02)]


# ---------------------------------------------------------------------------


def ue_position(geometry: ScenarioGeometry, ue: int, t_s):
    """Position of ``ue`` at time ``t_s`` (seconds, scalar or array).

    Straight-line motion at constant velocity; walking UEs bounce back and
    forth along their heading within ``walk_radius_m`` of the start point.
    """
    if not 0 <= ue < len(geometry.ues):
        raise KeyError(f"unknown UE id {ue}")
    spec = geometry.ues[ue]
    t = np.asarray(t_s, dtype=float)
    start = np.asarray(spec.start, dtype=float)
    vel = np.asarray(spec.velocity, dtype=float)
    speed = float(np.linalg.norm(vel))
    if spec.walk_radius_m > 0.0 and speed > 0.0:
        period = 4.0 * spec.walk_radius_m / speed
        phase = np.mod(t, period) / period
        # triangle wave in [-1, 1]
        tri = np.where(phase < 0.25, 4 * phase, np.where(phase < 0.75, 2 - 4 * phase, 4 * phase - 4))
        offset = np.multiply.outer(tri * spec.walk_radius_m, vel / speed)
    else:
        offset = np.multiply.outer(t, vel)
    return start + offset


def link_class(geometry: ScenarioGeometry, ue: int, x) -> np.ndarray:
    base = int(geometry.ues[ue].los_class)
    cls = np.full(np.shape(x), base, dtype=np.int8)
    if base == LosClass.LOS:
        for lo, hi in geometry.nlos_regions:
            cls[(x >= lo) & (x <= hi)] = LosClass.NLOS
    return cls


def ar1(rng: np.random.Generator, n: int, rho: np.ndarray | float, sigma: float) -> np.ndarray:
    """Stationary Gaussian AR(1) with marginal std ``sigma``.

    ``rho`` may vary per step (distance-driven correlation for shadowing).
    """
    if n == 0:
        return np.zeros(0)
    rho = np.broadcast_to(np.asarray(rho, dtype=float), (n,))
    w = rng.standard_normal(n)
    innov = sigma * np.sqrt(1.0 - rho * rho) * w
    innov[0] = sigma * w[0]
    if n == 1 or np.all(rho[1:] == rho[1]):
        return lfilter([1.0], [1.0, -float(rho[-1])], innov)
    out = np.empty(n)
    x = out[0] = innov[0]
    for k in range(1, n):
        x = rho[k] * x + innov[k]
        out[k] = x
    return out


def blockage_mask(rng: np.random.Generator, t_s: np.ndarray, x: np.ndarray, proc: BlockerProcess) -> np.ndarray:
    """Boolean mask of grid points at which a blocker from ``proc`` is active."""
    n = len(t_s)
    mask = np.zeros(n, dtype=bool)
    if n == 0 or proc.arrival_rate <= 0.0:
        return mask
    dt = t_s[1] - t_s[0] if n > 1 else 1e-3
    horizon = t_s[-1] + dt
    t = rng.exponential(1.0 / proc.arrival_rate)
    while t < horizon:
        dwell = rng.exponential(proc.mean_dwell_s)
        k0 = int(t / dt)
        k1 = min(n, int(math.ceil((t + dwell) / dt)))
        if k1 > k0:
            mask[k0:k1] = True
        t += rng.exponential(1.0 / proc.arrival_rate)
    if proc.region is not None:
        lo, hi = proc.region
        mask &= (x >= lo) & (x <= hi)
    return mask


@dataclass
class LinkState:
    los_class: LosClass
    sinr_db: float
    capacity_bps: float
    serving: bool


@dataclass
class ChannelTrace:
    """Per-UE channel realisation on the 1 ms grid.

    ``sinr_db[u]`` has shape (n_gnbs, n_steps). ``capacity_bps[u]`` is the
    rate of the serving link (0 during outage and handover interruption).
    """

    grid_ns: int
    sinr_db: list[np.ndarray]
    link_class: list[np.ndarray]
    blocked: list[np.ndarray]
    serving: list[np.ndarray]
    capacity_bps: list[np.ndarray]
    serving_sinr_db: list[np.ndarray]
    handovers: list[list[tuple[int, int, int]]]
    rate: RateModel

    @property
    def n_ues(self) -> int:
        return len(self.capacity_bps)

    @property
    def n_steps(self) -> int:
        return len(self.capacity_bps[0]) if self.capacity_bps else 0

    def index(self, t_ns: int) -> int:
        k = t_ns // self.grid_ns
        return min(max(k, 0), self.n_steps - 1)

    def link_state(self, t_ns: int, ue: int, gnb: int) -> LinkState:
        k = self.index(t_ns)
        s = float(self.sinr_db[ue][gnb, k])
        serving = int(self.serving[ue][k]) == gnb
        cls = LosClass(int(self.link_class[ue][gnb, k]))
        if self.blocked[ue][gnb, k] and cls == LosClass.LOS:
            cls = LosClass.NLOS
        cap = float(capacity(s, self.rate)) if serving else 0.0
        return LinkState(los_class=cls, sinr_db=s, capacity_bps=cap, serving=serving)

    def mean_capacity(self, ue: int, start_ns: int = 0, end_ns: int | None = None) -> float:
        k0 = self.index(start_ns)
        k1 = self.n_steps if end_ns is None else min(self.n_steps, end_ns // self.grid_ns)
        if k1 <= k0:
            return 0.0
        return float(np.mean(self.capacity_bps[ue][k0:k1]))


def select_serving(sinr: np.ndarray, ho: HandoverParams, grid_s: float, floor_db: float):
    """Run the handover state machine over a (n_gnbs, n_steps) SINR matrix.

    Every neighbour keeps its own time-to-trigger counter (A3-style): it
    counts the consecutive steps on which that neighbour beats the serving
    link by the hysteresis and sits above the outage floor. The first
    counter to reach the trigger hands the UE over; ties go to the stronger
    neighbour.

    Returns (serving index per step, interruption mask, handover log). The
    log holds ``(step, from_gnb, to_gnb)``. While a handover executes the old
    link carries no data; the RLC buffer moves with the UE untouched.
    """
    n_g, n = sinr.shape
    serving = np.empty(n, dtype=np.int32)
    interrupted = np.zeros(n, dtype=bool)
    log: list[tuple[int, int, int]] = []
    cur = int(np.argmax(sinr[:, 0])) if n else 0
    ttt_steps = max(1, int(round(ho.time_to_trigger_s / grid_s)))
    delay_steps = int(round(ho.delay_s / grid_s))
    count = np.zeros(n_g, dtype=np.int64)
    above = sinr >= floor_db
    k = 0
    while k < n:
        serving[k] = cur
        if ho.enabled and n_g > 1:
            col = sinr[:, k]
            ok = (col >= col[cur] + ho.hysteresis_db) & above[:, k]
            ok[cur] = False
            count = np.where(ok, count + 1, 0)
            fired = count >= ttt_steps
            if fired.any():
                b = int(np.argmax(np.where(fired, col, -np.inf)))
                log.append((k, cur, b))
                end = min(n, k + 1 + delay_steps)
                serving[k + 1:end] = cur
                interrupted[k + 1:end] = True
                cur = b
                count[:] = 0
                k = end
                continue
        k += 1
    return serving, interrupted, log


class ChannelModel:
    """Generates SINR/capacity traces for one scenario configuration."""

    def __init__(self, config: ChannelConfig, seed: int):
        self.config = config
        self.seed = seed
        self._trace: ChannelTrace | None = None
        self._duration_ns = 0

    @property
    def geometry(self) -> ScenarioGeometry:
        return self.config.geometry

    def ue_position(self, t_ns: int, ue: int) -> np.ndarray:
        return ue_position(self.geometry, ue, t_ns / 1e9)

    def deterministic_sinr_db(self, pos, gnb: int, los_class: LosClass) -> np.ndarray:
        """SINR without shadowing, fading or blockage."""
        g = np.asarray(self.geometry.gnb_positions[gnb], dtype=float)
        d = np.linalg.norm(np.asarray(pos, dtype=float) - g, axis=-1)
        return self.config.radio.link_budget_db - pathloss_db(d, los_class, self.config.radio)

    def generate(self, duration_ns: int) -> ChannelTrace:
        cfg = self.config
        geo = cfg.geometry
        radio = cfg.radio
        n = max(1, -(-duration_ns // GRID_NS))
        grid_s = GRID_NS / 1e9
        t_s = np.arange(n) * grid_s
        sinr_all, cls_all, blk_all = [], [], []
        serving_all, cap_all, ssinr_all, ho_all = [], [], [], []
        rho_fast = math.exp(-grid_s / cfg.radio.fading_coherence_s) if cfg.radio.fading_coherence_s > 0 else 0.0
        for u in range(len(geo.ues)):
            pos = ue_position(geo, u, t_s)
            x = pos[:, 0]
            cls = link_class(geo, u, x)
            step_m = np.linalg.norm(np.diff(pos, axis=0, prepend=pos[:1]), axis=1)
            n_g = len(geo.gnb_positions)
            sinr = np.empty((n_g, n))
            blocked = np.zeros((n_g, n), dtype=bool)
            cls_mat = np.empty((n_g, n), dtype=np.int8)
            for g in range(n_g):
                gp = np.asarray(geo.gnb_positions[g], dtype=float)
                d = np.linalg.norm(pos - gp, axis=1)
                s = np.empty(n)
                for c in np.unique(cls):
                    sel = cls == c
                    s[sel] = radio.link_budget_db - pathloss_db(d[sel], LosClass(int(c)), radio)
                if cfg.shadowing:
                    rng = rng_stream(self.seed, f"shadow/u{u}/g{g}")
                    sig = np.array(radio.shadow_sigma_db)[cls]
                    dcor = np.array(radio.shadow_decorrelation_m)[cls]
                    rho = np.exp(-step_m / dcor)
                    s += ar1(rng, n, rho, 1.0) * sig
                if cfg.fading and radio.fading_sigma_db > 0:
                    rng = rng_stream(self.seed, f"fading/u{u}/g{g}")
                    s += ar1(rng, n, rho_fast, radio.fading_sigma_db)
                for bi, proc in enumerate(cfg.blockers):
                    if not proc.affects(g):
                        continue
                    rng = rng_stream(self.seed, f"blockage/{bi}/u{u}/g{g}")
                    m = blockage_mask(rng, t_s, x, proc)
                    s[m] -= proc.blockage_loss_db
                    blocked[g] |= m
                sinr[g] = s
                cls_mat[g] = cls
            serving, interrupted, log = select_serving(sinr, cfg.handover, grid_s, cfg.rate.sinr_floor_db)
            ssinr = sinr[serving, np.arange(n)]
            cap = capacity(ssinr, cfg.rate)
            cap = np.where(interrupted, 0.0, cap)
            sinr_all.append(sinr)
            cls_all.append(cls_mat)
            blk_all.append(blocked)
            serving_all.append(serving)
            cap_all.append(np.asarray(cap, dtype=float))
            ssinr_all.append(ssinr)
            ho_all.append(log)
        self._trace = ChannelTrace(
            grid_ns=GRID_NS,
            sinr_db=sinr_all,
            link_class=cls_all,
            blocked=blk_all,
            serving=serving_all,
            capacity_bps=cap_all,
            serving_sinr_db=ssinr_all,
            handovers=ho_all,
            rate=cfg.rate,
        )
        self._duration_ns = duration_ns
        return self._trace

    @property
    def trace(self) -> ChannelTrace:
        if self._trace is None:
            raise RuntimeError("call generate() first")
        return self._trace

    def sinr(self, t_ns: int, ue: int, gnb: int) -> float:
        tr = self.trace
        return float(tr.sinr_db[ue][gnb, tr.index(t_ns)])

    def handover_check(self, t_ns: int, ue: int) -> int:
        tr = self.trace
        return int(tr.serving[ue][tr.index(t_ns)])


def trace_from_sinr(
    sinr_by_ue: Sequence[np.ndarray],
    rate: RateModel,
    handover: HandoverParams | None = None,
) -> ChannelTrace:
    """Build a trace from given SINR matrices (n_gnbs, n_steps) per UE."""
    handover = handover or HandoverParams()
    grid_s = GRID_NS / 1e9
    out = dict(sinr_db=[], link_class=[], blocked=[], serving=[], capacity_bps=[], serving_sinr_db=[], handovers=[])
    for sinr in sinr_by_ue:
        sinr = np.atleast_2d(np.asarray(sinr, dtype=float))
        n = sinr.shape[1]
        serving, interrupted, log = select_serving(sinr, handover, grid_s, rate.sinr_floor_db)
        ssinr = sinr[serving, np.arange(n)]
        cap = np.where(interrupted, 0.0, capacity(ssinr, rate))
        out["sinr_db"].append(sinr)
        out["link_class"].append(np.zeros(sinr.shape, dtype=np.int8))
        out["blocked"].append(np.zeros(sinr.shape, dtype=bool))
        out["serving"].append(serving)
        out["capacity_bps"].append(np.asarray(cap, dtype=float))
        out["serving_sinr_db"].append(ssinr)
        out["handovers"].append(log)
    return ChannelTrace(grid_ns=GRID_NS, rate=rate, **out)


def load_sinr_csv(path: str | Path, duration_ns: int, rate: RateModel,
                  handover: HandoverParams | None = None) -> ChannelTrace:
    """Ingest ``time_s,ue_id,gnb_id,sinr_db`` rows as a channel trace.

    Samples are held until the next row for the same link; links without any
    sample before a grid point start at the floor minus 10 dB (outage).
    """
    rows: dict[tuple[int, int], list[tuple[float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"time_s", "ue_id", "gnb_id", "sinr_db"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"trace {path} lacks columns {sorted(missing)}")
        for row in reader:
            key = (int(row["ue_id"]), int(row["gnb_id"]))
            rows.setdefault(key, []).append((float(row["time_s"]), float(row["sinr_db"])))
    if not rows:
        raise ValueError(f"trace {path} is empty")
    n_ue = max(k[0] for k in rows) + 1
    n_g = max(k[1] for k in rows) + 1
    n = max(1, -(-duration_ns // GRID_NS))
    grid_t = np.arange(n) * (GRID_NS / 1e9)
    mats = []
    for u in range(n_ue):
        m = np.full((n_g, n), rate.sinr_floor_db - 10.0)
        for g in range(n_g):
            samples = sorted(rows.get((u, g), []))
            if not samples:
                continue
            ts = np.array([s[0] for s in samples])
            vs = np.array([s[1] for s in samples])
            idx = np.searchsorted(ts, grid_t, side="right") - 1
            ok = idx >= 0
            m[g, ok] = vs[idx[ok]]
        mats.append(m)
    return trace_from_sinr(mats, rate, handover)


def write_sinr_csv(trace: ChannelTrace, path: str | Path, every: int = 1) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", "ue_id", "gnb_id", "sinr_db"])
        for u, m in enumerate(trace.sinr_db):
            for k in range(0, m.shape[1], every):
                for g in range(m.shape[0]):
                    w.writerow([f"{k * trace.grid_ns / 1e9:.3f}", u, g, f"{m[g, k]:.3f}"])



# ---------------------------------------------------------------------------
# complete channel configurations

MMWAVE_RATE_MAX = 3e9
LTE_RATE_MAX = 150e6


def high_speed_config(handover: bool = True, scale: float = 1.0) -> ChannelConfig:
    return ChannelConfig(
        geometry=high_speed_geometry(),
        rate=RateModel().scaled(scale),
        blockers=high_speed_blockers(),
        handover=HandoverParams(enabled=handover),
    )


def urban_config(scale: float = 1.0) -> ChannelConfig:
    return ChannelConfig(geometry=urban_geometry(), rate=RateModel().scaled(scale), blockers=urban_blockers())


def lte_config(handover: bool = True, scale: float = 1.0) -> ChannelConfig:
    """Same track and machinery on a sub-6 GHz carrier: 150 Mbit/s cap,
    milder fading, shallow blockage."""
    radio = RadioParams(carrier_ghz=2.1, fading_sigma_db=1.0)
    rate = RateModel(bandwidth_hz=100e6, rate_max=LTE_RATE_MAX).scaled(scale)
    blockers = [replace(b, blockage_loss_db=5.0) for b in high_speed_blockers()]
    return ChannelConfig(geometry=high_speed_geometry(), radio=radio, rate=rate, blockers=blockers,
                         handover=HandoverParams(enabled=handover))
