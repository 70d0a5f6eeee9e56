"""Scenario configuration: TOML schema, presets and validation.

A config file looks like::

    scenario = "high_speed"     # high_speed | urban | lte_profile
    server = "remote"           # remote | edge (urban mixes both)
    cc = "bbr"                  # newreno | highspeed | cubic | bbr | udp_reference
    mss_bytes = 1400
    buffer = "bdp"              # bdp | tenth_bdp | oversized | bytes
    aqm = "none"                # none | codel
    duration_s = 60
    warmup_s = 2
    seed = 1
    runs = 5
    scale = 1.0

    [link]
    rlc_am = true
    max_harq_retx = 3
    harq_rtt_ms = 8
    rlc_retx_timer_ms = 20

    [channel]
    handover = true
    sinr_trace = "trace.csv"    # optional external (time_s, ue_id, gnb_id, sinr_db)

    [output]
    trace = false
    trace_interval_ms = 10

Buffer presets are expanded against the scenario's peak rate and the
server's minimum RTT, after capacity scaling.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .channel import LTE_RATE_MAX, MMWAVE_RATE_MAX
from .congestion import CC_IDS

SCENARIOS = ("high_speed", "urban", "lte_profile")
SERVERS = ("remote", "edge")
CCS = tuple(CC_IDS) + ("udp_reference",)
AQMS = ("none", "codel")
BUFFER_PRESETS = ("bdp", "tenth_bdp", "oversized")
MATRIX_MSS = (1400, 14000)

# one-way server <-> gNB delays, so the minimum RTTs are 40 ms and 4 ms
ONE_WAY_MS = {"remote": 20.0, "edge": 2.0}
OVERSIZED_FACTOR = 10.0
TENTH_FACTOR = 0.1
# the small LTE buffer is half the BDP rather than a tenth
LTE_SMALL_FACTOR = 0.5
URBAN_BUFFER_BYTES = 1_500_000


class ConfigError(ValueError):
    """Raised with every violated rule listed, one per line."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


@dataclass
class LinkConfig:
    rlc_am: bool = True
    max_harq_retx: int = 3
    harq_rtt_ms: float = 8.0
    rlc_retx_timer_ms: float = 20.0


@dataclass
class ChannelOptions:
    handover: bool = True
    sinr_trace: str | None = None


@dataclass
class OutputOptions:
    trace: bool = False
    trace_interval_ms: float = 10.0


@dataclass
class ScenarioConfig:
    scenario: str = "high_speed"
    server: str = "remote"
    cc: str = "newreno"
    mss_bytes: int = 1400
    buffer: str | int = "bdp"
    aqm: str = "none"
    duration_s: float = 60.0
    warmup_s: float = 2.0
    seed: int = 1
    runs: int = 5
    scale: float = 1.0
    allow_any_mss: bool = False
    link: LinkConfig = field(default_factory=LinkConfig)
    channel: ChannelOptions = field(default_factory=ChannelOptions)
    output: OutputOptions = field(default_factory=OutputOptions)
    config_id: str = ""

    # -- derived quantities -------------------------------------------------
    @property
    def rate_max(self) -> float:
        base = LTE_RATE_MAX if self.scenario == "lte_profile" else MMWAVE_RATE_MAX
        return base * self.scale

    @property
    def min_rtt_s(self) -> float:
        return 2.0 * ONE_WAY_MS[self.server] / 1e3

    @property
    def bdp_bytes(self) -> int:
        return int(round(self.rate_max * self.min_rtt_s / 8.0))

    @property
    def buffer_bytes(self) -> int:
        """Per-UE RLC buffer after preset expansion."""
        if self.scenario == "urban":
            if isinstance(self.buffer, int):
                return self.buffer
            return int(round(URBAN_BUFFER_BYTES * self.scale))
        if isinstance(self.buffer, int):
            return self.buffer
        if self.buffer == "bdp":
            return self.bdp_bytes
        if self.buffer == "tenth_bdp":
            f = LTE_SMALL_FACTOR if self.scenario == "lte_profile" else TENTH_FACTOR
            return int(round(self.bdp_bytes * f))
        if self.buffer == "oversized":
            return int(round(self.bdp_bytes * OVERSIZED_FACTOR))
        raise ConfigError([f"buffer: unknown preset {self.buffer!r}"])

    @property
    def seeds(self) -> list[int]:
        return [self.seed + i for i in range(self.runs)]

    def label(self) -> str:
        if self.config_id:
            return self.config_id
        buf = self.buffer if isinstance(self.buffer, str) else f"{self.buffer}B"
        server = "mixed" if self.scenario == "urban" else self.server
        return f"{self.scenario}-{server}-{self.cc}-p{self.mss_bytes}-{buf}-{self.aqm}"

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Stable hash of the resolved configuration."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def validate(self) -> None:
        problems = validation_problems(self)
        if problems:
            raise ConfigError(problems)


def validation_problems(cfg: ScenarioConfig) -> list[str]:
    p: list[str] = []
    if cfg.scenario not in SCENARIOS:
        p.append(f"scenario: {cfg.scenario!r} not in {list(SCENARIOS)}")
    if cfg.server not in SERVERS:
        p.append(f"server: {cfg.server!r} not in {list(SERVERS)}")
    if cfg.cc not in CCS:
        p.append(f"cc: {cfg.cc!r} not in {list(CCS)}")
    if cfg.aqm not in AQMS:
        p.append(f"aqm: {cfg.aqm!r} not in {list(AQMS)}")
    if isinstance(cfg.mss_bytes, bool) or not isinstance(cfg.mss_bytes, int) or cfg.mss_bytes <= 0:
        p.append(f"mss_bytes: must be a positive integer, got {cfg.mss_bytes!r}")
    elif not cfg.allow_any_mss and cfg.mss_bytes not in MATRIX_MSS:
        p.append(f"mss_bytes: {cfg.mss_bytes} not in {list(MATRIX_MSS)} (set allow_any_mss to override)")
    if isinstance(cfg.buffer, str):
        if cfg.buffer not in BUFFER_PRESETS:
            p.append(f"buffer: {cfg.buffer!r} is neither a preset {list(BUFFER_PRESETS)} nor a byte count")
    elif isinstance(cfg.buffer, bool) or not isinstance(cfg.buffer, int) or cfg.buffer <= 0:
        p.append(f"buffer: byte count must be a positive integer, got {cfg.buffer!r}")
    if not cfg.duration_s >= 0:
        p.append(f"duration_s: must be >= 0, got {cfg.duration_s}")
    if not cfg.warmup_s >= 0:
        p.append(f"warmup_s: must be >= 0, got {cfg.warmup_s}")
    if cfg.duration_s > 0 and cfg.warmup_s >= cfg.duration_s:
        p.append("warmup_s: must be shorter than duration_s")
    if isinstance(cfg.runs, bool) or not isinstance(cfg.runs, int) or cfg.runs < 1:
        p.append(f"runs: must be a positive integer, got {cfg.runs!r}")
    if isinstance(cfg.seed, bool) or not isinstance(cfg.seed, int) or cfg.seed < 0:
        p.append(f"seed: must be a non-negative integer, got {cfg.seed!r}")
    if not 0 < cfg.scale <= 1.0:
        p.append(f"scale: must be in (0, 1], got {cfg.scale}")
    lk = cfg.link
    if lk.max_harq_retx < 0:
        p.append("link.max_harq_retx: must be >= 0")
    if lk.harq_rtt_ms < 0 or lk.rlc_retx_timer_ms < 0:
        p.append("link: timers must be >= 0")
    if cfg.output.trace_interval_ms <= 0:
        p.append("output.trace_interval_ms: must be > 0")
    return p


_SECTIONS = {"link": LinkConfig, "channel": ChannelOptions, "output": OutputOptions}
_TOP = {f.name for f in dataclasses.fields(ScenarioConfig)} - set(_SECTIONS)


def config_from_dict(data: dict[str, Any], base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Build and validate a config, collecting every problem before failing."""
    problems: list[str] = []
    cfg = dataclasses.replace(base) if base is not None else ScenarioConfig()
    if base is not None:
        cfg.link = dataclasses.replace(base.link)
        cfg.channel = dataclasses.replace(base.channel)
        cfg.output = dataclasses.replace(base.output)
    if base is None and "scenario" not in data:
        problems.append("scenario: missing")
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                problems.append(f"{key}: must be a table")
                continue
            sect = getattr(cfg, key)
            allowed = {f.name: f for f in dataclasses.fields(_SECTIONS[key])}
            for k, v in value.items():
                if k not in allowed:
                    problems.append(f"{key}.{k}: unknown key")
                    continue
                setattr(sect, k, v)
        elif key in _TOP:
            setattr(cfg, key, value)
        else:
            problems.append(f"{key}: unknown key")
    for name in ("duration_s", "warmup_s", "scale"):
        v = getattr(cfg, name)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            problems.append(f"{name}: must be a number, got {v!r}")
            setattr(cfg, name, 1.0)
    for name in ("harq_rtt_ms", "rlc_retx_timer_ms"):
        v = getattr(cfg.link, name)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            problems.append(f"link.{name}: must be a number, got {v!r}")
            setattr(cfg.link, name, 0.0)
    if not problems:
        problems = validation_problems(cfg)
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path: str | Path, overrides: dict[str, Any] | None = None) -> ScenarioConfig:
    """Parse a TOML config file; ``overrides`` (e.g. CLI flags) win over file keys."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError([f"{path}: file not found"]) from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"{path}: {exc}"]) from None
    for k, v in (overrides or {}).items():
        if v is not None:
            data[k] = v
    return config_from_dict(data)
