"""The compiled engine must reproduce the Python engine exactly."""

import dataclasses

import numpy as np
import pytest

from mmtcp import backend, engine
from mmtcp.config import ScenarioConfig
from mmtcp.engine import EngineSpec, FlowSpec, UeLinkSpec
from mmtcp.harness import channel_for, engine_spec
from mmtcp.link import HarqConfig

needs_c = pytest.mark.skipif("cython" not in backend.available(), reason="compiled engine not built")


def _spec(seed, aqm="none", am=True, udp=False, n_ue=3, ccs=("newreno", "cubic", "highspeed", "bbr"),
          buf=2_000_000, rwnd=None, dur=1_500_000_000):
    """Synthetic multi-UE spec with wandering capacity, outages and high BLER."""
    n = dur // 1_000_000 + 1
    rng = np.random.default_rng(seed)
    caps, pes = [], []
    for u in range(n_ue):
        c = np.clip(1.5e9 + 1e9 * np.sin(np.arange(n) / 300.0 + u) + rng.normal(0, 2e8, n), 0, 3e9)
        c[(np.arange(n) // 400) % 7 == u] = 0.0
        caps.append(c)
        pes.append(rng.uniform(0, 0.3, n))
    flows = [FlowSpec(ue=i % n_ue, cc=c, **({"rwnd": rwnd} if rwnd else {})) for i, c in enumerate(ccs)]
    if udp:
        flows.append(FlowSpec(ue=0, kind="udp", udp_rate=3e8))
    return EngineSpec(flows=flows, ues=[UeLinkSpec(buf, aqm) for _ in range(n_ue)], capacity=caps, error_prob=pes,
                      duration_ns=dur, warmup_ns=dur // 5, seed=seed, harq=HarqConfig(rlc_am_enabled=am),
                      trace_interval_ns=10_000_000)


CASES = {
    "drop_tail": {},
    "codel": {"aqm": "codel"},
    "am_off": {"am": False},
    "udp_mix": {"udp": True},
    "single_bbr": {"n_ue": 1, "ccs": ("bbr",)},
    "tiny_buffer_everything": {"buf": 50_000, "am": False, "aqm": "codel", "udp": True},
    "small_rwnd": {"rwnd": 200_000, "am": False},
}


@needs_c
@pytest.mark.parametrize("name", CASES)
def test_backends_identical_on_synthetic_links(name):
    spec = _spec(7, **CASES[name])
    a = backend.run_engine(spec, "python")
    b = backend.run_engine(spec, "cython")
    assert dataclasses.asdict(a) == dataclasses.asdict(b)
    assert a.events > 1000


@needs_c
@pytest.mark.parametrize("cc", ["newreno", "bbr"])
def test_backends_identical_on_scenario_trace(cc):
    cfg = ScenarioConfig(cc=cc, scale=0.1, duration_s=3.0, warmup_s=0.5, buffer="tenth_bdp")
    spec, _ = engine_spec(cfg, 2, channel_for(cfg, 2))
    a = engine.run_engine(spec)
    b = backend.run_engine(spec, "cython")
    assert dataclasses.asdict(a) == dataclasses.asdict(b)


def test_backend_selection(monkeypatch):
    monkeypatch.setenv("MMTCP_BACKEND", "python")
    assert backend.default_backend() == "python"
    monkeypatch.setenv("MMTCP_BACKEND", "fortran")
    with pytest.raises(ValueError):
        backend.default_backend()
    with pytest.raises(ValueError):
        backend.run_engine(_spec(1, dur=10_000_000), "fortran")


def test_spec_validation():
    spec = _spec(1, dur=10_000_000)
    spec.flows.append(FlowSpec(ue=9))
    with pytest.raises(ValueError, match="unknown UE"):
        engine.run_engine(spec)
