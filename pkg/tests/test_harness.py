import csv
import json
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mmtcp.cli import main
from mmtcp.config import ConfigError, ScenarioConfig, config_from_dict, load_config
from mmtcp.harness import (
    RequirementBox,
    experiment_matrix,
    flows_for,
    jain_index,
    receive_window,
    run,
)
from mmtcp.report import SUMMARY_HEADER, emit_report

ROOT = Path(__file__).resolve().parent.parent


def _small(**kw):
    base = dict(scale=0.1, duration_s=4.0, warmup_s=1.0, runs=2, seed=3)
    base.update(kw)
    return ScenarioConfig(**base)


# -- configuration ------------------------------------------------------------

def test_buffer_presets_expand_against_bdp():
    remote = ScenarioConfig(server="remote", buffer="bdp")
    assert remote.bdp_bytes == 15_000_000
    assert remote.buffer_bytes == 15_000_000
    edge = ScenarioConfig(server="edge", buffer="tenth_bdp")
    assert edge.buffer_bytes == 150_000
    assert ScenarioConfig(buffer="oversized").buffer_bytes == 150_000_000
    assert ScenarioConfig(buffer=123_456).buffer_bytes == 123_456
    # scaling shrinks rate and buffer together
    assert ScenarioConfig(scale=0.1).buffer_bytes == 1_500_000


def test_lte_small_buffer_is_half_bdp():
    cfg = ScenarioConfig(scenario="lte_profile", buffer="tenth_bdp")
    assert cfg.bdp_bytes == 750_000
    assert cfg.buffer_bytes == 375_000


def test_unsupported_mss_is_rejected_unless_allowed():
    with pytest.raises(ConfigError, match="mss_bytes"):
        ScenarioConfig(mss_bytes=9000).validate()
    ScenarioConfig(mss_bytes=9000, allow_any_mss=True).validate()


def test_every_problem_is_listed():
    with pytest.raises(ConfigError) as exc:
        config_from_dict({"scenario": "moon", "cc": "vegas", "bogus": 1, "link": {"nope": 2}})
    text = str(exc.value)
    assert "bogus: unknown key" in text
    assert "link.nope: unknown key" in text
    with pytest.raises(ConfigError) as exc:
        config_from_dict({"scenario": "moon", "cc": "vegas", "runs": 0})
    assert len(exc.value.problems) == 3


def test_missing_scenario_is_an_error():
    with pytest.raises(ConfigError, match="scenario: missing"):
        config_from_dict({"cc": "bbr"})


def test_load_config_from_toml_with_overrides(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('scenario = "high_speed"\ncc = "cubic"\nbuffer = "tenth_bdp"\n[link]\nrlc_am = false\n')
    cfg = load_config(p, {"runs": 2, "seed": None})
    assert cfg.cc == "cubic" and cfg.runs == 2 and cfg.seed == 1
    assert cfg.link.rlc_am is False
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("scenario = \n")
    with pytest.raises(ConfigError):
        load_config(bad)


@pytest.mark.parametrize("path", sorted((ROOT / "configs").glob("*.toml")), ids=lambda p: p.name)
def test_shipped_configs_load(path):
    cfg = load_config(path)
    assert cfg.buffer_bytes > 0


def test_digest_is_stable_and_sensitive():
    a, b = ScenarioConfig(cc="bbr"), ScenarioConfig(cc="bbr")
    assert a.digest() == b.digest()
    assert a.digest() != ScenarioConfig(cc="cubic").digest()


# -- matrix and flows ---------------------------------------------------------

def test_experiment_matrix_has_66_unique_configs():
    cfgs = experiment_matrix()
    assert len(cfgs) == 66
    assert len({c.config_id for c in cfgs}) == 66
    assert sum(c.cc == "udp_reference" for c in cfgs) == 2
    for c in cfgs:
        c.validate()


def test_urban_scenario_has_ten_mixed_flows():
    flows, meta, n_ue = flows_for(ScenarioConfig(scenario="urban"))
    assert n_ue == 10 and len(flows) == 10
    classes = [m.ue_class for m in meta]
    assert classes.count("LOS") == 4 and classes.count("NLOS") == 4 and classes.count("INDOOR") == 2
    assert [m.server for m in meta] == ["remote", "edge"] * 5
    assert flows[1].delay_down < flows[0].delay_down


def test_udp_reference_is_a_saturating_udp_flow():
    flows, _, _ = flows_for(ScenarioConfig(cc="udp_reference"))
    assert flows[0].kind == "udp" and flows[0].udp_rate == 3e9


def test_receive_window_covers_buffer_plus_bdp():
    cfg = ScenarioConfig(buffer="bdp")
    assert receive_window(cfg, "remote") == 2 * (cfg.buffer_bytes + 15_000_000)


# -- fairness and requirement box -------------------------------------------

def test_jain_index_examples():
    assert jain_index([1, 1, 1, 1]) == pytest.approx(1.0)
    assert jain_index([1, 0, 0, 0]) == pytest.approx(0.25)
    assert jain_index([2, 1]) == pytest.approx(0.9)
    assert jain_index([0, 0]) is None
    with pytest.raises(ValueError):
        jain_index([1, -1])


@given(st.lists(st.floats(0.0, 1e10), min_size=1, max_size=30))
def test_jain_index_bounds(rates):
    j = jain_index(rates)
    if j is not None:
        assert 1.0 / len(rates) - 1e-9 <= j <= 1.0 + 1e-9


def test_requirement_box():
    box = RequirementBox()
    assert box.contains(150e6, 5.0)
    assert not box.contains(100e6, 5.0)
    assert not box.contains(150e6, 10.0)
    assert box.scaled(0.1).min_goodput_bps == pytest.approx(10e6)


# -- running --------------------------------------------------------------

def test_zero_duration_gives_empty_report(tmp_path):
    rep = run(ScenarioConfig(duration_s=0, warmup_s=0))
    assert rep.empty and rep.flows == []
    emit_report(rep, tmp_path)
    rows = list(csv.reader(open(tmp_path / "summary.csv")))
    assert tuple(rows[0]) == SUMMARY_HEADER
    assert rows[1][-1] == "0"


@pytest.fixture(scope="module")
def small_runs():
    tcp = run(_small(cc="cubic"))
    udp = run(_small(cc="udp_reference"))
    return tcp, udp


def test_goodput_bounded_by_capacity_and_udp(small_runs):
    tcp, udp = small_runs
    for r in tcp.runs:
        f = r.result.flows[0]
        window_s = 3.0
        assert f.goodput_bps == pytest.approx(f.delivered_bytes * 8 / window_s)
        # bytes served before the window may still land inside it: allow one BDP
        slack = tcp.config.bdp_bytes * 8 / window_s
        assert f.goodput_bps <= r.mean_capacity_bps[0] + slack
        assert f.goodput_bps > 0.3 * r.mean_capacity_bps[0]
        assert not f.aborted
    assert udp.flows[0].goodput_bps >= 0.97 * tcp.flows[0].goodput_bps


def test_report_files_are_reproducible(tmp_path, small_runs):
    tcp, _ = small_runs
    again = run(_small(cc="cubic"))
    emit_report(tcp, tmp_path / "a")
    emit_report(again, tmp_path / "b")
    for name in ("summary.csv", "per_flow.csv", "per_seed.csv", "scatter.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["runs"][0]["config_hash"] == tcp.config.digest()
    assert man["runs"][0]["seeds"] == [3, 4]


def test_cli_run_and_trace(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text('scenario = "high_speed"\nserver = "edge"\ncc = "bbr"\nbuffer = "tenth_bdp"\n'
                   'duration_s = 2\nwarmup_s = 0.5\n')
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--runs", "1", "--scale", "0.1", "--out-dir", str(out)]) == 0
    assert (out / "summary.csv").exists() and (out / "manifest.json").exists()
    assert "goodput" in capsys.readouterr().out
    tr = tmp_path / "tr"
    assert main(["trace", "--config", str(cfg), "--runs", "1", "--scale", "0.1", "--interval-ms", "50",
                 "--out-dir", str(tr)]) == 0
    cwnd = sorted(tr.glob("cwnd_*.csv"))
    queue = sorted(tr.glob("queue_*.csv"))
    assert cwnd and queue
    assert cwnd[0].read_text().splitlines()[0] == "time_s,flow_id,cwnd_bytes,srtt_ms,in_flight,event_tag"
    assert queue[0].read_text().splitlines()[0] == "time_s,buffer_id,occupancy_bytes,sojourn_ms,drop_flag"


def test_cli_rejects_bad_config(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text('scenario = "high_speed"\ncc = "vegas"\n')
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 2
    assert "cc:" in capsys.readouterr().err
