import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmtcp.link import (
    ACCEPTED,
    DROPPED,
    CoDelBuffer,
    HarqConfig,
    Pdu,
    ReorderBuffer,
    RlcBuffer,
    codel_dequeue,
    control_law,
    logistic_bler,
    rr_schedule,
    serialization_ns,
    transmit_pdu,
)
from mmtcp.sim_core import NS_PER_MS, SplitMix64

from .oracles.codel_reference import ReferenceCoDel, law_drop_times

MS = NS_PER_MS


# -- drop-tail buffer -------------------------------------------------------

def test_enqueue_into_empty_buffer():
    buf = RlcBuffer(1_500_000)
    assert buf.enqueue(Pdu(0, 0, 14_000), 0) is ACCEPTED
    assert buf.occupancy_bytes == 14_000


def test_full_buffer_drops():
    buf = RlcBuffer(14_000)
    assert buf.enqueue(Pdu(0, 0, 14_000), 0) is ACCEPTED
    assert buf.occupancy_bytes == buf.capacity_bytes
    assert buf.enqueue(Pdu(0, 1, 1), 0) is DROPPED
    assert buf.drops == 1


def test_tenth_bdp_edge_buffer_holds_ten_large_segments():
    buf = RlcBuffer(150_000)
    results = [buf.enqueue(Pdu(0, i, 14_000), 0) for i in range(11)]
    assert results == [ACCEPTED] * 10 + [DROPPED]


def test_invalid_sizes():
    with pytest.raises(ValueError):
        RlcBuffer(0)
    with pytest.raises(ValueError):
        RlcBuffer(10).enqueue(Pdu(0, 0, 0), 0)


@settings(max_examples=100, deadline=None)
@given(ops=st.lists(st.one_of(st.integers(1, 5000), st.just(0)), max_size=200),
       cap=st.integers(1000, 20000))
def test_drop_tail_occupancy_and_fifo(ops, cap):
    buf = RlcBuffer(cap)
    accepted, out = [], []
    for i, size in enumerate(ops):
        if size == 0:
            p, dropped = buf.dequeue(i)
            assert dropped == []
            if p is not None:
                out.append(p.seg)
        else:
            before = buf.occupancy_bytes
            ok = buf.enqueue(Pdu(0, i, size), i)
            # drops happen only when the PDU does not fit
            assert ok == (before + size <= cap)
            if ok:
                accepted.append(i)
        assert 0 <= buf.occupancy_bytes <= cap
        assert buf.occupancy_bytes == sum(p.size for p in buf.fifo)
    assert out == accepted[:len(out)]


def test_transfer_preserves_queued_bytes():
    old, new = RlcBuffer(100_000), RlcBuffer(100_000)
    for i in range(5):
        old.enqueue(Pdu(0, i, 1400), i)
    new.transfer_from(old)
    assert old.occupancy_bytes == 0 and len(old) == 0
    assert new.occupancy_bytes == 7000
    assert [p.seg for p in new.fifo] == list(range(5))


# -- CoDel ------------------------------------------------------------------

def _drive(buf, ref, arrivals, services, size=1400):
    """Replay arrivals (time, count) and service instants on both queues;
    returns drop instants of each. Arrivals at an instant precede service."""
    events = [(t, 0, n) for t, n in arrivals] + [(t, 1, 0) for t in services]
    events.sort()
    drops, seg = [], 0
    for t, kind, n in events:
        if kind == 0:
            for _ in range(n):
                if buf.enqueue(Pdu(0, seg, size), t):
                    ref.enqueue(t, size)
                seg += 1
        else:
            _, dropped = codel_dequeue(buf, t)
            drops.extend([t] * len(dropped))
            ref.dequeue(t)
    return drops, ref.drops


def test_control_law_spacing():
    assert control_law(0, 100 * MS, 1) == 100 * MS
    assert control_law(0, 100 * MS, 2) == int(100 * MS / math.sqrt(2))


def test_codel_drop_times_follow_interval_over_sqrt_count():
    target, interval = 5 * MS, 100 * MS
    buf = CoDelBuffer(10 ** 9, target=target, interval=interval)
    ref = ReferenceCoDel(target, interval)
    services = [k * MS for k in range(10, 2000)]
    drops, ref_drops = _drive(buf, ref, [(0, 20000)], services)
    # every dequeue sees a sojourn above target, the first at 10 ms
    expected = law_drop_times(10 * MS, interval, 12)
    assert len(drops) >= 12
    for got, want in zip(drops, expected):
        assert want <= got < want + MS  # within one 1 ms service tick
    gaps = np.diff(np.array(drops[:4]) / MS)
    assert gaps == pytest.approx([70.7, 57.7, 50.0], abs=1.0)
    assert drops[0] == 110 * MS
    assert drops == ref_drops


def test_codel_no_drop_below_target():
    buf = CoDelBuffer(10 ** 9)
    ref = ReferenceCoDel(5 * MS, 100 * MS)
    # arrivals every ms, served 4 ms later: sojourn stays below 5 ms
    arrivals = [(k * MS, 1) for k in range(3000)]
    services = [(k + 4) * MS for k in range(3000)]
    drops, ref_drops = _drive(buf, ref, arrivals, services)
    assert drops == [] and ref_drops == []
    assert buf.codel_drops == 0


def test_codel_99_ms_above_target_then_below_never_drops():
    buf = CoDelBuffer(10 ** 9)
    # packets k = 0..99 wait 10 ms; from then on they wait 1 ms
    arrivals = [(k * MS, 1) for k in range(100)] + [(k * MS + 9 * MS, 1) for k in range(100, 400)]
    services = [(k + 10) * MS for k in range(400)]
    drops, _ = _drive(buf, ReferenceCoDel(5 * MS, 100 * MS), arrivals, services)
    assert drops == []


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10 ** 6), rate=st.integers(1, 4), n=st.integers(200, 1500))
def test_codel_matches_reference_on_random_traffic(seed, rate, n):
    rnd = random.Random(seed)
    arrivals = [(k * MS, rnd.randint(0, rate)) for k in range(n)]
    # bursty service: sometimes stalls for tens of ms
    services, t = [], 0
    while t < (n + 500) * MS:
        t += MS if rnd.random() < 0.9 else rnd.randint(5, 60) * MS
        services.append(t)
    buf = CoDelBuffer(10 ** 9)
    drops, ref_drops = _drive(buf, ReferenceCoDel(5 * MS, 100 * MS), arrivals, services)
    assert drops == ref_drops


# -- round robin --------------------------------------------------------------

def test_rr_schedule_examples():
    assert rr_schedule(0, range(10)) == {u: 0.1 for u in range(10)}
    assert rr_schedule(0, [3]) == {3: 1.0}
    assert rr_schedule(5, [1, 7], n_ues=10) == {1: 0.5, 7: 0.5}
    assert rr_schedule(0, []) == {}


@given(st.sets(st.integers(0, 50), min_size=1))
def test_rr_shares_sum_to_one(ues):
    shares = rr_schedule(0, ues)
    assert set(shares) == ues
    assert sum(shares.values()) == pytest.approx(1.0)


# -- HARQ / RLC ---------------------------------------------------------------

def test_bler_curve_anchor_points():
    assert logistic_bler(-5.0) == pytest.approx(0.5)
    assert logistic_bler(0.0) == pytest.approx(0.1)
    assert HarqConfig().error_prob(0.0) == pytest.approx(0.1)


@given(st.floats(-60, 60), st.floats(-60, 60))
def test_bler_is_probability_and_nonincreasing(a, b):
    lo, hi = min(a, b), max(a, b)
    p_lo, p_hi = logistic_bler(lo), logistic_bler(hi)
    assert 0.0 <= p_hi <= p_lo <= 1.0


def test_error_free_delivery_is_pure_serialization():
    cfg = HarqConfig()
    t, attempts = transmit_pdu(1400, 1000, 2e9, cfg, SplitMix64(1), 0.0)
    assert t == 1000 + serialization_ns(1400, 2e9) == 1000 + 5600
    assert attempts == 1


def test_harq_extra_delay_is_geometric():
    """With unbounded HARQ and p = 0.1 the mean extra delay is d * p / (1 - p)."""
    d = 8 * MS
    cfg = HarqConfig(max_harq_retx=10 ** 6, harq_rtt=d)
    rng = SplitMix64(42, "harq-test")
    n = 40000
    base = serialization_ns(1400, 1e9)
    extra = [transmit_pdu(1400, 0, 1e9, cfg, rng, 0.1)[0] - base for _ in range(n)]
    assert np.mean(extra) / d == pytest.approx(0.1 / 0.9, abs=0.01)


def test_without_rlc_am_exhausted_harq_loses_the_pdu():
    cfg = HarqConfig(rlc_am_enabled=False)
    t, attempts = transmit_pdu(1400, 0, 1e9, cfg, SplitMix64(0), 1.0)
    assert t is None
    assert attempts == cfg.max_harq_retx + 1


def test_rlc_am_always_delivers_eventually():
    cfg = HarqConfig()
    rng = SplitMix64(3)
    for _ in range(2000):
        t, _ = transmit_pdu(1400, 0, 1e9, cfg, rng, 0.6)
        assert t is not None
    # a round of HARQ failures costs the RLC retransmission timer
    t, attempts = transmit_pdu(1400, 0, 1e9, cfg, SplitMix64(0), lambda now: 1.0 if now < 30 * MS else 0.0)
    assert attempts > cfg.max_harq_retx + 1
    assert t >= cfg.rlc_retx_timer + cfg.max_harq_retx * cfg.harq_rtt


def test_zero_capacity_is_rejected():
    with pytest.raises(ValueError):
        transmit_pdu(1400, 0, 0.0, HarqConfig(), SplitMix64(0), 0.0)


def test_reorder_buffer_releases_in_order():
    rb = ReorderBuffer()
    a, b, c = Pdu(0, 0, 1), Pdu(0, 1, 1), Pdu(0, 2, 1)
    assert rb.push(1, b) == []
    assert rb.push(2, c) == []
    assert rb.push(0, a) == [a, b, c]
    assert rb.push(0, a) == []  # stale
    # a PDU declared lost is skipped rather than blocking the stream
    d = Pdu(0, 4, 1)
    assert rb.push(4, d) == []
    assert rb.push(3, None) == [d]
    assert len(rb) == 0
