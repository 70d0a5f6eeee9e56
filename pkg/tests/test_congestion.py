import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmtcp.congestion import (
    BBR_GAIN_CYCLE,
    PROBE_BW,
    AckSample,
    Bbr,
    Cubic,
    CubicState,
    HighSpeed,
    NewReno,
    bbr_on_ack,
    cubic_k,
    cubic_window,
    highspeed_params,
    make_cc,
    newreno_on_ack,
)
from mmtcp.sim_core import NS_PER_MS, NS_PER_S

from .oracles.highspeed_reference import response

MSS = 1400

# (a, b) from the response-function oracle, frozen
HS_GOLDEN = {
    118: (2.0944946836173, 0.44105360742345356),
    1058: (8.313686935127418, 0.3269452337411922),
    10000: (29.92834762103404, 0.21009248732548225),
    83000: (72.51578947368426, 0.1),
}


def ack(now, acked=MSS, **kw):
    return AckSample(now=now, acked=acked, newly_delivered=acked, **kw)


# -- NewReno ------------------------------------------------------------------

def test_newreno_per_ack_increase():
    assert newreno_on_ack(100_000, 140_000, MSS, MSS) == 140_014
    assert newreno_on_ack(float("inf"), 14_000, MSS, MSS) == 15_400  # slow start
    assert newreno_on_ack(0, 14_000, MSS, 0) == 14_000


def test_newreno_one_window_of_acks_adds_one_mss():
    cc = NewReno(MSS)
    cc.cwnd = cc.ssthresh = 140_000.0
    start = cc.cwnd
    for i in range(int(start // MSS)):
        cc.on_ack(ack(i))
    assert 0.9 * MSS <= cc.cwnd - start <= 1.1 * MSS


def test_newreno_halves_on_loss():
    cc = NewReno(MSS)
    cc.cwnd = 1_000_000.0
    cc.on_loss(0, 1_000_000)
    assert cc.cwnd == 500_000.0 == cc.ssthresh
    assert (cc.alpha, cc.beta_divisor) == (1, 2)


def test_loss_based_rto_response():
    for name in ("newreno", "highspeed", "cubic"):
        cc = make_cc(name, MSS)
        cc.cwnd = 500_000.0
        cc.on_rto(0, 400_000)
        assert cc.cwnd == MSS
        assert cc.ssthresh == 200_000
        cc.on_rto(0, 1000)
        assert cc.ssthresh == 2 * MSS


def test_make_cc_rejects_unknown():
    with pytest.raises(ValueError):
        make_cc("vegas", MSS)


# -- HighSpeed ----------------------------------------------------------------

@pytest.mark.parametrize("w", [1, 30, 38])
def test_highspeed_low_window_is_newreno(w):
    assert highspeed_params(w) == (1.0, 0.5)


@pytest.mark.parametrize("w", sorted(HS_GOLDEN))
def test_highspeed_matches_frozen_response_function(w):
    a, b = highspeed_params(w)
    ga, gb = HS_GOLDEN[w]
    assert a == pytest.approx(ga, rel=1e-5)
    assert b == pytest.approx(gb, rel=1e-9)


def test_highspeed_held_constant_above_high_window():
    assert highspeed_params(2e5) == highspeed_params(83000) == highspeed_params(1e7)


def test_oracle_still_produces_golden_values():
    for w, (ga, gb) in HS_GOLDEN.items():
        a, b, _ = response(w)
        assert (a, b) == pytest.approx((ga, gb), rel=1e-12)
    # rounded rows of the published table
    assert round(response(118)[0]) == 2 and round(response(1058)[0]) == 8
    assert response(83000)[2] == pytest.approx(1e-7)


@given(st.floats(1.0, 1e6), st.floats(1.0, 1e6))
def test_highspeed_a_nondecreasing_b_nonincreasing(w1, w2):
    lo, hi = min(w1, w2), max(w1, w2)
    a_lo, b_lo = highspeed_params(lo)
    a_hi, b_hi = highspeed_params(hi)
    assert a_lo <= a_hi + 1e-12
    assert b_lo >= b_hi - 1e-12


def _script(seed, n=400):
    rnd = random.Random(seed)
    return [("loss" if rnd.random() < 0.03 else "ack", rnd.choice((MSS, 2 * MSS))) for _ in range(n)]


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10 ** 6), start=st.integers(2, 38))
def test_highspeed_equals_newreno_up_to_38_segments(seed, start):
    nr, hs = NewReno(MSS), HighSpeed(MSS)
    for cc in (nr, hs):
        cc.cwnd = cc.ssthresh = float(start * MSS)
    for i, (kind, n) in enumerate(_script(seed)):
        if hs.cwnd / MSS > 38:
            break
        if kind == "loss":
            nr.on_loss(i, int(nr.cwnd))
            hs.on_loss(i, int(hs.cwnd))
        else:
            nr.on_ack(ack(i, n))
            hs.on_ack(ack(i, n))
        assert hs.cwnd == nr.cwnd
        assert hs.ssthresh == nr.ssthresh


def test_highspeed_grows_faster_at_large_windows():
    nr, hs = NewReno(MSS), HighSpeed(MSS)
    for cc in (nr, hs):
        cc.cwnd = cc.ssthresh = 10_000.0 * MSS
    for i in range(10_000):
        nr.on_ack(ack(i))
        hs.on_ack(ack(i))
    assert hs.cwnd - 10_000 * MSS > 20 * (nr.cwnd - 10_000 * MSS)
    hs.on_loss(0, int(hs.cwnd))
    assert hs.cwnd > 0.75 * 10_000 * MSS  # b(w) well below one half


# -- CUBIC --------------------------------------------------------------------

def test_cubic_k_closed_form():
    assert cubic_k(100, 70) == pytest.approx(75 ** (1 / 3), rel=1e-12)
    assert cubic_k(100, 70) == pytest.approx(4.217, abs=1e-3)
    assert cubic_k(50, 60) == 0.0


def test_cubic_target_endpoints():
    w_max = 100 * MSS
    st_ = CubicState(w_max=w_max, k=cubic_k(100, 70))
    assert cubic_window(st_, st_.k, MSS) == w_max
    assert cubic_window(st_, 0.0, MSS) == pytest.approx(0.7 * w_max, rel=1e-6)


@given(w_max=st.floats(10, 1e5), dt=st.floats(0, 100), dt2=st.floats(0, 100))
def test_cubic_nondecreasing_after_plateau(w_max, dt, dt2):
    st_ = CubicState(w_max=w_max * MSS, k=cubic_k(w_max, 0.7 * w_max))
    t1, t2 = st_.k + min(dt, dt2), st_.k + max(dt, dt2)
    assert cubic_window(st_, t1, MSS) <= cubic_window(st_, t2, MSS)
    assert cubic_window(st_, t1, MSS) >= st_.w_max


def _cubic_after_loss():
    cc = Cubic(MSS)
    cc.cwnd = 1000.0 * MSS
    cc.on_loss(0, int(cc.cwnd))
    return cc


@pytest.mark.parametrize("n_acks", [100, 1000])
def test_cubic_target_depends_only_on_time(n_acks):
    cc = _cubic_after_loss()
    t0 = 10 * NS_PER_MS
    cc.on_ack(ack(t0))
    step = 2 * NS_PER_S // n_acks
    for i in range(1, n_acks + 1):
        cc.on_ack(ack(t0 + i * step))
    ref = _cubic_after_loss()
    ref.on_ack(ack(t0))
    t_end = t0 + 2 * NS_PER_S
    assert cc.target(t_end) == ref.target(t_end)
    assert cc.state.k == pytest.approx(cubic_k(1000, 700))


def test_cubic_w_target_independent_of_rtt_but_newreno_is_not():
    curves = []
    for rtt_ms in (40, 20):
        cc = _cubic_after_loss()
        cc.on_ack(ack(0))
        t = 0
        while t < 3 * NS_PER_S:
            t += rtt_ms * NS_PER_MS // 10
            cc.on_ack(ack(t))
        curves.append([cc.target(s * NS_PER_S // 4) for s in range(12)])
    assert curves[0] == curves[1]

    finals = []
    for n in (100, 1000):
        nr = NewReno(MSS)
        nr.cwnd = nr.ssthresh = 700.0 * MSS
        for i in range(n):
            nr.on_ack(ack(i))
        finals.append(nr.cwnd)
    assert finals[0] != finals[1]


def test_cubic_rto_forgets_plateau():
    cc = _cubic_after_loss()
    cc.on_rto(0, 500 * MSS)
    assert cc.state.w_max == 0.0 and cc.cwnd == MSS


# -- BBR ----------------------------------------------------------------------

def test_bbr_cap_arithmetic():
    b = Bbr(MSS)
    b.state.btl_bw = 2.3e9
    b.state.rt_prop = 40 * NS_PER_MS
    assert b.state.bdp_bytes() == pytest.approx(11.5e6)
    assert b.cwnd_cap() == pytest.approx(23e6)


def test_bbr_gain_cycle_averages_one():
    assert BBR_GAIN_CYCLE == (1.25, 0.75, 1, 1, 1, 1, 1, 1)
    assert sum(BBR_GAIN_CYCLE) / len(BBR_GAIN_CYCLE) == 1.0


class FluidPath:
    """Drives a Bbr instance with ACK samples from a simple fixed-rate path."""

    def __init__(self, bbr, rate_bps, base_rtt, seed=0):
        self.bbr, self.rate, self.base = bbr, rate_bps, base_rtt
        self.rnd = random.Random(seed)
        self.now = 0
        self.delivered = 0
        self.sent_marks = []

    def step(self, rate_noise=0.1, rtt_noise=0.2):
        b = self.bbr
        self.now += int(MSS * 8e9 / self.rate)
        self.delivered += MSS
        # the path holds between half and one and a half BDP
        inflight = min(b.cwnd, self.rate * self.base / 8e9 * (0.5 + self.rnd.random()))
        prior = max(0, self.delivered - int(inflight))
        rtt = int(self.base * (1 + rtt_noise * self.rnd.random()))
        rate = self.rate * (1 + rate_noise * (self.rnd.random() - 0.5))
        s = AckSample(now=self.now, acked=MSS, newly_delivered=MSS, delivered=self.delivered,
                      prior_delivered=prior, rtt=rtt, rate=rate, in_flight=int(inflight))
        return bbr_on_ack(b, s)


@pytest.mark.parametrize("seed", range(5))
def test_bbr_cwnd_never_exceeds_twice_estimated_bdp(seed):
    b = Bbr(MSS)
    path = FluidPath(b, 2.3e9 * (0.5 + 0.1 * seed), 40 * NS_PER_MS, seed)
    checked = 0
    for i in range(60_000):
        cwnd, pacing = path.step()
        if i == 30_000:
            path.rate *= 0.3  # capacity drop
        bdp = b.state.bdp_bytes()
        if bdp >= 0:
            assert cwnd <= 2 * bdp + 4 * MSS + 1e-6
            checked += 1
        assert cwnd >= MSS
    assert checked > 59_000
    assert b.state.mode == PROBE_BW


def test_bbr_probe_bw_visits_whole_cycle():
    b = Bbr(MSS)
    path = FluidPath(b, 1e9, 10 * NS_PER_MS, 1)
    gains = []
    for _ in range(200_000):
        path.step(rate_noise=0.0, rtt_noise=0.0)
        if b.state.mode == PROBE_BW and (not gains or gains[-1][0] != b.state.cycle_index):
            gains.append((b.state.cycle_index, b.state.pacing_gain))
    phases = [g for _, g in gains[1:17]]
    assert len(phases) == 16
    assert sum(phases[:8]) / 8 == pytest.approx(1.0)


def test_bbr_ignores_single_loss():
    b = Bbr(MSS)
    path = FluidPath(b, 2e9, 40 * NS_PER_MS)
    for _ in range(20_000):
        path.step()
    before = (b.cwnd, b.pacing_rate, b.state.btl_bw, b.state.rt_prop)
    b.on_loss(path.now, int(b.cwnd))
    assert (b.cwnd, b.pacing_rate, b.state.btl_bw, b.state.rt_prop) == before


def test_bbr_rto_then_restore():
    b = Bbr(MSS)
    path = FluidPath(b, 2e9, 40 * NS_PER_MS)
    for _ in range(20_000):
        path.step()
    before = b.cwnd
    b.on_rto(path.now, int(b.cwnd))
    assert b.cwnd == MSS
    path.step()
    assert b.cwnd >= min(before, b.cwnd_cap())


@settings(max_examples=40, deadline=None)
@given(name=st.sampled_from(["newreno", "highspeed", "cubic", "bbr"]),
       events=st.lists(st.tuples(st.sampled_from(["ack", "loss", "rto"]), st.integers(0, 3_000_000),
                                 st.integers(1, 80)), max_size=300))
def test_cwnd_never_below_one_mss(name, events):
    cc = make_cc(name, MSS)
    now = 0
    delivered = 0
    for kind, inflight, rtt_ms in events:
        now += NS_PER_MS
        if kind == "ack":
            delivered += MSS
            cc.on_ack(AckSample(now=now, acked=MSS, newly_delivered=MSS, delivered=delivered,
                                prior_delivered=max(0, delivered - inflight), rtt=rtt_ms * NS_PER_MS,
                                rate=inflight * 8e9 / (rtt_ms * NS_PER_MS) + 1.0, in_flight=inflight))
        elif kind == "loss":
            cc.on_loss(now, inflight)
        else:
            cc.on_rto(now, inflight)
        assert cc.cwnd >= MSS
        assert math.isfinite(cc.cwnd)
