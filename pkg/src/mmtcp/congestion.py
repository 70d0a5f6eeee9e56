"""Congestion control policies behind one interface.

Every policy exposes ``cwnd`` (bytes), ``ssthresh`` (bytes), ``pacing_rate``
(bit/s, 0 when unpaced) and the callbacks ``on_ack(sample)``,
``on_loss(now, in_flight)`` and ``on_rto(now, in_flight)``. Times are integer
nanoseconds.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass

from .sim_core import NS_PER_MS, NS_PER_S, SplitMix64

INF = float("inf")
INIT_CWND_SEGS = 10


@dataclass
class AckSample:
    """What the sender learned from one ACK, handed to the policy."""

    now: int
    acked: int = 0            # bytes newly covered by the cumulative ACK
    newly_delivered: int = 0  # bytes newly acked or SACKed
    delivered: int = 0        # total bytes delivered so far
    prior_delivered: int = 0  # delivered count when the sampled segment was sent
    rtt: int = -1             # ns, -1 when no valid sample
    rate: float = -1.0        # bit/s, -1 when no valid sample
    in_flight: int = 0        # bytes considered in the network after this ACK
    lost: int = 0             # bytes newly marked lost by this ACK
    in_recovery: bool = False


def rto_ssthresh(in_flight: int, mss: int) -> float:
    return float(max(in_flight // 2, 2 * mss))


def slow_start_increase(cwnd: float, mss: int, acked: int) -> float:
    return cwnd + min(acked, mss)


def newreno_on_ack(ssthresh: float, cwnd: float, mss: int, bytes_acked: int) -> float:
    """Window after one ACK: one MSS per ACK in slow start, MSS^2/cwnd after."""
    if bytes_acked <= 0:
        return cwnd
    if cwnd < ssthresh:
        return slow_start_increase(cwnd, mss, bytes_acked)
    return cwnd + mss * mss / cwnd


class CongestionControl:
    name = "base"
    loss_based = True

    def __init__(self, mss: int, init_cwnd_segs: int = INIT_CWND_SEGS):
        self.mss = mss
        self.cwnd = float(init_cwnd_segs * mss)
        self.ssthresh = INF
        self.pacing_rate = 0.0

    def on_ack(self, s: AckSample) -> None:
        raise NotImplementedError

    def on_loss(self, now: int, in_flight: int) -> None:
        raise NotImplementedError

    def on_rto(self, now: int, in_flight: int) -> None:
        self.ssthresh = rto_ssthresh(in_flight, self.mss)
        self.cwnd = float(self.mss)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(cwnd={self.cwnd:.0f}, ssthresh={self.ssthresh:.0f})"


class NewReno(CongestionControl):
    """AIMD with alpha = 1 segment per RTT and window halving on loss."""

    name = "newreno"
    alpha = 1
    beta_divisor = 2

    def on_ack(self, s: AckSample) -> None:
        if s.acked <= 0 or s.in_recovery:
            return
        self.cwnd = newreno_on_ack(self.ssthresh, self.cwnd, self.mss, s.acked)

    def on_loss(self, now: int, in_flight: int) -> None:
        self.ssthresh = max(self.cwnd / self.beta_divisor, 2.0 * self.mss)
        self.cwnd = self.ssthresh


# ---------------------------------------------------------------------------
# HighSpeed TCP

HS_LOW_WINDOW = 38
HS_HIGH_WINDOW = 83000
HS_HIGH_P = 1e-7
HS_HIGH_DECREASE = 0.1
HS_LOW_P = 1.5 / HS_LOW_WINDOW ** 2
HS_GRID_RATIO = 1.01


def _hs_response(w: float) -> tuple[float, float]:
    # log-log interpolation of the loss rate between the two anchor windows,
    # log-linear interpolation of the decrease factor
    lw, hw = math.log(HS_LOW_WINDOW), math.log(HS_HIGH_WINDOW)
    s = (hw - lw) / (math.log(HS_HIGH_P) - math.log(HS_LOW_P))
    p = math.exp(math.log(HS_LOW_P) + (math.log(w) - lw) / s)
    b = (HS_HIGH_DECREASE - 0.5) * (math.log(w) - lw) / (hw - lw) + 0.5
    a = w * w * p * 2.0 * b / (2.0 - b)
    return a, b


def _build_hs_table() -> tuple[list[float], list[float], list[float]]:
    # the response function is defined up to High_Window; larger windows
    # keep its last (a, b), as the published table does
    ws = []
    w = float(HS_LOW_WINDOW)
    while w < HS_HIGH_WINDOW:
        ws.append(w)
        w *= HS_GRID_RATIO
    ws.append(float(HS_HIGH_WINDOW))
    As, Bs = [], []
    for w in ws:
        a, b = _hs_response(w)
        As.append(a)
        Bs.append(b)
    return ws, As, Bs


HS_W, HS_A, HS_B = _build_hs_table()
_HS_LOG_W = [math.log(w) for w in HS_W]


def highspeed_params(w: float) -> tuple[float, float]:
    """Increase a(w) (segments per RTT) and decrease b(w) for a window of ``w`` segments.

    Read from a geometric lookup table, interpolated linearly in log w, and
    held constant above High_Window.
    """
    if w < 1:
        raise ValueError("window must be at least one segment")
    if w <= HS_LOW_WINDOW:
        return 1.0, 0.5
    i = bisect.bisect_right(HS_W, w) - 1
    if i >= len(HS_W) - 1:
        return HS_A[-1], HS_B[-1]
    f = (math.log(w) - _HS_LOG_W[i]) / (_HS_LOG_W[i + 1] - _HS_LOG_W[i])
    a = HS_A[i] + f * (HS_A[i + 1] - HS_A[i])
    b = HS_B[i] + f * (HS_B[i + 1] - HS_B[i])
    return max(a, 1.0), min(b, 0.5)


class HighSpeed(CongestionControl):
    name = "highspeed"

    def on_ack(self, s: AckSample) -> None:
        if s.acked <= 0 or s.in_recovery:
            return
        if self.cwnd < self.ssthresh:
            self.cwnd = slow_start_increase(self.cwnd, self.mss, s.acked)
            return
        a, _ = highspeed_params(self.cwnd / self.mss)
        self.cwnd += a * self.mss * self.mss / self.cwnd

    def on_loss(self, now: int, in_flight: int) -> None:
        _, b = highspeed_params(max(self.cwnd / self.mss, 1.0))
        self.ssthresh = max((1.0 - b) * self.cwnd, 2.0 * self.mss)
        self.cwnd = self.ssthresh


# ---------------------------------------------------------------------------
# CUBIC

CUBIC_C = 0.4
CUBIC_BETA = 0.7


def cubic_k(w_max_segs: float, cwnd_segs: float, c: float = CUBIC_C) -> float:
    """Seconds until the cubic curve starting at ``cwnd`` returns to ``w_max``."""
    d = w_max_segs - cwnd_segs
    if d <= 0:
        return 0.0
    return (d / c) ** (1.0 / 3.0)


@dataclass
class CubicState:
    w_max: float = 0.0        # bytes
    k: float = 0.0            # seconds
    epoch_start: int = -1     # ns, -1 before the first congestion-avoidance ACK
    c_const: float = CUBIC_C
    beta_mult: float = CUBIC_BETA


def cubic_window(state: CubicState, t_since_epoch: float, mss: int) -> float:
    """Target window in bytes ``t_since_epoch`` seconds into the epoch."""
    d = t_since_epoch - state.k
    return state.w_max + state.c_const * d * d * d * mss


class Cubic(CongestionControl):
    """Cubic window growth driven by time since the last loss epoch.

    No Reno-friendly region, no hybrid slow start, no fast convergence.
    """

    name = "cubic"

    def __init__(self, mss: int, init_cwnd_segs: int = INIT_CWND_SEGS):
        super().__init__(mss, init_cwnd_segs)
        self.state = CubicState()

    def _start_epoch(self, now: int) -> None:
        st = self.state
        st.epoch_start = now
        if self.cwnd < st.w_max:
            st.k = cubic_k(st.w_max / self.mss, self.cwnd / self.mss, st.c_const)
        else:
            st.k = 0.0
            st.w_max = self.cwnd

    def target(self, now: int) -> float:
        st = self.state
        return cubic_window(st, (now - st.epoch_start) / NS_PER_S, self.mss)

    def on_ack(self, s: AckSample) -> None:
        if s.acked <= 0 or s.in_recovery:
            return
        if self.cwnd < self.ssthresh:
            self.cwnd = slow_start_increase(self.cwnd, self.mss, s.acked)
            return
        if self.state.epoch_start < 0:
            self._start_epoch(s.now)
        tgt = self.target(s.now)
        if tgt > self.cwnd:
            self.cwnd += self.mss * (tgt - self.cwnd) / self.cwnd
        else:
            self.cwnd += self.mss * self.mss / (100.0 * self.cwnd)

    def on_loss(self, now: int, in_flight: int) -> None:
        st = self.state
        st.w_max = self.cwnd
        self.cwnd = max(self.cwnd * st.beta_mult, 2.0 * self.mss)
        self.ssthresh = self.cwnd
        st.epoch_start = -1

    def on_rto(self, now: int, in_flight: int) -> None:
        # a timeout forgets the previous plateau, so the next epoch probes
        # convexly from wherever slow start leaves the window
        st = self.state
        st.w_max = 0.0
        st.epoch_start = -1
        super().on_rto(now, in_flight)


# ---------------------------------------------------------------------------
# BBR (v1)

STARTUP, DRAIN, PROBE_BW, PROBE_RTT = 0, 1, 2, 3
BBR_MODES = ("STARTUP", "DRAIN", "PROBE_BW", "PROBE_RTT")
BBR_HIGH_GAIN = 2.0 / math.log(2.0)
BBR_DRAIN_GAIN = math.log(2.0) / 2.0
BBR_CWND_GAIN = 2.0
BBR_GAIN_CYCLE = (1.25, 0.75, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
BBR_BW_WINDOW_ROUNDS = 10
BBR_RTPROP_WINDOW = 10 * NS_PER_S
BBR_PROBE_RTT_TIME = 200 * NS_PER_MS
BBR_MIN_CWND_SEGS = 4
BBR_FULL_BW_THRESH = 1.25
BBR_FULL_BW_ROUNDS = 3
BBR_INIT_RTT = NS_PER_MS


@dataclass
class BbrState:
    mode: int = STARTUP
    btl_bw: float = 0.0               # bit/s
    rt_prop: int = -1                 # ns, -1 until the first sample
    rt_prop_stamp: int = 0
    rt_prop_expired: bool = False
    pacing_gain: float = BBR_HIGH_GAIN
    cwnd_gain: float = BBR_CWND_GAIN
    cycle_index: int = 0
    cycle_stamp: int = 0
    round_count: int = 0
    next_round_delivered: int = 0
    round_start: bool = False
    full_bw: float = 0.0
    full_bw_count: int = 0
    filled_pipe: bool = False
    probe_rtt_done_stamp: int = 0
    probe_rtt_round_done: bool = False
    prior_cwnd: float = 0.0
    rto_restore: bool = False

    def bdp_bytes(self) -> float:
        if self.btl_bw <= 0.0 or self.rt_prop < 0:
            return -1.0
        return self.btl_bw * self.rt_prop / 8e9


class Bbr(CongestionControl):
    """Model-based control: pace at the estimated bottleneck rate, cap the
    window at a gain times the estimated BDP, ignore individual losses."""

    name = "bbr"
    loss_based = False

    def __init__(self, mss: int, init_cwnd_segs: int = INIT_CWND_SEGS, rng: SplitMix64 | None = None):
        super().__init__(mss, init_cwnd_segs)
        self.init_cwnd = self.cwnd
        self.rng = rng or SplitMix64(0, "bbr")
        self.state = BbrState()
        self.bw_round = [-BBR_BW_WINDOW_ROUNDS] * BBR_BW_WINDOW_ROUNDS
        self.bw_val = [0.0] * BBR_BW_WINDOW_ROUNDS
        self.pacing_rate = BBR_HIGH_GAIN * self.cwnd * 8e9 / BBR_INIT_RTT

    @property
    def min_cwnd(self) -> float:
        return float(BBR_MIN_CWND_SEGS * self.mss)

    def cwnd_cap(self) -> float:
        """cwnd_gain * estimated BDP, or -1 before both estimates exist."""
        bdp = self.state.bdp_bytes()
        return -1.0 if bdp < 0 else self.state.cwnd_gain * bdp

    # -- model updates -------------------------------------------------------
    def _update_round(self, s: AckSample) -> None:
        st = self.state
        st.round_start = False
        if s.newly_delivered > 0 and s.prior_delivered >= st.next_round_delivered:
            st.next_round_delivered = s.delivered
            st.round_count += 1
            st.round_start = True

    def _update_btl_bw(self, s: AckSample) -> None:
        st = self.state
        if s.rate > 0.0:
            i = st.round_count % BBR_BW_WINDOW_ROUNDS
            if self.bw_round[i] != st.round_count:
                self.bw_round[i] = st.round_count
                self.bw_val[i] = s.rate
            elif s.rate > self.bw_val[i]:
                self.bw_val[i] = s.rate
        best = 0.0
        for i in range(BBR_BW_WINDOW_ROUNDS):
            if st.round_count - self.bw_round[i] < BBR_BW_WINDOW_ROUNDS and self.bw_val[i] > best:
                best = self.bw_val[i]
        st.btl_bw = best

    def _inflight(self, gain: float) -> float:
        bdp = self.state.bdp_bytes()
        return -1.0 if bdp < 0 else gain * bdp

    def _enter_probe_bw(self, now: int) -> None:
        st = self.state
        st.mode = PROBE_BW
        # random start phase, never the draining 0.75 phase
        r = int(self.rng.uniform() * (len(BBR_GAIN_CYCLE) - 1))
        st.cycle_index = (len(BBR_GAIN_CYCLE) - r) % len(BBR_GAIN_CYCLE)
        st.cycle_stamp = now
        st.pacing_gain = BBR_GAIN_CYCLE[st.cycle_index]

    def _check_cycle_phase(self, s: AckSample) -> None:
        st = self.state
        if st.mode != PROBE_BW:
            return
        full = st.rt_prop >= 0 and s.now - st.cycle_stamp > st.rt_prop
        g = st.pacing_gain
        if g > 1.0:
            nxt = full and (s.lost > 0 or s.in_flight >= self._inflight(g))
        elif g < 1.0:
            nxt = full or s.in_flight <= self._inflight(1.0)
        else:
            nxt = full
        if nxt:
            st.cycle_index = (st.cycle_index + 1) % len(BBR_GAIN_CYCLE)
            st.cycle_stamp = s.now
            st.pacing_gain = BBR_GAIN_CYCLE[st.cycle_index]

    def _check_full_pipe(self) -> None:
        st = self.state
        if st.filled_pipe or not st.round_start:
            return
        if st.btl_bw >= st.full_bw * BBR_FULL_BW_THRESH:
            st.full_bw = st.btl_bw
            st.full_bw_count = 0
            return
        st.full_bw_count += 1
        if st.full_bw_count >= BBR_FULL_BW_ROUNDS:
            st.filled_pipe = True

    def _check_drain(self, s: AckSample) -> None:
        st = self.state
        if st.mode == STARTUP and st.filled_pipe:
            st.mode = DRAIN
            st.pacing_gain = BBR_DRAIN_GAIN
        if st.mode == DRAIN and s.in_flight <= self._inflight(1.0):
            self._enter_probe_bw(s.now)

    def _update_rt_prop(self, s: AckSample) -> None:
        st = self.state
        st.rt_prop_expired = st.rt_prop >= 0 and s.now > st.rt_prop_stamp + BBR_RTPROP_WINDOW
        if s.rtt >= 0 and (st.rt_prop < 0 or s.rtt <= st.rt_prop or st.rt_prop_expired):
            st.rt_prop = s.rtt
            st.rt_prop_stamp = s.now

    def _save_cwnd(self, in_recovery: bool) -> None:
        st = self.state
        if not in_recovery and st.mode != PROBE_RTT:
            st.prior_cwnd = self.cwnd
        else:
            st.prior_cwnd = max(st.prior_cwnd, self.cwnd)

    def _check_probe_rtt(self, s: AckSample) -> None:
        st = self.state
        if st.mode != PROBE_RTT and st.rt_prop_expired:
            self._save_cwnd(s.in_recovery)
            st.mode = PROBE_RTT
            st.pacing_gain = 1.0
            st.probe_rtt_done_stamp = 0
        if st.mode != PROBE_RTT:
            return
        if st.probe_rtt_done_stamp == 0 and s.in_flight <= self.min_cwnd:
            st.probe_rtt_done_stamp = s.now + BBR_PROBE_RTT_TIME
            st.probe_rtt_round_done = False
            st.next_round_delivered = s.delivered
        elif st.probe_rtt_done_stamp != 0:
            if st.round_start:
                st.probe_rtt_round_done = True
            if st.probe_rtt_round_done and s.now > st.probe_rtt_done_stamp:
                st.rt_prop_stamp = s.now
                self.cwnd = max(self.cwnd, st.prior_cwnd)
                if st.filled_pipe:
                    self._enter_probe_bw(s.now)
                else:
                    st.mode = STARTUP
                    st.pacing_gain = BBR_HIGH_GAIN

    def _set_pacing_rate(self) -> None:
        st = self.state
        if st.btl_bw <= 0.0:
            return
        rate = st.pacing_gain * st.btl_bw
        if st.filled_pipe or rate > self.pacing_rate:
            self.pacing_rate = rate

    def _set_cwnd(self, s: AckSample) -> None:
        st = self.state
        cap = self.cwnd_cap()
        if cap < 0:
            self.cwnd += s.newly_delivered
        else:
            self.cwnd = min(self.cwnd + s.newly_delivered, cap)
        if self.cwnd < self.min_cwnd:
            self.cwnd = self.min_cwnd
        if st.mode == PROBE_RTT and self.cwnd > self.min_cwnd:
            self.cwnd = self.min_cwnd

    # -- callbacks ------------------------------------------------------------
    def on_ack(self, s: AckSample) -> tuple[float, float]:
        st = self.state
        if st.rto_restore and s.acked > 0:
            self.cwnd = max(self.cwnd, st.prior_cwnd)
            st.rto_restore = False
        if st.btl_bw <= 0.0 and s.rtt > 0:
            self.pacing_rate = BBR_HIGH_GAIN * self.cwnd * 8e9 / s.rtt
        self._update_round(s)
        self._update_btl_bw(s)
        self._check_cycle_phase(s)
        self._check_full_pipe()
        self._check_drain(s)
        self._update_rt_prop(s)
        self._check_probe_rtt(s)
        self._set_pacing_rate()
        self._set_cwnd(s)
        return self.cwnd, self.pacing_rate

    def on_loss(self, now: int, in_flight: int) -> None:
        # losses alone never touch the model or the window
        return None

    def on_rto(self, now: int, in_flight: int) -> None:
        self._save_cwnd(False)
        self.state.rto_restore = True
        self.cwnd = float(self.mss)


def bbr_on_ack(bbr: Bbr, sample: AckSample) -> tuple[float, float]:
    return bbr.on_ack(sample)


CC_IDS = {"newreno": 0, "highspeed": 1, "cubic": 2, "bbr": 3}
CC_NAMES = {v: k for k, v in CC_IDS.items()}
CC_CLASSES = {"newreno": NewReno, "highspeed": HighSpeed, "cubic": Cubic, "bbr": Bbr}


def make_cc(name: str, mss: int, rng: SplitMix64 | None = None,
            init_cwnd_segs: int = INIT_CWND_SEGS) -> CongestionControl:
    try:
        cls = CC_CLASSES[name]
    except KeyError:
        raise ValueError(f"unknown congestion control {name!r}; choose from {sorted(CC_CLASSES)}") from None
    if cls is Bbr:
        return Bbr(mss, init_cwnd_segs, rng=rng)
    return cls(mss, init_cwnd_segs)
