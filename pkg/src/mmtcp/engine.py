"""Packet-level data plane of one simulation run (pure-Python backend).

A run is described by an :class:`EngineSpec`: flows (TCP or constant-rate
UDP), per-UE RLC buffers, the precomputed per-UE capacity and block error
probability on the 1 ms grid, and link-layer settings. The compiled backend
implements the same event logic operation for operation, so both produce
identical :class:`EngineResult` values for the same spec.

Path model: server -> (NIC serialization, one-way delay) -> gNB RLC buffer of
the UE -> TTI-scheduled radio link with HARQ/RLC retransmission -> RLC
reordering -> TCP receiver -> ACK over a lossless uplink with a fixed delay.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .congestion import make_cc
from .link import CoDelBuffer, HarqConfig, Pdu, RlcBuffer
from .sim_core import NS_PER_MS, SplitMix64
from .tcp import (CAUSE_CHANNEL, CAUSE_QUEUE, DEFAULT_RWND, INIT_RTO, MAX_RTO, MAX_RTO_RETRIES, MIN_RTO,
                  TcpReceiver, TcpSender)

# event kinds (also the tie-break-free payload tags of the heap)
EV_TTI, EV_DL, EV_UL, EV_DEPART, EV_HARQ, EV_RTO, EV_PACE, EV_UDP, EV_WARMUP, EV_TRACE = range(10)

SLOT_PENDING, SLOT_READY, SLOT_LOST = 0, 1, 2


@dataclass
class FlowSpec:
    ue: int
    kind: str = "tcp"            # "tcp" or "udp"
    cc: str = "newreno"
    mss: int = 1400
    delay_down: int = 20 * NS_PER_MS
    delay_up: int = 20 * NS_PER_MS
    udp_rate: float = 0.0
    rwnd: int = DEFAULT_RWND     # receive window, bytes


@dataclass
class UeLinkSpec:
    buffer_bytes: int
    aqm: str = "none"            # "none" or "codel"


@dataclass
class EngineSpec:
    flows: list[FlowSpec]
    ues: list[UeLinkSpec]
    capacity: list[np.ndarray]   # per UE, bit/s on the grid
    error_prob: list[np.ndarray]  # per UE, block error probability on the grid
    duration_ns: int
    warmup_ns: int = 0
    grid_ns: int = NS_PER_MS
    seed: int = 0
    harq: HarqConfig = field(default_factory=HarqConfig)
    nic_rate: float = 100e9
    min_rto: int = MIN_RTO
    init_rto: int = INIT_RTO
    max_rto: int = MAX_RTO
    max_rto_retries: int = MAX_RTO_RETRIES
    init_cwnd_segs: int = 10
    codel_target: int = 5 * NS_PER_MS
    codel_interval: int = 100 * NS_PER_MS
    trace_interval_ns: int = 0

    def validate(self) -> None:
        if not self.ues:
            raise ValueError("at least one UE is required")
        if len(self.capacity) != len(self.ues) or len(self.error_prob) != len(self.ues):
            raise ValueError("capacity/error_prob must have one array per UE")
        for f in self.flows:
            if not 0 <= f.ue < len(self.ues):
                raise ValueError(f"flow attached to unknown UE {f.ue}")
            if f.kind not in ("tcp", "udp"):
                raise ValueError(f"unknown flow kind {f.kind!r}")
            if f.kind == "udp" and f.udp_rate <= 0:
                raise ValueError("UDP flows need a positive rate")
            if f.mss <= 0:
                raise ValueError("MSS must be positive")
        for u in self.ues:
            if u.aqm not in ("none", "codel"):
                raise ValueError(f"unknown AQM {u.aqm!r}")
        if self.duration_ns < 0 or self.warmup_ns < 0:
            raise ValueError("durations must be non-negative")


@dataclass
class FlowResult:
    delivered_bytes: int = 0      # in-order bytes delivered inside the measurement window
    goodput_bps: float = 0.0
    rtt_sum_ns: float = 0.0
    rtt_samples: int = 0
    sent: int = 0
    retransmits: int = 0
    chan_retx: int = 0
    queue_retx: int = 0
    spurious_retx: int = 0
    recoveries: int = 0
    rtos: int = 0
    max_backoff: int = 0
    aborted: bool = False
    queue_drops: int = 0
    chan_losses: int = 0
    duplicates: int = 0
    final_cwnd: float = 0.0
    srtt_ns: float = -1.0

    @property
    def mean_rtt_ms(self) -> float:
        return self.rtt_sum_ns / self.rtt_samples / 1e6 if self.rtt_samples else float("nan")


@dataclass
class UeResult:
    served_bytes: int = 0
    airtime: float = 0.0          # sum of TTI shares granted while backlogged
    backlogged_ttis: int = 0
    tail_drops: int = 0
    codel_drops: int = 0
    harq_retx: int = 0
    rlc_retx: int = 0
    max_occupancy: int = 0


@dataclass
class EngineResult:
    flows: list[FlowResult]
    ues: list[UeResult]
    events: int
    flow_trace: list[tuple] = field(default_factory=list)
    queue_trace: list[tuple] = field(default_factory=list)


def ceil_div_ns(bits: float, rate: float) -> int:
    return int(math.ceil(bits * 1e9 / rate))


class PyEngine:
    def __init__(self, spec: EngineSpec):
        spec.validate()
        self.spec = spec
        self.heap: list[tuple] = []
        self.seq = 0
        self.now = 0
        self.events = 0
        n_u = len(spec.ues)
        n_f = len(spec.flows)
        self.n_steps = len(spec.capacity[0])
        self.cap = [np.asarray(c, dtype=float).tolist() for c in spec.capacity]
        self.pe = [np.asarray(p, dtype=float).tolist() for p in spec.error_prob]
        self.bufs = []
        for u in spec.ues:
            if u.aqm == "codel":
                self.bufs.append(CoDelBuffer(u.buffer_bytes, spec.codel_target, spec.codel_interval))
            else:
                self.bufs.append(RlcBuffer(u.buffer_bytes))
        self.busy = [False] * n_u
        self.head = [None] * n_u
        self.rem = [0.0] * n_u
        self.rate = [0.0] * n_u
        self.last = [0] * n_u
        self.token = [0] * n_u
        self.tti_nb = 0
        self.sn_next = [0] * n_u
        self.rx_next = [0] * n_u
        self.slots: list[dict] = [dict() for _ in range(n_u)]
        self.harq_rng = [SplitMix64(spec.seed, f"harq/{u}") for u in range(n_u)]
        self.ue_res = [UeResult() for _ in range(n_u)]
        self.flow_res = [FlowResult() for _ in range(n_f)]
        self.senders: list[TcpSender | None] = []
        self.receivers: list[TcpReceiver | None] = []
        for i, f in enumerate(spec.flows):
            if f.kind == "tcp":
                cc = make_cc(f.cc, f.mss, rng=SplitMix64(spec.seed, f"bbr/{i}"), init_cwnd_segs=spec.init_cwnd_segs)
                s = TcpSender(cc, f.mss, flow_id=i, min_rto=spec.min_rto, init_rto=spec.init_rto,
                              max_rto=spec.max_rto, max_rto_retries=spec.max_rto_retries, rwnd=f.rwnd)
                s.measure_from = spec.warmup_ns
                self.senders.append(s)
                self.receivers.append(TcpReceiver(f.mss))
            else:
                self.senders.append(None)
                self.receivers.append(None)
        self.nic_free = [0] * n_f
        self.nic_ser = [ceil_div_ns(f.mss * 8.0, spec.nic_rate) for f in spec.flows]
        self.dl = [deque() for _ in range(n_f)]
        self.ul = [deque() for _ in range(n_f)]
        self.rto_pending = [-1] * n_f
        self.pace_pending = [False] * n_f
        self.udp_count = [0] * n_f
        self.udp_delivered = [0] * n_f
        self.udp_acc = [0] * n_f
        self.udp_step = []
        for f in spec.flows:
            rate = max(1, int(f.udp_rate))
            q, r = divmod(f.mss * 8 * 1_000_000_000, rate)
            self.udp_step.append((q, r, rate))
        self.delivered_at_warmup = [0] * n_f
        self.flow_trace: list[tuple] = []
        self.queue_trace: list[tuple] = []

    # -- queue ------------------------------------------------------------------
    def post(self, t: int, kind: int, a: int = 0, b: int = 0) -> None:
        heapq.heappush(self.heap, (t, self.seq, kind, a, b))
        self.seq += 1

    def grid_index(self, t: int) -> int:
        k = t // self.spec.grid_ns
        return k if k < self.n_steps else self.n_steps - 1

    # -- server side -----------------------------------------------------------
    def send_segment(self, f: int, x: int, now: int) -> None:
        t = max(now, self.nic_free[f]) + self.nic_ser[f]
        self.nic_free[f] = t
        line = self.dl[f]
        if not line:
            self.post(t + self.spec.flows[f].delay_down, EV_DL, f)
        line.append((t + self.spec.flows[f].delay_down, x))

    def try_send(self, f: int, now: int) -> None:
        s = self.senders[f]
        while s.can_send():
            if s.pacing_blocked(now):
                if not self.pace_pending[f]:
                    self.pace_pending[f] = True
                    self.post(s.next_send_time, EV_PACE, f)
                break
            x = s.next_segment(now)
            self.send_segment(f, x, now)
        self.arm_rto(f)

    def arm_rto(self, f: int) -> None:
        d = self.senders[f].rto_deadline
        if d >= 0 and (self.rto_pending[f] < 0 or d < self.rto_pending[f]):
            self.rto_pending[f] = d
            self.post(d, EV_RTO, f)

    def on_rto_event(self, f: int, now: int) -> None:
        if self.rto_pending[f] != now:
            return
        self.rto_pending[f] = -1
        s = self.senders[f]
        d = s.rto_deadline
        if d < 0:
            return
        if now < d:
            self.rto_pending[f] = d
            self.post(d, EV_RTO, f)
            return
        alive = s.on_rto(now)
        if self.spec.trace_interval_ns:
            self.flow_trace.append((now, f, s.cc.cwnd, s.rtt.srtt, s.in_flight, "rto"))
        if alive:
            self.try_send(f, now)

    def on_ack(self, f: int, ack_no: int, trig: int, now: int) -> None:
        s = self.senders[f]
        rec_before = s.stats.recoveries
        s.on_ack(ack_no, (), now, trig)
        if self.spec.trace_interval_ns and s.stats.recoveries != rec_before:
            self.flow_trace.append((now, f, s.cc.cwnd, s.rtt.srtt, s.in_flight, "loss"))
        if not s.aborted:
            self.try_send(f, now)

    # -- gNB side ---------------------------------------------------------------
    def drop(self, f: int, x: int, ue: int, now: int, sojourn: int) -> None:
        self.flow_res[f].queue_drops += 1
        s = self.senders[f]
        if s is not None:
            s.mark_dropped(x, CAUSE_QUEUE)
        if self.spec.trace_interval_ns:
            self.queue_trace.append((now, ue, self.bufs[ue].occupancy_bytes, sojourn, 1))

    def enqueue(self, f: int, x: int, now: int) -> None:
        fs = self.spec.flows[f]
        ue = fs.ue
        buf = self.bufs[ue]
        pdu = Pdu(f, x, fs.mss)
        if not buf.enqueue(pdu, now):
            self.ue_res[ue].tail_drops += 1
            hd = buf.head()
            self.drop(f, x, ue, now, now - hd.enqueued_at if hd is not None else 0)
            return
        if buf.occupancy_bytes > self.ue_res[ue].max_occupancy:
            self.ue_res[ue].max_occupancy = buf.occupancy_bytes
        if not self.busy[ue]:
            if self.rate[ue] == 0.0 and self.tti_nb == 0:
                self.rate[ue] = self.cap[ue][self.grid_index(now)]
                self.tti_nb = 1
            self.start_service(ue, now)

    def start_service(self, ue: int, now: int) -> None:
        buf = self.bufs[ue]
        pdu, dropped = buf.dequeue(now)
        for d in dropped:
            self.ue_res[ue].codel_drops += 1
            self.drop(d.flow, d.seg, ue, now, now - d.enqueued_at)
        if pdu is None:
            self.busy[ue] = False
            self.head[ue] = None
            return
        self.busy[ue] = True
        self.head[ue] = pdu
        self.rem[ue] = pdu.size * 8.0
        self.last[ue] = now
        self.schedule_departure(ue, now)

    def schedule_departure(self, ue: int, now: int) -> None:
        self.token[ue] += 1
        r = self.rate[ue]
        if r > 0.0:
            self.post(now + ceil_div_ns(self.rem[ue], r), EV_DEPART, ue, self.token[ue])

    def on_tti(self, k: int, now: int) -> None:
        nb = 0
        n_u = len(self.bufs)
        back = [False] * n_u
        for u in range(n_u):
            if self.busy[u] or len(self.bufs[u]) > 0:
                back[u] = True
                nb += 1
        share = 1.0 / nb if nb else 0.0
        kk = k if k < self.n_steps else self.n_steps - 1
        measuring = now >= self.spec.warmup_ns
        for u in range(n_u):
            new_rate = share * self.cap[u][kk] if back[u] else 0.0
            if self.busy[u]:
                rem = self.rem[u] - self.rate[u] * (now - self.last[u]) / 1e9
                self.rem[u] = rem if rem > 0.0 else 0.0
                self.last[u] = now
                if new_rate != self.rate[u]:
                    self.rate[u] = new_rate
                    self.schedule_departure(u, now)
            else:
                self.rate[u] = new_rate
                self.last[u] = now
            if back[u] and measuring:
                self.ue_res[u].airtime += share
                self.ue_res[u].backlogged_ttis += 1
        self.tti_nb = nb
        t_next = now + self.spec.grid_ns
        if t_next < self.spec.duration_ns:
            self.post(t_next, EV_TTI, k + 1)

    def on_depart(self, ue: int, token: int, now: int) -> None:
        if token != self.token[ue]:
            return
        pdu = self.head[ue]
        self.busy[ue] = False
        self.head[ue] = None
        if now >= self.spec.warmup_ns:
            self.ue_res[ue].served_bytes += pdu.size
        self.radio_transmit(ue, pdu, now)
        self.last[ue] = now
        self.start_service(ue, now)

    def radio_transmit(self, ue: int, pdu: Pdu, now: int) -> None:
        h = self.spec.harq
        rng = self.harq_rng[ue]
        pe = self.pe[ue]
        sn = self.sn_next[ue]
        self.sn_next[ue] = sn + 1
        t = now
        attempts = 0
        outcome = SLOT_PENDING
        end = self.spec.duration_ns
        ur = self.ue_res[ue]
        while True:
            ok = False
            for j in range(h.max_harq_retx + 1):
                attempts += 1
                if rng.uniform() >= pe[self.grid_index(t)]:
                    ok = True
                    break
                if j < h.max_harq_retx:
                    t += h.harq_rtt
            if ok:
                outcome = SLOT_READY
                break
            if not h.rlc_am_enabled:
                outcome = SLOT_LOST
                break
            ur.rlc_retx += 1
            t += h.rlc_retx_timer
            if t > end:
                break
        ur.harq_retx += attempts - 1
        if outcome == SLOT_LOST:
            self.flow_res[pdu.flow].chan_losses += 1
            s = self.senders[pdu.flow]
            if s is not None:
                s.mark_dropped(pdu.seg, CAUSE_CHANNEL)
        if outcome == SLOT_READY and t == now:
            self.slots[ue][sn] = [SLOT_READY, pdu.flow, pdu.seg, SLOT_READY]
            self.release(ue, now)
            return
        self.slots[ue][sn] = [SLOT_PENDING, pdu.flow, pdu.seg, outcome]
        if outcome != SLOT_PENDING:
            self.post(t, EV_HARQ, ue, sn)

    def on_harq(self, ue: int, sn: int, now: int) -> None:
        slot = self.slots[ue][sn]
        slot[0] = slot[3]
        self.release(ue, now)

    def release(self, ue: int, now: int) -> None:
        slots = self.slots[ue]
        nxt = self.rx_next[ue]
        while nxt < self.sn_next[ue]:
            slot = slots.get(nxt)
            if slot is None or slot[0] == SLOT_PENDING:
                break
            del slots[nxt]
            nxt += 1
            if slot[0] == SLOT_READY:
                self.rx_next[ue] = nxt
                self.deliver(slot[1], slot[2], now)
        self.rx_next[ue] = nxt

    # -- UE side ------------------------------------------------------------------
    def deliver(self, f: int, x: int, now: int) -> None:
        fs = self.spec.flows[f]
        r = self.receivers[f]
        if r is None:
            self.udp_delivered[f] += fs.mss
            return
        ack_no = r.on_data_idx(x)
        line = self.ul[f]
        t = now + fs.delay_up
        if not line:
            self.post(t, EV_UL, f)
        line.append((t, ack_no, x))

    # -- UDP source -------------------------------------------------------------
    def on_udp(self, f: int, now: int) -> None:
        """Constant-rate source: packet k leaves at floor(k * bits * 1e9 / rate)."""
        k = self.udp_count[f]
        self.udp_count[f] = k + 1
        self.send_segment(f, k, now)
        q, r, rate = self.udp_step[f]
        acc = self.udp_acc[f] + r
        t = now + q
        if acc >= rate:
            acc -= rate
            t += 1
        self.udp_acc[f] = acc
        if t <= self.spec.duration_ns:
            self.post(t, EV_UDP, f)

    # -- measurement ---------------------------------------------------------------
    def delivered_now(self, f: int) -> int:
        r = self.receivers[f]
        return r.delivered_bytes if r is not None else self.udp_delivered[f]

    def on_warmup(self) -> None:
        for f in range(len(self.spec.flows)):
            self.delivered_at_warmup[f] = self.delivered_now(f)

    def on_trace(self, now: int) -> None:
        for f, s in enumerate(self.senders):
            if s is not None:
                self.flow_trace.append((now, f, s.cc.cwnd, s.rtt.srtt, s.in_flight, "sample"))
        for u, buf in enumerate(self.bufs):
            hd = buf.head()
            soj = now - hd.enqueued_at if hd is not None else 0
            self.queue_trace.append((now, u, buf.occupancy_bytes, soj, 0))
        t = now + self.spec.trace_interval_ns
        if t <= self.spec.duration_ns:
            self.post(t, EV_TRACE)

    # -- main loop -------------------------------------------------------------------
    def run(self) -> EngineResult:
        spec = self.spec
        end = spec.duration_ns
        if end > 0:
            self.post(0, EV_TTI, 0)
            if spec.warmup_ns <= end:
                self.post(spec.warmup_ns, EV_WARMUP)
            if spec.trace_interval_ns > 0:
                self.post(0, EV_TRACE)
            for f, fs in enumerate(spec.flows):
                if fs.kind == "udp":
                    self.post(0, EV_UDP, f)
            for f, s in enumerate(self.senders):
                if s is not None:
                    self.try_send(f, 0)
        heap = self.heap
        pop = heapq.heappop
        while heap and heap[0][0] <= end:
            t, _, kind, a, b = pop(heap)
            self.now = t
            self.events += 1
            if kind == EV_DL:
                line = self.dl[a]
                while line and line[0][0] <= t:
                    _, x = line.popleft()
                    self.enqueue(a, x, t)
                if line:
                    self.post(line[0][0], EV_DL, a)
            elif kind == EV_UL:
                line = self.ul[a]
                while line and line[0][0] <= t:
                    _, ack_no, trig = line.popleft()
                    self.on_ack(a, ack_no, trig, t)
                if line:
                    self.post(line[0][0], EV_UL, a)
            elif kind == EV_DEPART:
                self.on_depart(a, b, t)
            elif kind == EV_TTI:
                self.on_tti(a, t)
            elif kind == EV_HARQ:
                self.on_harq(a, b, t)
            elif kind == EV_RTO:
                self.on_rto_event(a, t)
            elif kind == EV_PACE:
                self.pace_pending[a] = False
                if not self.senders[a].aborted:
                    self.try_send(a, t)
            elif kind == EV_UDP:
                self.on_udp(a, t)
            elif kind == EV_WARMUP:
                self.on_warmup()
            elif kind == EV_TRACE:
                self.on_trace(t)
        return self.finish()

    def finish(self) -> EngineResult:
        spec = self.spec
        window = spec.duration_ns - spec.warmup_ns
        for f, res in enumerate(self.flow_res):
            if window > 0:
                res.delivered_bytes = self.delivered_now(f) - self.delivered_at_warmup[f]
                res.goodput_bps = res.delivered_bytes * 8e9 / window
            s = self.senders[f]
            if s is None:
                res.sent = self.udp_count[f]
                continue
            st = s.stats
            res.rtt_sum_ns = st.rtt_sum
            res.rtt_samples = st.rtt_n
            res.sent = st.sent
            res.retransmits = st.retransmits
            res.chan_retx = st.chan_retx
            res.queue_retx = st.queue_retx
            res.spurious_retx = st.spurious_retx
            res.recoveries = st.recoveries
            res.rtos = st.rtos
            res.max_backoff = st.max_backoff
            res.aborted = s.aborted
            res.duplicates = self.receivers[f].duplicates
            res.final_cwnd = s.cc.cwnd
            res.srtt_ns = s.rtt.srtt
        return EngineResult(flows=self.flow_res, ues=self.ue_res, events=self.events,
                            flow_trace=self.flow_trace, queue_trace=self.queue_trace)



def run_engine(spec: EngineSpec) -> EngineResult:
    return PyEngine(spec).run()
