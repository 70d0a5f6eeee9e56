# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False, nonecheck=False
"""Compiled data plane.

Mirrors :mod:`mmtcp.engine` operation for operation (same event order, same
floating point expressions, same random draws), so a spec run on either
backend yields identical results.
"""

from libc.math cimport ceil, pow, log, fabs, sqrt, INFINITY
from libc.stdlib cimport malloc, calloc, free
from libc.stdint cimport int64_t, uint64_t, int32_t, uint8_t

import numpy as np

from .congestion import (BBR_GAIN_CYCLE, BBR_HIGH_GAIN, BBR_DRAIN_GAIN, BBR_CWND_GAIN, BBR_BW_WINDOW_ROUNDS,
                         BBR_RTPROP_WINDOW, BBR_PROBE_RTT_TIME, BBR_MIN_CWND_SEGS, BBR_FULL_BW_THRESH,
                         BBR_FULL_BW_ROUNDS, BBR_INIT_RTT, CC_IDS, HS_A, HS_B, HS_W, HS_LOW_WINDOW, CUBIC_C,
                         CUBIC_BETA)
from .engine import EngineResult, FlowResult, UeResult
from .sim_core import SplitMix64

cdef enum:
    EV_TTI = 0
    EV_DL = 1
    EV_UL = 2
    EV_DEPART = 3
    EV_HARQ = 4
    EV_RTO = 5
    EV_PACE = 6
    EV_UDP = 7
    EV_WARMUP = 8
    EV_TRACE = 9

cdef enum:
    SACKED = 1
    LOST = 2
    RETX = 4
    COUNTED = 8

cdef enum:
    CAUSE_NONE = 0
    CAUSE_QUEUE = 1
    CAUSE_CHANNEL = 2

cdef enum:
    SLOT_PENDING = 0
    SLOT_READY = 1
    SLOT_LOST = 2

cdef enum:
    STARTUP = 0
    DRAIN = 1
    PROBE_BW = 2
    PROBE_RTT = 3

cdef uint64_t GOLDEN_GAMMA = 0x9E3779B97F4A7C15ULL


cdef inline int64_t imax(int64_t a, int64_t b) nogil:
    return a if a > b else b


cdef inline int64_t imin(int64_t a, int64_t b) nogil:
    return a if a < b else b


cdef inline double fmax2(double a, double b) nogil:
    # same tie behaviour as Python's max(a, b): first argument wins ties
    return b if b > a else a


cdef inline double fmin2(double a, double b) nogil:
    return b if b < a else a


cdef inline int64_t ceil_div_ns(double bits, double rate) nogil:
    return <int64_t>ceil(bits * 1e9 / rate)


cdef inline int64_t pacing_interval(int64_t mss, double rate) nogil:
    cdef int64_t v = <int64_t>(mss * 8e9 / rate + 0.5)
    return v if v > 1 else 1


# ---------------------------------------------------------------------------
# random numbers

cdef class Rng:
    cdef uint64_t state

    def __init__(self, uint64_t state):
        self.state = state

    cdef inline double uniform(self):
        cdef uint64_t z
        self.state = self.state + GOLDEN_GAMMA
        z = self.state
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
        z = z ^ (z >> 31)
        return (z >> 11) * (1.0 / 9007199254740992.0)


# ---------------------------------------------------------------------------
# growable rings

cdef class I64Ring:
    cdef int64_t* d
    cdef int64_t head, count, cap

    def __cinit__(self):
        self.cap = 64
        self.d = <int64_t*>malloc(self.cap * sizeof(int64_t))
        self.head = 0
        self.count = 0

    def __dealloc__(self):
        free(self.d)

    cdef void push(self, int64_t v):
        cdef int64_t i, ncap
        cdef int64_t* nd
        if self.count == self.cap:
            ncap = self.cap * 2
            nd = <int64_t*>malloc(ncap * sizeof(int64_t))
            for i in range(self.count):
                nd[i] = self.d[(self.head + i) & (self.cap - 1)]
            free(self.d)
            self.d = nd
            self.cap = ncap
            self.head = 0
        self.d[(self.head + self.count) & (self.cap - 1)] = v
        self.count += 1

    cdef inline int64_t front(self):
        return self.d[self.head]

    cdef inline int64_t pop(self):
        cdef int64_t v = self.d[self.head]
        self.head = (self.head + 1) & (self.cap - 1)
        self.count -= 1
        return v

    cdef inline void clear(self):
        self.head = 0
        self.count = 0


cdef class Line:
    """FIFO of (time, a, b) triples with non-decreasing times."""
    cdef int64_t* t
    cdef int64_t* a
    cdef int64_t* b
    cdef int64_t head, count, cap

    def __cinit__(self):
        self.cap = 256
        self.t = <int64_t*>malloc(self.cap * sizeof(int64_t))
        self.a = <int64_t*>malloc(self.cap * sizeof(int64_t))
        self.b = <int64_t*>malloc(self.cap * sizeof(int64_t))
        self.head = 0
        self.count = 0

    def __dealloc__(self):
        free(self.t)
        free(self.a)
        free(self.b)

    cdef void push(self, int64_t t, int64_t a, int64_t b):
        cdef int64_t i, j, ncap
        cdef int64_t *nt
        cdef int64_t *na
        cdef int64_t *nb
        if self.count == self.cap:
            ncap = self.cap * 2
            nt = <int64_t*>malloc(ncap * sizeof(int64_t))
            na = <int64_t*>malloc(ncap * sizeof(int64_t))
            nb = <int64_t*>malloc(ncap * sizeof(int64_t))
            for i in range(self.count):
                j = (self.head + i) & (self.cap - 1)
                nt[i] = self.t[j]
                na[i] = self.a[j]
                nb[i] = self.b[j]
            free(self.t)
            free(self.a)
            free(self.b)
            self.t = nt
            self.a = na
            self.b = nb
            self.cap = ncap
            self.head = 0
        j = (self.head + self.count) & (self.cap - 1)
        self.t[j] = t
        self.a[j] = a
        self.b[j] = b
        self.count += 1

    cdef inline void pop(self):
        self.head = (self.head + 1) & (self.cap - 1)
        self.count -= 1


# ---------------------------------------------------------------------------
# RLC buffer with optional CoDel

cdef class CBuf:
    cdef int64_t capb, occ
    cdef int64_t cap, head, count
    cdef int32_t* flow
    cdef int64_t* seg
    cdef int32_t* size
    cdef int64_t* enq
    cdef bint codel
    cdef int64_t target, interval, mtu, first_above, drop_next, count_c, lastcount
    cdef bint dropping
    cdef int32_t o_flow, o_size
    cdef int64_t o_seg, o_enq
    cdef int64_t nd, dcap
    cdef int32_t* d_flow
    cdef int64_t* d_seg
    cdef int64_t* d_enq

    def __cinit__(self, int64_t capb, bint codel, int64_t target, int64_t interval):
        self.capb = capb
        self.occ = 0
        self.cap = 1024
        self.flow = <int32_t*>malloc(self.cap * sizeof(int32_t))
        self.seg = <int64_t*>malloc(self.cap * sizeof(int64_t))
        self.size = <int32_t*>malloc(self.cap * sizeof(int32_t))
        self.enq = <int64_t*>malloc(self.cap * sizeof(int64_t))
        self.head = 0
        self.count = 0
        self.codel = codel
        self.target = target
        self.interval = interval
        self.mtu = 1500
        self.first_above = 0
        self.drop_next = 0
        self.count_c = 0
        self.lastcount = 0
        self.dropping = False
        self.dcap = 16
        self.nd = 0
        self.d_flow = <int32_t*>malloc(self.dcap * sizeof(int32_t))
        self.d_seg = <int64_t*>malloc(self.dcap * sizeof(int64_t))
        self.d_enq = <int64_t*>malloc(self.dcap * sizeof(int64_t))

    def __dealloc__(self):
        free(self.flow)
        free(self.seg)
        free(self.size)
        free(self.enq)
        free(self.d_flow)
        free(self.d_seg)
        free(self.d_enq)

    cdef void grow(self):
        cdef int64_t ncap = self.cap * 2
        cdef int32_t* nf = <int32_t*>malloc(ncap * sizeof(int32_t))
        cdef int64_t* ns = <int64_t*>malloc(ncap * sizeof(int64_t))
        cdef int32_t* nz = <int32_t*>malloc(ncap * sizeof(int32_t))
        cdef int64_t* ne = <int64_t*>malloc(ncap * sizeof(int64_t))
        cdef int64_t i, j
        for i in range(self.count):
            j = (self.head + i) & (self.cap - 1)
            nf[i] = self.flow[j]
            ns[i] = self.seg[j]
            nz[i] = self.size[j]
            ne[i] = self.enq[j]
        free(self.flow)
        free(self.seg)
        free(self.size)
        free(self.enq)
        self.flow = nf
        self.seg = ns
        self.size = nz
        self.enq = ne
        self.cap = ncap
        self.head = 0

    cdef bint enqueue(self, int32_t f, int64_t x, int32_t size, int64_t now):
        cdef int64_t j
        if self.occ + size > self.capb:
            return False
        if self.count == self.cap:
            self.grow()
        j = (self.head + self.count) & (self.cap - 1)
        self.flow[j] = f
        self.seg[j] = x
        self.size[j] = size
        self.enq[j] = now
        self.count += 1
        self.occ += size
        return True

    cdef inline int64_t head_enq(self):
        return self.enq[self.head]

    cdef bint pop(self):
        cdef int64_t j
        if self.count == 0:
            return False
        j = self.head
        self.o_flow = self.flow[j]
        self.o_seg = self.seg[j]
        self.o_size = self.size[j]
        self.o_enq = self.enq[j]
        self.head = (j + 1) & (self.cap - 1)
        self.count -= 1
        self.occ -= self.o_size
        return True

    cdef void add_drop(self):
        cdef int64_t ncap, i
        cdef int32_t* nf
        cdef int64_t* ns
        cdef int64_t* ne
        if self.nd == self.dcap:
            ncap = self.dcap * 2
            nf = <int32_t*>malloc(ncap * sizeof(int32_t))
            ns = <int64_t*>malloc(ncap * sizeof(int64_t))
            ne = <int64_t*>malloc(ncap * sizeof(int64_t))
            for i in range(self.nd):
                nf[i] = self.d_flow[i]
                ns[i] = self.d_seg[i]
                ne[i] = self.d_enq[i]
            free(self.d_flow)
            free(self.d_seg)
            free(self.d_enq)
            self.d_flow = nf
            self.d_seg = ns
            self.d_enq = ne
            self.dcap = ncap
        self.d_flow[self.nd] = self.o_flow
        self.d_seg[self.nd] = self.o_seg
        self.d_enq[self.nd] = self.o_enq
        self.nd += 1

    cdef bint do_dequeue(self, int64_t now, bint* ok):
        cdef int64_t sojourn
        if not self.pop():
            self.first_above = 0
            ok[0] = False
            return False
        sojourn = now - self.o_enq
        if sojourn < self.target or self.occ <= self.mtu:
            self.first_above = 0
            ok[0] = False
            return True
        if self.first_above == 0:
            self.first_above = now + self.interval
            ok[0] = False
            return True
        ok[0] = now >= self.first_above
        return True

    cdef inline int64_t control_law(self, int64_t t, int64_t count):
        return t + <int64_t>(<double>self.interval / sqrt(<double>count))

    cdef bint dequeue(self, int64_t now):
        cdef bint ok = False
        cdef bint has
        cdef int64_t delta
        self.nd = 0
        if not self.codel:
            return self.pop()
        has = self.do_dequeue(now, &ok)
        if self.dropping:
            if not ok:
                self.dropping = False
            while self.dropping and now >= self.drop_next:
                self.add_drop()
                self.count_c += 1
                has = self.do_dequeue(now, &ok)
                if not ok:
                    self.dropping = False
                else:
                    self.drop_next = self.control_law(self.drop_next, self.count_c + 1)
        elif ok:
            self.add_drop()
            has = self.do_dequeue(now, &ok)
            self.dropping = True
            delta = self.count_c - self.lastcount
            if delta > 1 and now - self.drop_next < 16 * self.interval:
                self.count_c = delta
            else:
                self.count_c = 1
            self.lastcount = self.count_c
            self.drop_next = self.control_law(now, self.count_c + 1)
        return has


# ---------------------------------------------------------------------------
# congestion control

cdef struct AckS:
    int64_t now
    int64_t acked
    int64_t newly
    int64_t delivered
    int64_t prior_delivered
    int64_t rtt
    double rate
    int64_t in_flight
    int64_t lost
    bint in_recovery


cdef class CC:
    cdef public double cwnd, ssthresh, pacing_rate
    cdef int64_t mss

    def __init__(self, int64_t mss, int64_t init_cwnd_segs):
        self.mss = mss
        self.cwnd = <double>(init_cwnd_segs * mss)
        self.ssthresh = INFINITY
        self.pacing_rate = 0.0

    cdef void on_ack(self, AckS* s):
        pass

    cdef void on_loss(self, int64_t now, int64_t in_flight):
        pass

    cdef void on_rto(self, int64_t now, int64_t in_flight):
        self.ssthresh = <double>imax(in_flight // 2, 2 * self.mss)
        self.cwnd = <double>self.mss


cdef class CNewReno(CC):
    cdef void on_ack(self, AckS* s):
        if s.acked <= 0 or s.in_recovery:
            return
        if self.cwnd < self.ssthresh:
            self.cwnd = self.cwnd + imin(s.acked, self.mss)
        else:
            self.cwnd = self.cwnd + <double>(self.mss * self.mss) / self.cwnd

    cdef void on_loss(self, int64_t now, int64_t in_flight):
        self.ssthresh = fmax2(self.cwnd / 2, 2.0 * self.mss)
        self.cwnd = self.ssthresh


cdef double* HSW
cdef double* HSA
cdef double* HSB
cdef double* HSL
cdef int64_t HSN = 0
cdef double HS_LOW = HS_LOW_WINDOW


def _init_hs_table():
    global HSW, HSA, HSB, HSL, HSN
    import math
    cdef int64_t i
    HSN = len(HS_W)
    HSW = <double*>malloc(HSN * sizeof(double))
    HSA = <double*>malloc(HSN * sizeof(double))
    HSB = <double*>malloc(HSN * sizeof(double))
    HSL = <double*>malloc(HSN * sizeof(double))
    for i in range(HSN):
        HSW[i] = HS_W[i]
        HSA[i] = HS_A[i]
        HSB[i] = HS_B[i]
        HSL[i] = math.log(HS_W[i])


_init_hs_table()


cdef void hs_params(double w, double* a, double* b):
    cdef int64_t lo = 0, hi = HSN, mid, i
    cdef double f
    if w <= HS_LOW:
        a[0] = 1.0
        b[0] = 0.5
        return
    while lo < hi:
        mid = (lo + hi) // 2
        if w < HSW[mid]:
            hi = mid
        else:
            lo = mid + 1
    i = lo - 1
    if i >= HSN - 1:
        a[0] = HSA[HSN - 1]
        b[0] = HSB[HSN - 1]
        return
    f = (log(w) - HSL[i]) / (HSL[i + 1] - HSL[i])
    a[0] = fmax2(HSA[i] + f * (HSA[i + 1] - HSA[i]), 1.0)
    b[0] = fmin2(HSB[i] + f * (HSB[i + 1] - HSB[i]), 0.5)


cdef class CHighSpeed(CC):
    cdef void on_ack(self, AckS* s):
        cdef double a, b
        if s.acked <= 0 or s.in_recovery:
            return
        if self.cwnd < self.ssthresh:
            self.cwnd = self.cwnd + imin(s.acked, self.mss)
            return
        hs_params(self.cwnd / self.mss, &a, &b)
        self.cwnd += a * self.mss * self.mss / self.cwnd

    cdef void on_loss(self, int64_t now, int64_t in_flight):
        cdef double a, b
        hs_params(fmax2(self.cwnd / self.mss, 1.0), &a, &b)
        self.ssthresh = fmax2((1.0 - b) * self.cwnd, 2.0 * self.mss)
        self.cwnd = self.ssthresh


cdef class CCubic(CC):
    cdef double w_max, k, c_const, beta_mult
    cdef int64_t epoch_start

    def __init__(self, int64_t mss, int64_t init_cwnd_segs):
        CC.__init__(self, mss, init_cwnd_segs)
        self.w_max = 0.0
        self.k = 0.0
        self.epoch_start = -1
        self.c_const = CUBIC_C
        self.beta_mult = CUBIC_BETA

    cdef void start_epoch(self, int64_t now):
        cdef double d
        self.epoch_start = now
        if self.cwnd < self.w_max:
            d = self.w_max / self.mss - self.cwnd / self.mss
            if d <= 0:
                self.k = 0.0
            else:
                self.k = pow(d / self.c_const, 1.0 / 3.0)
        else:
            self.k = 0.0
            self.w_max = self.cwnd

    cdef void on_ack(self, AckS* s):
        cdef double t, d, tgt
        if s.acked <= 0 or s.in_recovery:
            return
        if self.cwnd < self.ssthresh:
            self.cwnd = self.cwnd + imin(s.acked, self.mss)
            return
        if self.epoch_start < 0:
            self.start_epoch(s.now)
        t = <double>(s.now - self.epoch_start) / 1e9
        d = t - self.k
        tgt = self.w_max + self.c_const * d * d * d * self.mss
        if tgt > self.cwnd:
            self.cwnd += self.mss * (tgt - self.cwnd) / self.cwnd
        else:
            self.cwnd += <double>(self.mss * self.mss) / (100.0 * self.cwnd)

    cdef void on_loss(self, int64_t now, int64_t in_flight):
        self.w_max = self.cwnd
        self.cwnd = fmax2(self.cwnd * self.beta_mult, 2.0 * self.mss)
        self.ssthresh = self.cwnd
        self.epoch_start = -1

    cdef void on_rto(self, int64_t now, int64_t in_flight):
        self.w_max = 0.0
        self.epoch_start = -1
        CC.on_rto(self, now, in_flight)


cdef double GAIN_CYCLE[8]
for _i in range(8):
    GAIN_CYCLE[_i] = BBR_GAIN_CYCLE[_i]
cdef double HIGH_GAIN = BBR_HIGH_GAIN
cdef double DRAIN_GAIN = BBR_DRAIN_GAIN
cdef double CWND_GAIN = BBR_CWND_GAIN
cdef int64_t BW_ROUNDS = BBR_BW_WINDOW_ROUNDS
cdef int64_t RTPROP_WIN = BBR_RTPROP_WINDOW
cdef int64_t PROBE_RTT_TIME = BBR_PROBE_RTT_TIME
cdef int64_t MIN_CWND_SEGS = BBR_MIN_CWND_SEGS
cdef double FULL_BW_THRESH = BBR_FULL_BW_THRESH
cdef int64_t FULL_BW_ROUNDS = BBR_FULL_BW_ROUNDS
cdef int64_t INIT_RTT = BBR_INIT_RTT


cdef class CBbr(CC):
    cdef Rng rng
    cdef int mode
    cdef double btl_bw
    cdef int64_t rt_prop, rt_prop_stamp
    cdef bint rt_prop_expired
    cdef double pacing_gain, cwnd_gain
    cdef int64_t cycle_index, cycle_stamp, round_count, next_round_delivered
    cdef bint round_start
    cdef double full_bw
    cdef int64_t full_bw_count
    cdef bint filled_pipe
    cdef int64_t probe_rtt_done_stamp
    cdef bint probe_rtt_round_done
    cdef double prior_cwnd
    cdef bint rto_restore
    cdef int64_t bw_round[16]
    cdef double bw_val[16]

    def __init__(self, int64_t mss, int64_t init_cwnd_segs, Rng rng):
        cdef int64_t i
        CC.__init__(self, mss, init_cwnd_segs)
        self.rng = rng
        self.mode = STARTUP
        self.btl_bw = 0.0
        self.rt_prop = -1
        self.rt_prop_stamp = 0
        self.rt_prop_expired = False
        self.pacing_gain = HIGH_GAIN
        self.cwnd_gain = CWND_GAIN
        self.cycle_index = 0
        self.cycle_stamp = 0
        self.round_count = 0
        self.next_round_delivered = 0
        self.round_start = False
        self.full_bw = 0.0
        self.full_bw_count = 0
        self.filled_pipe = False
        self.probe_rtt_done_stamp = 0
        self.probe_rtt_round_done = False
        self.prior_cwnd = 0.0
        self.rto_restore = False
        for i in range(BW_ROUNDS):
            self.bw_round[i] = -BW_ROUNDS
            self.bw_val[i] = 0.0
        self.pacing_rate = HIGH_GAIN * self.cwnd * 8e9 / INIT_RTT

    cdef inline double bdp(self):
        if self.btl_bw <= 0.0 or self.rt_prop < 0:
            return -1.0
        return self.btl_bw * self.rt_prop / 8e9

    cdef inline double inflight(self, double gain):
        cdef double b = self.bdp()
        return -1.0 if b < 0 else gain * b

    cdef void enter_probe_bw(self, int64_t now):
        cdef int64_t r
        self.mode = PROBE_BW
        r = <int64_t>(self.rng.uniform() * 7)
        self.cycle_index = (8 - r) % 8
        self.cycle_stamp = now
        self.pacing_gain = GAIN_CYCLE[self.cycle_index]

    cdef void save_cwnd(self, bint in_recovery):
        if not in_recovery and self.mode != PROBE_RTT:
            self.prior_cwnd = self.cwnd
        else:
            self.prior_cwnd = fmax2(self.prior_cwnd, self.cwnd)

    cdef void on_ack(self, AckS* s):
        cdef int64_t i
        cdef double best, g, cap
        cdef bint full, nxt
        if self.rto_restore and s.acked > 0:
            self.cwnd = fmax2(self.cwnd, self.prior_cwnd)
            self.rto_restore = False
        if self.btl_bw <= 0.0 and s.rtt > 0:
            self.pacing_rate = HIGH_GAIN * self.cwnd * 8e9 / s.rtt
        # round
        self.round_start = False
        if s.newly > 0 and s.prior_delivered >= self.next_round_delivered:
            self.next_round_delivered = s.delivered
            self.round_count += 1
            self.round_start = True
        # bandwidth filter
        if s.rate > 0.0:
            i = self.round_count % BW_ROUNDS
            if self.bw_round[i] != self.round_count:
                self.bw_round[i] = self.round_count
                self.bw_val[i] = s.rate
            elif s.rate > self.bw_val[i]:
                self.bw_val[i] = s.rate
        best = 0.0
        for i in range(BW_ROUNDS):
            if self.round_count - self.bw_round[i] < BW_ROUNDS and self.bw_val[i] > best:
                best = self.bw_val[i]
        self.btl_bw = best
        # gain cycling
        if self.mode == PROBE_BW:
            full = self.rt_prop >= 0 and s.now - self.cycle_stamp > self.rt_prop
            g = self.pacing_gain
            if g > 1.0:
                nxt = full and (s.lost > 0 or s.in_flight >= self.inflight(g))
            elif g < 1.0:
                nxt = full or s.in_flight <= self.inflight(1.0)
            else:
                nxt = full
            if nxt:
                self.cycle_index = (self.cycle_index + 1) % 8
                self.cycle_stamp = s.now
                self.pacing_gain = GAIN_CYCLE[self.cycle_index]
        # full pipe
        if not self.filled_pipe and self.round_start:
            if self.btl_bw >= self.full_bw * FULL_BW_THRESH:
                self.full_bw = self.btl_bw
                self.full_bw_count = 0
            else:
                self.full_bw_count += 1
                if self.full_bw_count >= FULL_BW_ROUNDS:
                    self.filled_pipe = True
        # drain
        if self.mode == STARTUP and self.filled_pipe:
            self.mode = DRAIN
            self.pacing_gain = DRAIN_GAIN
        if self.mode == DRAIN and s.in_flight <= self.inflight(1.0):
            self.enter_probe_bw(s.now)
        # min rtt
        self.rt_prop_expired = self.rt_prop >= 0 and s.now > self.rt_prop_stamp + RTPROP_WIN
        if s.rtt >= 0 and (self.rt_prop < 0 or s.rtt <= self.rt_prop or self.rt_prop_expired):
            self.rt_prop = s.rtt
            self.rt_prop_stamp = s.now
        # probe rtt
        if self.mode != PROBE_RTT and self.rt_prop_expired:
            self.save_cwnd(s.in_recovery)
            self.mode = PROBE_RTT
            self.pacing_gain = 1.0
            self.probe_rtt_done_stamp = 0
        if self.mode == PROBE_RTT:
            if self.probe_rtt_done_stamp == 0 and s.in_flight <= MIN_CWND_SEGS * self.mss:
                self.probe_rtt_done_stamp = s.now + PROBE_RTT_TIME
                self.probe_rtt_round_done = False
                self.next_round_delivered = s.delivered
            elif self.probe_rtt_done_stamp != 0:
                if self.round_start:
                    self.probe_rtt_round_done = True
                if self.probe_rtt_round_done and s.now > self.probe_rtt_done_stamp:
                    self.rt_prop_stamp = s.now
                    self.cwnd = fmax2(self.cwnd, self.prior_cwnd)
                    if self.filled_pipe:
                        self.enter_probe_bw(s.now)
                    else:
                        self.mode = STARTUP
                        self.pacing_gain = HIGH_GAIN
        # pacing rate
        if self.btl_bw > 0.0:
            g = self.pacing_gain * self.btl_bw
            if self.filled_pipe or g > self.pacing_rate:
                self.pacing_rate = g
        # cwnd
        cap = self.inflight(self.cwnd_gain)
        if cap < 0:
            self.cwnd += s.newly
        else:
            self.cwnd = fmin2(self.cwnd + s.newly, cap)
        if self.cwnd < <double>(MIN_CWND_SEGS * self.mss):
            self.cwnd = <double>(MIN_CWND_SEGS * self.mss)
        if self.mode == PROBE_RTT and self.cwnd > <double>(MIN_CWND_SEGS * self.mss):
            self.cwnd = <double>(MIN_CWND_SEGS * self.mss)

    cdef void on_loss(self, int64_t now, int64_t in_flight):
        pass

    cdef void on_rto(self, int64_t now, int64_t in_flight):
        self.save_cwnd(False)
        self.rto_restore = True
        self.cwnd = <double>self.mss


# ---------------------------------------------------------------------------
# TCP

cdef class CSender:
    cdef CC cc
    cdef int64_t mss, una, nxt, high
    cdef int64_t cap
    cdef int64_t* sent_time
    cdef int64_t* deliv
    cdef int64_t* deliv_time
    cdef int64_t* first_sent
    cdef uint8_t* flags
    cdef uint8_t* cause
    cdef int64_t sacked_count, lost_count
    cdef I64Ring retx_q
    cdef I64Ring rx_time, rx_seg
    cdef int64_t top[3]
    cdef int ntop
    cdef int64_t lost_scan
    cdef bint in_recovery
    cdef int64_t recovery_point
    cdef double srtt, rttvar
    cdef int64_t rto, min_rto, max_rto
    cdef int64_t min_rtt, max_rto_retries, consecutive_rtos
    cdef bint aborted
    cdef int64_t rto_deadline, next_send_time
    cdef int64_t delivered, delivered_time, first_sent_time
    cdef int64_t st_sent, st_retx, st_chan, st_queue, st_spur, st_rec, st_rtos, st_maxb, st_stale
    cdef double rtt_sum
    cdef int64_t rtt_n
    cdef int64_t measure_from
    cdef int64_t rwnd_segs

    def __cinit__(self):
        self.cap = 4096
        self.sent_time = <int64_t*>calloc(self.cap, sizeof(int64_t))
        self.deliv = <int64_t*>calloc(self.cap, sizeof(int64_t))
        self.deliv_time = <int64_t*>calloc(self.cap, sizeof(int64_t))
        self.first_sent = <int64_t*>calloc(self.cap, sizeof(int64_t))
        self.flags = <uint8_t*>calloc(self.cap, sizeof(uint8_t))
        self.cause = <uint8_t*>calloc(self.cap, sizeof(uint8_t))

    def __dealloc__(self):
        free(self.sent_time)
        free(self.deliv)
        free(self.deliv_time)
        free(self.first_sent)
        free(self.flags)
        free(self.cause)

    def __init__(self, CC cc, int64_t mss, int64_t min_rto, int64_t init_rto, int64_t max_rto,
                 int64_t max_rto_retries, int64_t measure_from, int64_t rwnd):
        self.cc = cc
        self.rwnd_segs = max(1, rwnd // mss)
        self.mss = mss
        self.una = 0
        self.nxt = 0
        self.high = 0
        self.sacked_count = 0
        self.lost_count = 0
        self.retx_q = I64Ring()
        self.rx_time = I64Ring()
        self.rx_seg = I64Ring()
        self.ntop = 0
        self.lost_scan = 0
        self.in_recovery = False
        self.recovery_point = 0
        self.srtt = -1.0
        self.rttvar = 0.0
        self.rto = init_rto
        self.min_rto = min_rto
        self.max_rto = max_rto
        self.min_rtt = -1
        self.max_rto_retries = max_rto_retries
        self.consecutive_rtos = 0
        self.aborted = False
        self.rto_deadline = -1
        self.next_send_time = 0
        self.delivered = 0
        self.delivered_time = 0
        self.first_sent_time = 0
        self.st_sent = 0
        self.st_retx = 0
        self.st_chan = 0
        self.st_queue = 0
        self.st_spur = 0
        self.st_rec = 0
        self.st_rtos = 0
        self.st_maxb = 0
        self.st_stale = 0
        self.rtt_sum = 0.0
        self.rtt_n = 0
        self.measure_from = measure_from

    cdef void grow(self):
        cdef int64_t ncap = self.cap * 2
        cdef int64_t om = self.cap - 1, nm = ncap - 1, x
        cdef int64_t* a = <int64_t*>calloc(ncap, sizeof(int64_t))
        cdef int64_t* b = <int64_t*>calloc(ncap, sizeof(int64_t))
        cdef int64_t* c = <int64_t*>calloc(ncap, sizeof(int64_t))
        cdef int64_t* d = <int64_t*>calloc(ncap, sizeof(int64_t))
        cdef uint8_t* e = <uint8_t*>calloc(ncap, sizeof(uint8_t))
        cdef uint8_t* g = <uint8_t*>calloc(ncap, sizeof(uint8_t))
        for x in range(self.una, self.high):
            a[x & nm] = self.sent_time[x & om]
            b[x & nm] = self.deliv[x & om]
            c[x & nm] = self.deliv_time[x & om]
            d[x & nm] = self.first_sent[x & om]
            e[x & nm] = self.flags[x & om]
            g[x & nm] = self.cause[x & om]
        free(self.sent_time)
        free(self.deliv)
        free(self.deliv_time)
        free(self.first_sent)
        free(self.flags)
        free(self.cause)
        self.sent_time = a
        self.deliv = b
        self.deliv_time = c
        self.first_sent = d
        self.flags = e
        self.cause = g
        self.cap = ncap

    cdef inline int64_t pipe(self):
        return (self.nxt - self.una) - self.sacked_count - self.lost_count

    cdef inline int64_t in_flight(self):
        return (self.nxt - self.una - self.sacked_count) * self.mss

    cdef inline bint can_send(self):
        if self.aborted or self.pipe() * self.mss >= self.cc.cwnd:
            return False
        return self.lost_count > 0 or self.nxt < self.high or self.nxt - self.una < self.rwnd_segs

    cdef inline bint pacing_blocked(self, int64_t now):
        return self.cc.pacing_rate > 0.0 and now < self.next_send_time

    cdef void count_retx(self, int64_t x):
        cdef int64_t j = x & (self.cap - 1)
        cdef uint8_t c = self.cause[j]
        self.cause[j] = CAUSE_NONE
        self.st_retx += 1
        if c == CAUSE_CHANNEL:
            self.st_chan += 1
        elif c == CAUSE_QUEUE:
            self.st_queue += 1
        else:
            self.st_spur += 1

    cdef inline void mark_dropped(self, int64_t x, uint8_t cause):
        if self.una <= x < self.high:
            self.cause[x & (self.cap - 1)] = cause

    cdef int64_t next_segment(self, int64_t now):
        cdef bint pipe_empty = self.pipe() == 0
        cdef int64_t x, j
        cdef double pr
        while self.retx_q.count > 0 and (self.retx_q.front() < self.una or
                                         not (self.flags[self.retx_q.front() & (self.cap - 1)] & LOST)):
            self.retx_q.pop()
        if self.retx_q.count > 0:
            x = self.retx_q.pop()
            j = x & (self.cap - 1)
            self.flags[j] = (self.flags[j] & ~LOST) | RETX
            self.lost_count -= 1
            self.count_retx(x)
            self.rx_time.push(now)
            self.rx_seg.push(x)
        else:
            x = self.nxt
            self.nxt += 1
            if x < self.high:
                j = x & (self.cap - 1)
                self.flags[j] = self.flags[j] | RETX
                self.count_retx(x)
            else:
                self.high = x + 1
                if self.high - self.una > self.cap:
                    self.grow()
                j = x & (self.cap - 1)
                self.flags[j] = 0
                self.cause[j] = CAUSE_NONE
        if pipe_empty:
            self.first_sent_time = now
            self.delivered_time = now
        self.sent_time[j] = now
        self.deliv[j] = self.delivered
        self.deliv_time[j] = self.delivered_time
        self.first_sent[j] = self.first_sent_time
        self.st_sent += 1
        if self.rto_deadline < 0 or (x == self.una and self.flags[j] & RETX):
            self.rto_deadline = now + self.rto
        pr = self.cc.pacing_rate
        if pr > 0.0:
            self.next_send_time = now + pacing_interval(self.mss, pr)
        return x

    cdef inline void deliver(self, int64_t j, int64_t now, int64_t* rs):
        if self.sent_time[j] > rs[4]:
            rs[4] = self.sent_time[j]
        if self.flags[j] & COUNTED:
            return
        self.flags[j] = self.flags[j] | COUNTED
        self.delivered += self.mss
        if self.deliv[j] >= rs[0]:
            rs[0] = self.deliv[j]
            rs[1] = self.sent_time[j] - self.first_sent[j]
            rs[2] = now - self.deliv_time[j]
            self.first_sent_time = self.sent_time[j]
        if not (self.flags[j] & RETX) and self.sent_time[j] > rs[3]:
            rs[3] = self.sent_time[j]

    cdef void note_sacked(self, int64_t x):
        # keep the three highest SACKed indices, ascending
        cdef int i
        if self.ntop < 3:
            i = self.ntop
            while i > 0 and self.top[i - 1] > x:
                self.top[i] = self.top[i - 1]
                i -= 1
            self.top[i] = x
            self.ntop += 1
        elif x > self.top[0]:
            i = 0
            while i < 2 and self.top[i + 1] < x:
                self.top[i] = self.top[i + 1]
                i += 1
            self.top[i] = x

    cdef int64_t mark_losses(self):
        cdef int64_t limit, x, n = 0, j
        if self.ntop < 3:
            return 0
        limit = imin(self.top[0], self.nxt)
        x = imax(self.lost_scan, self.una)
        while x < limit:
            j = x & (self.cap - 1)
            if not (self.flags[j] & (SACKED | LOST)):
                self.flags[j] = self.flags[j] | LOST
                self.lost_count += 1
                self.retx_q.push(x)
                n += 1
            x += 1
        if limit > self.lost_scan:
            self.lost_scan = limit
        return n

    cdef int64_t mark_lost_rexmits(self, int64_t sent_before):
        cdef int64_t n = 0, t, x, j
        while self.rx_time.count > 0 and self.rx_time.front() < sent_before:
            t = self.rx_time.pop()
            x = self.rx_seg.pop()
            if x < self.una:
                continue
            j = x & (self.cap - 1)
            if self.sent_time[j] != t or self.flags[j] & (SACKED | LOST):
                continue
            self.flags[j] = self.flags[j] | LOST
            self.lost_count += 1
            self.retx_q.push(x)
            n += 1
        return n

    cdef bint on_ack(self, int64_t ack_no, int64_t trig, int64_t now):
        """Returns True when the ACK was processed."""
        cdef int64_t rs[5]
        cdef int64_t before, acked = 0, x, j, newly, rtt = -1, interval, lost
        cdef uint8_t f
        cdef double rate = -1.0
        cdef AckS s
        cdef int64_t rto
        if ack_no < self.una:
            self.st_stale += 1
            return False
        if self.aborted:
            return False
        rs[0] = -1
        rs[1] = 0
        rs[2] = 0
        rs[3] = -1
        rs[4] = -1
        before = self.delivered
        if ack_no > self.una:
            for x in range(self.una, ack_no):
                j = x & (self.cap - 1)
                f = self.flags[j]
                if f & SACKED:
                    self.sacked_count -= 1
                else:
                    self.deliver(j, now, rs)
                if f & LOST:
                    self.lost_count -= 1
                self.flags[j] = 0
                self.cause[j] = CAUSE_NONE
            acked = (ack_no - self.una) * self.mss
            self.una = ack_no
            if self.nxt < ack_no:
                self.nxt = ack_no
            self.consecutive_rtos = 0
        if self.in_recovery and self.una >= self.recovery_point:
            self.in_recovery = False
        if trig >= self.una and trig < self.nxt:
            j = trig & (self.cap - 1)
            f = self.flags[j]
            if not (f & SACKED):
                self.flags[j] = (f | SACKED) & ~LOST
                self.sacked_count += 1
                if f & LOST:
                    self.lost_count -= 1
                self.deliver(j, now, rs)
                self.note_sacked(trig)
        newly = self.delivered - before
        if newly:
            self.delivered_time = now
        if rs[3] >= 0:
            rtt = now - rs[3]
            if self.srtt < 0:
                self.srtt = <double>rtt
                self.rttvar = rtt / 2.0
            else:
                self.rttvar = 0.75 * self.rttvar + 0.25 * fabs(self.srtt - rtt)
                self.srtt = 0.875 * self.srtt + 0.125 * rtt
            rto = <int64_t>(self.srtt + 4.0 * self.rttvar)
            self.rto = imin(imax(rto, self.min_rto), self.max_rto)
            if self.min_rtt < 0 or rtt < self.min_rtt:
                self.min_rtt = rtt
            if now >= self.measure_from:
                self.rtt_sum += rtt
                self.rtt_n += 1
        if rs[0] >= 0:
            interval = imax(rs[1], rs[2])
            if interval > 0 and self.min_rtt > 0 and interval >= self.min_rtt:
                rate = (self.delivered - rs[0]) * 8e9 / interval
        lost = self.mark_losses() + self.mark_lost_rexmits(rs[4])
        if lost and not self.in_recovery:
            self.in_recovery = True
            self.recovery_point = self.nxt
            self.st_rec += 1
            self.cc.on_loss(now, self.in_flight())
        s.now = now
        s.acked = acked
        s.newly = newly
        s.delivered = self.delivered
        s.prior_delivered = rs[0]
        s.rtt = rtt
        s.rate = rate
        s.in_flight = self.pipe() * self.mss
        s.lost = lost * self.mss
        s.in_recovery = self.in_recovery
        self.cc.on_ack(&s)
        if self.nxt == self.una:
            self.rto_deadline = -1
        elif acked:
            self.rto_deadline = now + self.rto
        return True

    cdef bint on_rto(self, int64_t now):
        cdef int64_t x, j
        cdef double held = self.cc.ssthresh
        cdef bint hold = self.consecutive_rtos > 0
        self.cc.on_rto(now, self.in_flight())
        if hold:
            self.cc.ssthresh = held
        self.st_rtos += 1
        self.consecutive_rtos += 1
        if self.consecutive_rtos > self.st_maxb:
            self.st_maxb = self.consecutive_rtos
        if self.consecutive_rtos > self.max_rto_retries:
            self.aborted = True
            self.rto_deadline = -1
            return False
        self.rto = imin(2 * self.rto, self.max_rto)
        for x in range(self.una, self.high):
            j = x & (self.cap - 1)
            self.flags[j] = self.flags[j] & (RETX | COUNTED)
        self.sacked_count = 0
        self.lost_count = 0
        self.retx_q.clear()
        self.rx_time.clear()
        self.rx_seg.clear()
        self.ntop = 0
        self.lost_scan = self.una
        self.nxt = self.una
        self.in_recovery = False
        self.rto_deadline = now + self.rto
        self.next_send_time = now
        return True


cdef class CRecv:
    cdef int64_t mss, rcv_nxt, cap, data_segments, duplicates
    cdef uint8_t* ooo

    def __cinit__(self, int64_t mss):
        self.mss = mss
        self.rcv_nxt = 0
        self.cap = 4096
        self.ooo = <uint8_t*>calloc(self.cap, sizeof(uint8_t))
        self.data_segments = 0
        self.duplicates = 0

    def __dealloc__(self):
        free(self.ooo)

    cdef void grow(self, int64_t need):
        cdef int64_t ncap = self.cap, x
        cdef uint8_t* n
        while ncap <= need:
            ncap *= 2
        n = <uint8_t*>calloc(ncap, sizeof(uint8_t))
        for x in range(self.rcv_nxt, self.rcv_nxt + self.cap):
            n[x & (ncap - 1)] = self.ooo[x & (self.cap - 1)]
        free(self.ooo)
        self.ooo = n
        self.cap = ncap

    cdef int64_t on_data(self, int64_t x):
        cdef int64_t j
        self.data_segments += 1
        if x < self.rcv_nxt:
            self.duplicates += 1
            return self.rcv_nxt
        if x == self.rcv_nxt:
            self.rcv_nxt += 1
            j = self.rcv_nxt & (self.cap - 1)
            while self.ooo[j]:
                self.ooo[j] = 0
                self.rcv_nxt += 1
                j = self.rcv_nxt & (self.cap - 1)
            return self.rcv_nxt
        if x - self.rcv_nxt >= self.cap:
            self.grow(x - self.rcv_nxt)
        j = x & (self.cap - 1)
        if self.ooo[j]:
            self.duplicates += 1
        else:
            self.ooo[j] = 1
        return self.rcv_nxt


# ---------------------------------------------------------------------------
# RLC receive reordering

cdef class Reorder:
    cdef int64_t cap, rx_next, sn_next
    cdef uint8_t* state
    cdef uint8_t* final
    cdef int32_t* flow
    cdef int64_t* seg

    def __cinit__(self):
        self.cap = 1024
        self.state = <uint8_t*>calloc(self.cap, sizeof(uint8_t))
        self.final = <uint8_t*>calloc(self.cap, sizeof(uint8_t))
        self.flow = <int32_t*>calloc(self.cap, sizeof(int32_t))
        self.seg = <int64_t*>calloc(self.cap, sizeof(int64_t))
        self.rx_next = 0
        self.sn_next = 0

    def __dealloc__(self):
        free(self.state)
        free(self.final)
        free(self.flow)
        free(self.seg)

    cdef int64_t assign(self):
        cdef int64_t ncap, x, om, nm
        cdef uint8_t* a
        cdef uint8_t* b
        cdef int32_t* c
        cdef int64_t* d
        if self.sn_next - self.rx_next >= self.cap:
            ncap = self.cap * 2
            om = self.cap - 1
            nm = ncap - 1
            a = <uint8_t*>calloc(ncap, sizeof(uint8_t))
            b = <uint8_t*>calloc(ncap, sizeof(uint8_t))
            c = <int32_t*>calloc(ncap, sizeof(int32_t))
            d = <int64_t*>calloc(ncap, sizeof(int64_t))
            for x in range(self.rx_next, self.sn_next):
                a[x & nm] = self.state[x & om]
                b[x & nm] = self.final[x & om]
                c[x & nm] = self.flow[x & om]
                d[x & nm] = self.seg[x & om]
            free(self.state)
            free(self.final)
            free(self.flow)
            free(self.seg)
            self.state = a
            self.final = b
            self.flow = c
            self.seg = d
            self.cap = ncap
        x = self.sn_next
        self.sn_next += 1
        return x


# ---------------------------------------------------------------------------
# event heap

cdef struct Ev:
    int64_t t
    int64_t seq
    int32_t kind
    int32_t a
    int64_t b


cdef inline bint ev_less(Ev* x, Ev* y) nogil:
    return x.t < y.t or (x.t == y.t and x.seq < y.seq)


cdef class CEngine:
    cdef object spec
    cdef Ev* heap
    cdef int64_t hn, hcap, seq, events
    cdef int64_t n_u, n_f, n_steps, grid, duration, warmup, trace_iv
    cdef double* cap
    cdef double* pe
    cdef list bufs, senders, recvs, reorders, rngs, dl, ul
    cdef int64_t* busy
    cdef int32_t* h_flow
    cdef int64_t* h_seg
    cdef int32_t* h_size
    cdef double* rem
    cdef double* rate
    cdef int64_t* last
    cdef int64_t* token
    cdef int64_t tti_nb
    cdef uint8_t* back
    cdef int64_t* is_tcp
    cdef int64_t* f_ue
    cdef int64_t* f_mss
    cdef int64_t* f_down
    cdef int64_t* f_up
    cdef int64_t* nic_free
    cdef int64_t* nic_ser
    cdef int64_t* rto_pending
    cdef uint8_t* pace_pending
    cdef int64_t* udp_count
    cdef int64_t* udp_delivered
    cdef int64_t* udp_q
    cdef int64_t* udp_r
    cdef int64_t* udp_rate
    cdef int64_t* udp_acc
    cdef int64_t* deliv_warm
    # harq
    cdef int64_t max_harq, harq_rtt, rlc_timer
    cdef bint rlc_am
    # results
    cdef int64_t* u_served
    cdef double* u_air
    cdef int64_t* u_back
    cdef int64_t* u_tail
    cdef int64_t* u_codel
    cdef int64_t* u_harq
    cdef int64_t* u_rlc
    cdef int64_t* u_maxocc
    cdef int64_t* f_qdrops
    cdef int64_t* f_closs
    cdef list flow_trace, queue_trace

    def __cinit__(self):
        self.heap = NULL

    def __dealloc__(self):
        free(self.heap)
        free(self.cap)
        free(self.pe)
        free(self.busy); free(self.h_flow); free(self.h_seg); free(self.h_size)
        free(self.rem); free(self.rate); free(self.last); free(self.token); free(self.back)
        free(self.is_tcp); free(self.f_ue); free(self.f_mss); free(self.f_down); free(self.f_up)
        free(self.nic_free); free(self.nic_ser); free(self.rto_pending); free(self.pace_pending)
        free(self.udp_count); free(self.udp_delivered); free(self.udp_q); free(self.udp_r)
        free(self.udp_rate); free(self.udp_acc); free(self.deliv_warm)
        free(self.u_served); free(self.u_air); free(self.u_back); free(self.u_tail); free(self.u_codel)
        free(self.u_harq); free(self.u_rlc); free(self.u_maxocc); free(self.f_qdrops); free(self.f_closs)

    def __init__(self, spec):
        cdef int64_t i, k, n_u, n_f
        spec.validate()
        self.spec = spec
        n_u = len(spec.ues)
        n_f = len(spec.flows)
        self.n_u = n_u
        self.n_f = n_f
        self.n_steps = len(spec.capacity[0])
        self.grid = spec.grid_ns
        self.duration = spec.duration_ns
        self.warmup = spec.warmup_ns
        self.trace_iv = spec.trace_interval_ns
        self.hcap = 1024
        self.heap = <Ev*>malloc(self.hcap * sizeof(Ev))
        self.hn = 0
        self.seq = 0
        self.events = 0
        self.cap = <double*>malloc(n_u * self.n_steps * sizeof(double))
        self.pe = <double*>malloc(n_u * self.n_steps * sizeof(double))
        for i in range(n_u):
            c = np.ascontiguousarray(spec.capacity[i], dtype=np.float64)
            p = np.ascontiguousarray(spec.error_prob[i], dtype=np.float64)
            if len(c) != self.n_steps or len(p) != self.n_steps:
                raise ValueError("all channel arrays must have the same length")
            self._fill(i, c, p)
        self.bufs = []
        for u in spec.ues:
            self.bufs.append(CBuf(u.buffer_bytes, u.aqm == "codel", spec.codel_target, spec.codel_interval))
        self.busy = <int64_t*>calloc(n_u, sizeof(int64_t))
        self.h_flow = <int32_t*>calloc(n_u, sizeof(int32_t))
        self.h_seg = <int64_t*>calloc(n_u, sizeof(int64_t))
        self.h_size = <int32_t*>calloc(n_u, sizeof(int32_t))
        self.rem = <double*>calloc(n_u, sizeof(double))
        self.rate = <double*>calloc(n_u, sizeof(double))
        self.last = <int64_t*>calloc(n_u, sizeof(int64_t))
        self.token = <int64_t*>calloc(n_u, sizeof(int64_t))
        self.back = <uint8_t*>calloc(n_u, sizeof(uint8_t))
        self.tti_nb = 0
        self.reorders = [Reorder() for _ in range(n_u)]
        self.rngs = [Rng(SplitMix64(spec.seed, f"harq/{u}").state) for u in range(n_u)]
        h = spec.harq
        self.max_harq = h.max_harq_retx
        self.harq_rtt = h.harq_rtt
        self.rlc_timer = h.rlc_retx_timer
        self.rlc_am = h.rlc_am_enabled
        self.u_served = <int64_t*>calloc(n_u, sizeof(int64_t))
        self.u_air = <double*>calloc(n_u, sizeof(double))
        self.u_back = <int64_t*>calloc(n_u, sizeof(int64_t))
        self.u_tail = <int64_t*>calloc(n_u, sizeof(int64_t))
        self.u_codel = <int64_t*>calloc(n_u, sizeof(int64_t))
        self.u_harq = <int64_t*>calloc(n_u, sizeof(int64_t))
        self.u_rlc = <int64_t*>calloc(n_u, sizeof(int64_t))
        self.u_maxocc = <int64_t*>calloc(n_u, sizeof(int64_t))
        self.is_tcp = <int64_t*>calloc(n_f, sizeof(int64_t))
        self.f_ue = <int64_t*>calloc(n_f, sizeof(int64_t))
        self.f_mss = <int64_t*>calloc(n_f, sizeof(int64_t))
        self.f_down = <int64_t*>calloc(n_f, sizeof(int64_t))
        self.f_up = <int64_t*>calloc(n_f, sizeof(int64_t))
        self.nic_free = <int64_t*>calloc(n_f, sizeof(int64_t))
        self.nic_ser = <int64_t*>calloc(n_f, sizeof(int64_t))
        self.rto_pending = <int64_t*>calloc(n_f, sizeof(int64_t))
        self.pace_pending = <uint8_t*>calloc(n_f, sizeof(uint8_t))
        self.udp_count = <int64_t*>calloc(n_f, sizeof(int64_t))
        self.udp_delivered = <int64_t*>calloc(n_f, sizeof(int64_t))
        self.udp_q = <int64_t*>calloc(n_f, sizeof(int64_t))
        self.udp_r = <int64_t*>calloc(n_f, sizeof(int64_t))
        self.udp_rate = <int64_t*>calloc(n_f, sizeof(int64_t))
        self.udp_acc = <int64_t*>calloc(n_f, sizeof(int64_t))
        self.deliv_warm = <int64_t*>calloc(n_f, sizeof(int64_t))
        self.f_qdrops = <int64_t*>calloc(n_f, sizeof(int64_t))
        self.f_closs = <int64_t*>calloc(n_f, sizeof(int64_t))
        self.senders = []
        self.recvs = []
        self.dl = []
        self.ul = []
        for i in range(n_f):
            fs = spec.flows[i]
            self.f_ue[i] = fs.ue
            self.f_mss[i] = fs.mss
            self.f_down[i] = fs.delay_down
            self.f_up[i] = fs.delay_up
            self.nic_ser[i] = ceil_div_ns(fs.mss * 8.0, spec.nic_rate)
            self.rto_pending[i] = -1
            self.dl.append(Line())
            self.ul.append(Line())
            if fs.kind == "tcp":
                self.is_tcp[i] = 1
                cid = CC_IDS.get(fs.cc)
                if cid is None:
                    raise ValueError(f"unknown congestion control {fs.cc!r}")
                if cid == 0:
                    cc = CNewReno(fs.mss, spec.init_cwnd_segs)
                elif cid == 1:
                    cc = CHighSpeed(fs.mss, spec.init_cwnd_segs)
                elif cid == 2:
                    cc = CCubic(fs.mss, spec.init_cwnd_segs)
                else:
                    cc = CBbr(fs.mss, spec.init_cwnd_segs, Rng(SplitMix64(spec.seed, f"bbr/{i}").state))
                self.senders.append(CSender(cc, fs.mss, spec.min_rto, spec.init_rto, spec.max_rto,
                                            spec.max_rto_retries, spec.warmup_ns, fs.rwnd))
                self.recvs.append(CRecv(fs.mss))
            else:
                self.senders.append(None)
                self.recvs.append(None)
                rate = max(1, int(fs.udp_rate))
                q, r = divmod(fs.mss * 8 * 1_000_000_000, rate)
                self.udp_q[i] = q
                self.udp_r[i] = r
                self.udp_rate[i] = rate
        self.flow_trace = []
        self.queue_trace = []

    cdef void _fill(self, int64_t u, double[::1] c, double[::1] p):
        cdef int64_t k
        for k in range(self.n_steps):
            self.cap[u * self.n_steps + k] = c[k]
            self.pe[u * self.n_steps + k] = p[k]

    # -- heap -----------------------------------------------------------------
    cdef void post(self, int64_t t, int32_t kind, int32_t a, int64_t b):
        cdef int64_t i, parent
        cdef Ev e
        cdef Ev* nh
        if self.hn == self.hcap:
            nh = <Ev*>malloc(2 * self.hcap * sizeof(Ev))
            for i in range(self.hn):
                nh[i] = self.heap[i]
            free(self.heap)
            self.heap = nh
            self.hcap *= 2
        e.t = t
        e.seq = self.seq
        e.kind = kind
        e.a = a
        e.b = b
        self.seq += 1
        i = self.hn
        self.hn += 1
        while i > 0:
            parent = (i - 1) >> 1
            if ev_less(&e, &self.heap[parent]):
                self.heap[i] = self.heap[parent]
                i = parent
            else:
                break
        self.heap[i] = e

    cdef Ev pop_ev(self):
        cdef Ev top = self.heap[0]
        cdef Ev last
        cdef int64_t i = 0, c, n
        self.hn -= 1
        n = self.hn
        if n > 0:
            last = self.heap[n]
            while True:
                c = 2 * i + 1
                if c >= n:
                    break
                if c + 1 < n and ev_less(&self.heap[c + 1], &self.heap[c]):
                    c += 1
                if ev_less(&self.heap[c], &last):
                    self.heap[i] = self.heap[c]
                    i = c
                else:
                    break
            self.heap[i] = last
        return top

    cdef inline int64_t grid_index(self, int64_t t):
        cdef int64_t k = t // self.grid
        return k if k < self.n_steps else self.n_steps - 1

    # -- server side ------------------------------------------------------------
    cdef void send_segment(self, int64_t f, int64_t x, int64_t now):
        cdef int64_t t = imax(now, self.nic_free[f]) + self.nic_ser[f]
        cdef Line line = <Line>self.dl[f]
        self.nic_free[f] = t
        if line.count == 0:
            self.post(t + self.f_down[f], EV_DL, <int32_t>f, 0)
        line.push(t + self.f_down[f], x, 0)

    cdef void try_send(self, int64_t f, int64_t now):
        cdef CSender s = <CSender>self.senders[f]
        cdef int64_t x
        while s.can_send():
            if s.pacing_blocked(now):
                if not self.pace_pending[f]:
                    self.pace_pending[f] = 1
                    self.post(s.next_send_time, EV_PACE, <int32_t>f, 0)
                break
            x = s.next_segment(now)
            self.send_segment(f, x, now)
        self.arm_rto(f)

    cdef inline void arm_rto(self, int64_t f):
        cdef CSender s = <CSender>self.senders[f]
        cdef int64_t d = s.rto_deadline
        if d >= 0 and (self.rto_pending[f] < 0 or d < self.rto_pending[f]):
            self.rto_pending[f] = d
            self.post(d, EV_RTO, <int32_t>f, 0)

    cdef void on_rto_event(self, int64_t f, int64_t now):
        cdef CSender s
        cdef int64_t d
        cdef bint alive
        if self.rto_pending[f] != now:
            return
        self.rto_pending[f] = -1
        s = <CSender>self.senders[f]
        d = s.rto_deadline
        if d < 0:
            return
        if now < d:
            self.rto_pending[f] = d
            self.post(d, EV_RTO, <int32_t>f, 0)
            return
        alive = s.on_rto(now)
        if self.trace_iv:
            self.flow_trace.append((now, f, s.cc.cwnd, s.srtt, s.in_flight(), "rto"))
        if alive:
            self.try_send(f, now)

    cdef void on_ack(self, int64_t f, int64_t ack_no, int64_t trig, int64_t now):
        cdef CSender s = <CSender>self.senders[f]
        cdef int64_t before = s.st_rec
        s.on_ack(ack_no, trig, now)
        if self.trace_iv and s.st_rec != before:
            self.flow_trace.append((now, f, s.cc.cwnd, s.srtt, s.in_flight(), "loss"))
        if not s.aborted:
            self.try_send(f, now)

    # -- gNB side ---------------------------------------------------------------
    cdef void drop(self, int64_t f, int64_t x, int64_t ue, int64_t now, int64_t sojourn):
        cdef CSender s
        self.f_qdrops[f] += 1
        if self.is_tcp[f]:
            s = <CSender>self.senders[f]
            s.mark_dropped(x, CAUSE_QUEUE)
        if self.trace_iv:
            self.queue_trace.append((now, ue, (<CBuf>self.bufs[ue]).occ, sojourn, 1))

    cdef void enqueue(self, int64_t f, int64_t x, int64_t now):
        cdef int64_t ue = self.f_ue[f]
        cdef CBuf buf = <CBuf>self.bufs[ue]
        cdef int64_t soj
        if not buf.enqueue(<int32_t>f, x, <int32_t>self.f_mss[f], now):
            self.u_tail[ue] += 1
            soj = now - buf.head_enq() if buf.count > 0 else 0
            self.drop(f, x, ue, now, soj)
            return
        if buf.occ > self.u_maxocc[ue]:
            self.u_maxocc[ue] = buf.occ
        if not self.busy[ue]:
            if self.rate[ue] == 0.0 and self.tti_nb == 0:
                self.rate[ue] = self.cap[ue * self.n_steps + self.grid_index(now)]
                self.tti_nb = 1
            self.start_service(ue, now)

    cdef void start_service(self, int64_t ue, int64_t now):
        cdef CBuf buf = <CBuf>self.bufs[ue]
        cdef bint has = buf.dequeue(now)
        cdef int64_t i
        for i in range(buf.nd):
            self.u_codel[ue] += 1
            self.drop(buf.d_flow[i], buf.d_seg[i], ue, now, now - buf.d_enq[i])
        if not has:
            self.busy[ue] = 0
            return
        self.busy[ue] = 1
        self.h_flow[ue] = buf.o_flow
        self.h_seg[ue] = buf.o_seg
        self.h_size[ue] = buf.o_size
        self.rem[ue] = buf.o_size * 8.0
        self.last[ue] = now
        self.schedule_departure(ue, now)

    cdef inline void schedule_departure(self, int64_t ue, int64_t now):
        cdef double r
        self.token[ue] += 1
        r = self.rate[ue]
        if r > 0.0:
            self.post(now + ceil_div_ns(self.rem[ue], r), EV_DEPART, <int32_t>ue, self.token[ue])

    cdef void on_tti(self, int64_t k, int64_t now):
        cdef int64_t nb = 0, u, kk
        cdef double share, new_rate, rem
        cdef bint measuring
        for u in range(self.n_u):
            if self.busy[u] or (<CBuf>self.bufs[u]).count > 0:
                self.back[u] = 1
                nb += 1
            else:
                self.back[u] = 0
        share = 1.0 / nb if nb else 0.0
        kk = k if k < self.n_steps else self.n_steps - 1
        measuring = now >= self.warmup
        for u in range(self.n_u):
            new_rate = share * self.cap[u * self.n_steps + kk] if self.back[u] else 0.0
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
            if self.back[u] and measuring:
                self.u_air[u] += share
                self.u_back[u] += 1
        self.tti_nb = nb
        if now + self.grid < self.duration:
            self.post(now + self.grid, EV_TTI, <int32_t>(k + 1), 0)

    cdef void on_depart(self, int64_t ue, int64_t token, int64_t now):
        if token != self.token[ue]:
            return
        self.busy[ue] = 0
        if now >= self.warmup:
            self.u_served[ue] += self.h_size[ue]
        self.radio_transmit(ue, self.h_flow[ue], self.h_seg[ue], now)
        self.last[ue] = now
        self.start_service(ue, now)

    cdef void radio_transmit(self, int64_t ue, int64_t flow, int64_t seg, int64_t now):
        cdef Rng rng = <Rng>self.rngs[ue]
        cdef Reorder ro = <Reorder>self.reorders[ue]
        cdef double* pe = self.pe + ue * self.n_steps
        cdef int64_t sn = ro.assign()
        cdef int64_t t = now, attempts = 0, j, m
        cdef int outcome = SLOT_PENDING
        cdef bint ok
        cdef CSender s
        while True:
            ok = False
            for j in range(self.max_harq + 1):
                attempts += 1
                if rng.uniform() >= pe[self.grid_index(t)]:
                    ok = True
                    break
                if j < self.max_harq:
                    t += self.harq_rtt
            if ok:
                outcome = SLOT_READY
                break
            if not self.rlc_am:
                outcome = SLOT_LOST
                break
            self.u_rlc[ue] += 1
            t += self.rlc_timer
            if t > self.duration:
                break
        self.u_harq[ue] += attempts - 1
        if outcome == SLOT_LOST:
            self.f_closs[flow] += 1
            if self.is_tcp[flow]:
                s = <CSender>self.senders[flow]
                s.mark_dropped(seg, CAUSE_CHANNEL)
        m = sn & (ro.cap - 1)
        ro.flow[m] = <int32_t>flow
        ro.seg[m] = seg
        if outcome == SLOT_READY and t == now:
            ro.state[m] = SLOT_READY
            ro.final[m] = SLOT_READY
            self.release(ue, now)
            return
        ro.state[m] = SLOT_PENDING
        ro.final[m] = outcome
        if outcome != SLOT_PENDING:
            self.post(t, EV_HARQ, <int32_t>ue, sn)

    cdef void on_harq(self, int64_t ue, int64_t sn, int64_t now):
        cdef Reorder ro = <Reorder>self.reorders[ue]
        cdef int64_t m = sn & (ro.cap - 1)
        ro.state[m] = ro.final[m]
        self.release(ue, now)

    cdef void release(self, int64_t ue, int64_t now):
        cdef Reorder ro = <Reorder>self.reorders[ue]
        cdef int64_t nxt = ro.rx_next, m
        cdef uint8_t st
        while nxt < ro.sn_next:
            m = nxt & (ro.cap - 1)
            st = ro.state[m]
            if st == SLOT_PENDING:
                break
            nxt += 1
            if st == SLOT_READY:
                ro.rx_next = nxt
                self.deliver(ro.flow[m], ro.seg[m], now)
        ro.rx_next = nxt

    # -- UE side -----------------------------------------------------------------
    cdef void deliver(self, int64_t f, int64_t x, int64_t now):
        cdef CRecv r
        cdef Line line
        cdef int64_t ack_no, t
        if not self.is_tcp[f]:
            self.udp_delivered[f] += self.f_mss[f]
            return
        r = <CRecv>self.recvs[f]
        ack_no = r.on_data(x)
        line = <Line>self.ul[f]
        t = now + self.f_up[f]
        if line.count == 0:
            self.post(t, EV_UL, <int32_t>f, 0)
        line.push(t, ack_no, x)

    cdef void on_udp(self, int64_t f, int64_t now):
        cdef int64_t k = self.udp_count[f], acc, t
        self.udp_count[f] = k + 1
        self.send_segment(f, k, now)
        acc = self.udp_acc[f] + self.udp_r[f]
        t = now + self.udp_q[f]
        if acc >= self.udp_rate[f]:
            acc -= self.udp_rate[f]
            t += 1
        self.udp_acc[f] = acc
        if t <= self.duration:
            self.post(t, EV_UDP, <int32_t>f, 0)

    cdef inline int64_t delivered_now(self, int64_t f):
        if self.is_tcp[f]:
            return (<CRecv>self.recvs[f]).rcv_nxt * self.f_mss[f]
        return self.udp_delivered[f]

    cdef void on_trace(self, int64_t now):
        cdef int64_t f, u, soj
        cdef CSender s
        cdef CBuf buf
        for f in range(self.n_f):
            if self.is_tcp[f]:
                s = <CSender>self.senders[f]
                self.flow_trace.append((now, f, s.cc.cwnd, s.srtt, s.in_flight(), "sample"))
        for u in range(self.n_u):
            buf = <CBuf>self.bufs[u]
            soj = now - buf.head_enq() if buf.count > 0 else 0
            self.queue_trace.append((now, u, buf.occ, soj, 0))
        if now + self.trace_iv <= self.duration:
            self.post(now + self.trace_iv, EV_TRACE, 0, 0)

    def run(self):
        cdef int64_t f, t, ack_no, trig
        cdef Ev e
        cdef Line line
        cdef int64_t end = self.duration
        if end > 0:
            self.post(0, EV_TTI, 0, 0)
            if self.warmup <= end:
                self.post(self.warmup, EV_WARMUP, 0, 0)
            if self.trace_iv > 0:
                self.post(0, EV_TRACE, 0, 0)
            for f in range(self.n_f):
                if not self.is_tcp[f]:
                    self.post(0, EV_UDP, <int32_t>f, 0)
            for f in range(self.n_f):
                if self.is_tcp[f]:
                    self.try_send(f, 0)
        while self.hn > 0 and self.heap[0].t <= end:
            e = self.pop_ev()
            t = e.t
            self.events += 1
            if e.kind == EV_DL:
                line = <Line>self.dl[e.a]
                while line.count > 0 and line.t[line.head] <= t:
                    f = line.a[line.head]
                    line.pop()
                    self.enqueue(e.a, f, t)
                if line.count > 0:
                    self.post(line.t[line.head], EV_DL, e.a, 0)
            elif e.kind == EV_UL:
                line = <Line>self.ul[e.a]
                while line.count > 0 and line.t[line.head] <= t:
                    ack_no = line.a[line.head]
                    trig = line.b[line.head]
                    line.pop()
                    self.on_ack(e.a, ack_no, trig, t)
                if line.count > 0:
                    self.post(line.t[line.head], EV_UL, e.a, 0)
            elif e.kind == EV_DEPART:
                self.on_depart(e.a, e.b, t)
            elif e.kind == EV_TTI:
                self.on_tti(e.a, t)
            elif e.kind == EV_HARQ:
                self.on_harq(e.a, e.b, t)
            elif e.kind == EV_RTO:
                self.on_rto_event(e.a, t)
            elif e.kind == EV_PACE:
                self.pace_pending[e.a] = 0
                if not (<CSender>self.senders[e.a]).aborted:
                    self.try_send(e.a, t)
            elif e.kind == EV_UDP:
                self.on_udp(e.a, t)
            elif e.kind == EV_WARMUP:
                for f in range(self.n_f):
                    self.deliv_warm[f] = self.delivered_now(f)
            elif e.kind == EV_TRACE:
                self.on_trace(t)
        return self.finish()

    cdef object finish(self):
        cdef int64_t f, u, window = self.duration - self.warmup
        cdef CSender s
        flows = []
        for f in range(self.n_f):
            res = FlowResult()
            if window > 0:
                res.delivered_bytes = self.delivered_now(f) - self.deliv_warm[f]
                res.goodput_bps = res.delivered_bytes * 8e9 / window
            res.queue_drops = self.f_qdrops[f]
            res.chan_losses = self.f_closs[f]
            if not self.is_tcp[f]:
                res.sent = self.udp_count[f]
            else:
                s = <CSender>self.senders[f]
                res.rtt_sum_ns = s.rtt_sum
                res.rtt_samples = s.rtt_n
                res.sent = s.st_sent
                res.retransmits = s.st_retx
                res.chan_retx = s.st_chan
                res.queue_retx = s.st_queue
                res.spurious_retx = s.st_spur
                res.recoveries = s.st_rec
                res.rtos = s.st_rtos
                res.max_backoff = s.st_maxb
                res.aborted = bool(s.aborted)
                res.duplicates = (<CRecv>self.recvs[f]).duplicates
                res.final_cwnd = s.cc.cwnd
                res.srtt_ns = s.srtt
            flows.append(res)
        ues = []
        for u in range(self.n_u):
            ues.append(UeResult(served_bytes=self.u_served[u], airtime=self.u_air[u],
                                backlogged_ttis=self.u_back[u], tail_drops=self.u_tail[u],
                                codel_drops=self.u_codel[u], harq_retx=self.u_harq[u], rlc_retx=self.u_rlc[u],
                                max_occupancy=self.u_maxocc[u]))
        return EngineResult(flows=flows, ues=ues, events=self.events, flow_trace=self.flow_trace,
                            queue_trace=self.queue_trace)


def run_engine(spec):
    """Run ``spec`` on the compiled backend."""
    return CEngine(spec).run()
