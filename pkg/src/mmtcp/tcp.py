"""TCP sender and receiver mechanics, independent of the congestion policy.

Data is a full-buffer stream of MSS-sized segments, so the state machines work
on segment indices internally; byte offsets are ``index * mss``. The sender
keeps a SACK scoreboard and marks a segment lost once three segments above it
have been SACKed, retransmits lost segments ahead of new data while the pipe
estimate is below cwnd, and runs a single retransmission timer with
exponential backoff. A retransmission is itself declared lost when a segment
sent after it is delivered first, as in Linux's lost-retransmit detection.
"""

from __future__ import annotations

import bisect
import csv
import enum
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

from .congestion import AckSample, CongestionControl
from .sim_core import NS_PER_MS, NS_PER_S

MIN_RTO = 200 * NS_PER_MS
INIT_RTO = NS_PER_S
MAX_RTO = 60 * NS_PER_S
MAX_RTO_RETRIES = 6
DUP_THRESH = 3
# default receive window for direct engine use; scenarios size it per path
DEFAULT_RWND = 64 * 1024 * 1024

SACKED = 1
LOST = 2
RETX = 4
# delivery already counted toward the rate sampler; survives RTO scoreboard resets
COUNTED = 8

CAUSE_NONE = 0
CAUSE_QUEUE = 1
CAUSE_CHANNEL = 2


class Flag(enum.IntFlag):
    DATA = 1
    ACK = 2


@dataclass
class Segment:
    seq: int                     # byte offset
    len: int
    flags: Flag
    ack_no: int = 0
    sack_blocks: tuple[tuple[int, int], ...] = ()
    send_time: int = 0


def pacing_interval(mss: int, rate_bps: float) -> int:
    """Nanoseconds between paced departures of ``mss``-byte segments."""
    return max(1, int(mss * 8e9 / rate_bps + 0.5))


@dataclass
class RttEstimator:
    """Smoothed RTT with gains 1/8 and 1/4, RTO floored at 200 ms."""

    min_rto: int = MIN_RTO
    max_rto: int = MAX_RTO
    srtt: float = -1.0
    rttvar: float = 0.0
    rto: int = INIT_RTO

    def update(self, r: int) -> None:
        if self.srtt < 0:
            self.srtt = float(r)
            self.rttvar = r / 2.0
        else:
            self.rttvar = 0.75 * self.rttvar + 0.25 * abs(self.srtt - r)
            self.srtt = 0.875 * self.srtt + 0.125 * r
        self.rto = self.compute_rto()

    def compute_rto(self) -> int:
        rto = int(self.srtt + 4.0 * self.rttvar)
        return min(max(rto, self.min_rto), self.max_rto)

    def backoff(self) -> None:
        self.rto = min(2 * self.rto, self.max_rto)


@dataclass
class SenderStats:
    sent: int = 0
    retransmits: int = 0
    chan_retx: int = 0
    queue_retx: int = 0
    spurious_retx: int = 0
    recoveries: int = 0
    rtos: int = 0
    max_backoff: int = 0
    rtt_sum: float = 0.0
    rtt_n: int = 0
    stale_acks: int = 0


class TcpSender:
    """SACK sender. ``cc`` owns cwnd/ssthresh/pacing_rate."""

    def __init__(self, cc: CongestionControl, mss: int, flow_id: int = 0, min_rto: int = MIN_RTO,
                 init_rto: int = INIT_RTO, max_rto: int = MAX_RTO, max_rto_retries: int = MAX_RTO_RETRIES,
                 rwnd: int = DEFAULT_RWND):
        self.cc = cc
        # receive window in whole segments
        self.rwnd_segs = max(1, rwnd // mss)
        self.mss = mss
        self.flow_id = flow_id
        self.una = 0
        self.nxt = 0
        self.high = 0
        # per-segment record: [sent_time, flags, delivered, delivered_time, first_sent_time]
        self.info: dict[int, list[int]] = {}
        self.cause: dict[int, int] = {}
        self.sacked_count = 0
        self.lost_count = 0
        self.retx_q: deque[int] = deque()
        # (send time, index) of SACK-driven retransmissions, oldest first
        self.rexmits: deque[tuple[int, int]] = deque()
        self.top3: list[int] = []
        self.lost_scan = 0
        self.in_recovery = False
        self.recovery_point = 0
        self.rtt = RttEstimator(min_rto=min_rto, max_rto=max_rto, rto=init_rto)
        self.min_rtt = -1
        self.max_rto_retries = max_rto_retries
        self.consecutive_rtos = 0
        self.aborted = False
        self.rto_deadline = -1
        self.next_send_time = 0
        # delivery-rate bookkeeping
        self.delivered = 0
        self.delivered_time = 0
        self.first_sent_time = 0
        self.stats = SenderStats()
        self.measure_from = 0

    # -- accounting -----------------------------------------------------------
    @property
    def pipe(self) -> int:
        """Segments believed to be in the network."""
        return (self.nxt - self.una) - self.sacked_count - self.lost_count

    @property
    def in_flight(self) -> int:
        """Bytes sent and neither cumulatively acked nor SACKed."""
        return (self.nxt - self.una - self.sacked_count) * self.mss

    @property
    def snd_una(self) -> int:
        return self.una * self.mss

    @property
    def snd_nxt(self) -> int:
        return self.nxt * self.mss

    @property
    def rto(self) -> int:
        return self.rtt.rto

    def sacked_ranges(self) -> list[tuple[int, int]]:
        """SACKed byte ranges currently on the scoreboard."""
        out: list[tuple[int, int]] = []
        for s in range(self.una, self.nxt):
            if self.info[s][1] & SACKED:
                if out and out[-1][1] == s:
                    out[-1] = (out[-1][0], s + 1)
                else:
                    out.append((s, s + 1))
        return [(a * self.mss, b * self.mss) for a, b in out]

    def can_send(self) -> bool:
        if self.aborted or self.pipe * self.mss >= self.cc.cwnd:
            return False
        # repairs are always allowed; new data must fit the receive window
        return self.lost_count > 0 or self.nxt < self.high or self.nxt - self.una < self.rwnd_segs

    # -- sending --------------------------------------------------------------
    def next_segment(self, now: int) -> int:
        """Transmit one segment (lost data first) and return its index.

        The caller checks :meth:`can_send` and pacing beforehand.
        """
        pipe_empty = self.pipe == 0
        q = self.retx_q
        while q and (q[0] < self.una or not (self.info[q[0]][1] & LOST)):
            q.popleft()
        if q:
            x = q.popleft()
            rec = self.info[x]
            rec[1] = (rec[1] & ~LOST) | RETX
            self.lost_count -= 1
            self._count_retx(x)
            self.rexmits.append((now, x))
        else:
            x = self.nxt
            self.nxt += 1
            if x < self.high:
                rec = self.info[x]
                rec[1] |= RETX
                self._count_retx(x)
            else:
                self.high = x + 1
                rec = [0, 0, 0, 0, 0]
                self.info[x] = rec
        if pipe_empty:
            self.first_sent_time = now
            self.delivered_time = now
        rec[0] = now
        rec[2] = self.delivered
        rec[3] = self.delivered_time
        rec[4] = self.first_sent_time
        self.stats.sent += 1
        if self.rto_deadline < 0 or (x == self.una and rec[1] & RETX):
            # retransmitting the head restarts the timer, as Linux does
            self.rto_deadline = now + self.rtt.rto
        pr = self.cc.pacing_rate
        if pr > 0.0:
            self.next_send_time = now + pacing_interval(self.mss, pr)
        return x

    def _count_retx(self, x: int) -> None:
        st = self.stats
        st.retransmits += 1
        c = self.cause.pop(x, CAUSE_NONE)
        if c == CAUSE_CHANNEL:
            st.chan_retx += 1
        elif c == CAUSE_QUEUE:
            st.queue_retx += 1
        else:
            st.spurious_retx += 1

    def mark_dropped(self, x: int, cause: int) -> None:
        """Record why segment ``x`` never reached the receiver."""
        if self.una <= x < self.high:
            self.cause[x] = cause

    def pacing_blocked(self, now: int) -> bool:
        return self.cc.pacing_rate > 0.0 and now < self.next_send_time

    def try_send(self, now: int) -> list[Segment]:
        """Emit every segment the window allows right now.

        With a pacing rate only one segment leaves per pacing interval; the
        caller resumes at :attr:`next_send_time`.
        """
        out = []
        while self.can_send() and not self.pacing_blocked(now):
            x = self.next_segment(now)
            out.append(Segment(seq=x * self.mss, len=self.mss, flags=Flag.DATA, send_time=now))
        return out

    # -- ACK processing -------------------------------------------------------
    def _deliver(self, x: int, rec: list[int], now: int, rs: list) -> None:
        if rec[0] > rs[4]:
            rs[4] = rec[0]
        if rec[1] & COUNTED:
            return
        rec[1] |= COUNTED
        self.delivered += self.mss
        if rec[2] >= rs[0]:
            rs[0] = rec[2]
            rs[1] = rec[0] - rec[4]
            rs[2] = now - rec[3]
            self.first_sent_time = rec[0]
        if not rec[1] & RETX and rec[0] > rs[3]:
            rs[3] = rec[0]

    def _note_sacked(self, x: int) -> None:
        t = self.top3
        if len(t) < DUP_THRESH:
            bisect.insort(t, x)
        elif x > t[0]:
            t.pop(0)
            bisect.insort(t, x)

    def on_ack(self, ack_no: int, sack_blocks=(), now: int = 0, trig: int = -1) -> AckSample | None:
        """Process an ACK carrying cumulative ``ack_no`` (segment index).

        ``sack_blocks`` are half-open segment-index ranges. When the ACK path
        is lossless and in order the sender's SACK knowledge grows by exactly
        the segment that triggered the ACK, so ``trig`` may be passed instead
        of blocks with the same effect.
        """
        if ack_no < self.una:
            self.stats.stale_acks += 1
            return None
        if self.aborted:
            return None
        # rs: [prior_delivered, send_elapsed, ack_elapsed, rtt sample send time,
        #      latest send time among delivered segments]
        rs = [-1, 0, 0, -1, -1]
        before = self.delivered
        acked = 0
        info = self.info
        if ack_no > self.una:
            for x in range(self.una, ack_no):
                rec = info.pop(x)
                f = rec[1]
                if f & SACKED:
                    self.sacked_count -= 1
                else:
                    self._deliver(x, rec, now, rs)
                if f & LOST:
                    self.lost_count -= 1
                self.cause.pop(x, None)
            acked = (ack_no - self.una) * self.mss
            self.una = ack_no
            if self.nxt < ack_no:
                self.nxt = ack_no
            self.consecutive_rtos = 0
        if self.in_recovery and self.una >= self.recovery_point:
            self.in_recovery = False
        if trig >= 0:
            blocks = ((trig, trig + 1),)
        else:
            blocks = sack_blocks
        for s, e in blocks:
            for x in range(max(s, self.una), min(e, self.nxt)):
                rec = info[x]
                f = rec[1]
                if f & SACKED:
                    continue
                rec[1] = (f | SACKED) & ~LOST
                self.sacked_count += 1
                if f & LOST:
                    self.lost_count -= 1
                self._deliver(x, rec, now, rs)
                self._note_sacked(x)
        newly = self.delivered - before
        if newly:
            self.delivered_time = now
        rtt = -1
        if rs[3] >= 0:
            rtt = now - rs[3]
            self.rtt.update(rtt)
            if self.min_rtt < 0 or rtt < self.min_rtt:
                self.min_rtt = rtt
            if now >= self.measure_from:
                self.stats.rtt_sum += rtt
                self.stats.rtt_n += 1
        rate = -1.0
        if rs[0] >= 0:
            interval = max(rs[1], rs[2])
            if interval > 0 and self.min_rtt > 0 and interval >= self.min_rtt:
                rate = (self.delivered - rs[0]) * 8e9 / interval
        lost = self._mark_losses() + self._mark_lost_rexmits(rs[4])
        if lost and not self.in_recovery:
            self.in_recovery = True
            self.recovery_point = self.nxt
            self.stats.recoveries += 1
            self.cc.on_loss(now, self.in_flight)
        sample = AckSample(
            now=now, acked=acked, newly_delivered=newly, delivered=self.delivered,
            prior_delivered=rs[0], rtt=rtt, rate=rate, in_flight=self.pipe * self.mss,
            lost=lost * self.mss, in_recovery=self.in_recovery,
        )
        self.cc.on_ack(sample)
        if self.nxt == self.una:
            self.rto_deadline = -1
        elif acked:
            self.rto_deadline = now + self.rtt.rto
        return sample

    def _mark_losses(self) -> int:
        if len(self.top3) < DUP_THRESH:
            return 0
        limit = min(self.top3[0], self.nxt)
        x = max(self.lost_scan, self.una)
        n = 0
        info = self.info
        while x < limit:
            rec = info[x]
            if not rec[1] & (SACKED | LOST):
                rec[1] |= LOST
                self.lost_count += 1
                self.retx_q.append(x)
                n += 1
            x += 1
        if limit > self.lost_scan:
            self.lost_scan = limit
        return n

    def _mark_lost_rexmits(self, sent_before: int) -> int:
        """The path is FIFO, so a retransmission overtaken by a later send is gone."""
        q = self.rexmits
        n = 0
        while q and q[0][0] < sent_before:
            t, x = q.popleft()
            if x < self.una:
                continue
            rec = self.info[x]
            if rec[0] != t or rec[1] & (SACKED | LOST):
                continue
            rec[1] |= LOST
            self.lost_count += 1
            self.retx_q.append(x)
            n += 1
        return n

    def on_rto(self, now: int) -> bool:
        """Retransmission timeout. Returns False once the flow gives up."""
        st = self.stats
        # a repeated timeout without progress keeps ssthresh where the first one put it
        held = self.cc.ssthresh if self.consecutive_rtos > 0 else None
        self.cc.on_rto(now, self.in_flight)
        if held is not None:
            self.cc.ssthresh = held
        st.rtos += 1
        self.consecutive_rtos += 1
        if self.consecutive_rtos > st.max_backoff:
            st.max_backoff = self.consecutive_rtos
        if self.consecutive_rtos > self.max_rto_retries:
            self.aborted = True
            self.rto_deadline = -1
            return False
        self.rtt.backoff()
        for x in range(self.una, self.high):
            rec = self.info[x]
            rec[1] &= RETX | COUNTED
        self.sacked_count = 0
        self.lost_count = 0
        self.retx_q.clear()
        self.rexmits.clear()
        self.top3 = []
        self.lost_scan = self.una
        self.nxt = self.una
        self.in_recovery = False
        self.rto_deadline = now + self.rtt.rto
        self.next_send_time = now
        return True

    def rto_due(self, now: int) -> bool:
        return self.rto_deadline >= 0 and now >= self.rto_deadline


class TcpReceiver:
    """Cumulative ACK plus SACK for every data segment (no delayed ACK)."""

    def __init__(self, mss: int):
        self.mss = mss
        self.rcv_nxt = 0
        # out-of-order ranges [start, end, last_update], sorted by start
        self.ranges: list[list[int]] = []
        self._stamp = 0
        self.delivered_bytes = 0
        self.data_segments = 0
        self.duplicates = 0
        self.acks = 0

    def on_data_idx(self, x: int) -> int:
        """Accept segment ``x``; returns the new cumulative ACK (segment index)."""
        self.data_segments += 1
        self.acks += 1
        self._stamp += 1
        if x < self.rcv_nxt:
            self.duplicates += 1
            return self.rcv_nxt
        r = self.ranges
        if x == self.rcv_nxt:
            self.rcv_nxt += 1
            if r and r[0][0] == self.rcv_nxt:
                self.rcv_nxt = r[0][1]
                r.pop(0)
            self.delivered_bytes = self.rcv_nxt * self.mss
            return self.rcv_nxt
        i = bisect.bisect_right(r, [x, float("inf")]) - 1
        if i >= 0 and r[i][0] <= x < r[i][1]:
            self.duplicates += 1
            r[i][2] = self._stamp
            return self.rcv_nxt
        left = i >= 0 and r[i][1] == x
        right = i + 1 < len(r) and r[i + 1][0] == x + 1
        if left and right:
            r[i][1] = r[i + 1][1]
            r[i][2] = self._stamp
            r.pop(i + 1)
        elif left:
            r[i][1] = x + 1
            r[i][2] = self._stamp
        elif right:
            r[i + 1][0] = x
            r[i + 1][2] = self._stamp
        else:
            r.insert(i + 1, [x, x + 1, self._stamp])
        return self.rcv_nxt

    def sack_blocks(self, x: int, limit: int = 3) -> list[tuple[int, int]]:
        """Up to ``limit`` SACK ranges, the one holding ``x`` first, then the
        most recently updated ones."""
        first = [rg for rg in self.ranges if rg[0] <= x < rg[1]]
        rest = sorted((rg for rg in self.ranges if not (rg[0] <= x < rg[1])), key=lambda rg: -rg[2])
        return [(rg[0], rg[1]) for rg in (first + rest)[:limit]]

    def on_data(self, seg: Segment) -> Segment:
        if not seg.flags & Flag.DATA:
            raise ValueError("on_data expects a data segment")
        x = seg.seq // self.mss
        ack = self.on_data_idx(x)
        blocks = tuple((a * self.mss, b * self.mss) for a, b in self.sack_blocks(x))
        return Segment(seq=0, len=0, flags=Flag.ACK, ack_no=ack * self.mss, sack_blocks=blocks,
                       send_time=seg.send_time)

    def out_of_order(self) -> list[tuple[int, int]]:
        return [(a * self.mss, b * self.mss) for a, b, _ in self.ranges]


def ack_segment_indices(ack: Segment, mss: int) -> tuple[int, list[tuple[int, int]]]:
    """Convert a byte-based ACK into the sender's segment-index form."""
    return ack.ack_no // mss, [(a // mss, b // mss) for a, b in ack.sack_blocks]


FLOW_TRACE_HEADER = ("time_s", "flow_id", "cwnd_bytes", "srtt_ms", "in_flight", "event_tag")


def write_flow_trace(rows, path: str | Path) -> None:
    """Rows of (time_ns, flow, cwnd, srtt_ns, in_flight, tag) to CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FLOW_TRACE_HEADER)
        for t, flow, cwnd, srtt, infl, tag in rows:
            srtt_ms = "" if srtt < 0 else f"{srtt / 1e6:.3f}"
            w.writerow([f"{t / 1e9:.6f}", flow, int(cwnd), srtt_ms, int(infl), tag])
