"""Cellular bottleneck: per-UE RLC buffers (drop-tail or CoDel), round-robin
TTI scheduling, HARQ and RLC acknowledged-mode retransmission.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .sim_core import NS_PER_MS, SplitMix64

ACCEPTED = True
DROPPED = False


class Pdu:
    """One TCP segment carried as one RLC PDU."""

    __slots__ = ("flow", "seg", "size", "sent_at", "enqueued_at", "sn", "retx")

    def __init__(self, flow: int, seg: int, size: int, sent_at: int = 0, retx: bool = False):
        self.flow = flow
        self.seg = seg
        self.size = size
        self.sent_at = sent_at
        self.enqueued_at = 0
        self.sn = -1
        self.retx = retx

    def __repr__(self) -> str:
        return f"Pdu(flow={self.flow}, seg={self.seg}, size={self.size}, sn={self.sn})"


class RlcBuffer:
    """FIFO of PDUs limited to ``capacity_bytes``; tail drop when full."""

    def __init__(self, capacity_bytes: int):
        if capacity_bytes <= 0:
            raise ValueError("buffer capacity must be positive")
        self.capacity_bytes = int(capacity_bytes)
        self.fifo: deque[Pdu] = deque()
        self.occupancy_bytes = 0
        self.drops = 0

    def __len__(self) -> int:
        return len(self.fifo)

    def enqueue(self, pdu: Pdu, now: int) -> bool:
        if pdu.size <= 0:
            raise ValueError("PDU size must be positive")
        if self.occupancy_bytes + pdu.size > self.capacity_bytes:
            self.drops += 1
            return DROPPED
        pdu.enqueued_at = now
        self.fifo.append(pdu)
        self.occupancy_bytes += pdu.size
        return ACCEPTED

    def head(self) -> Pdu | None:
        return self.fifo[0] if self.fifo else None

    def pop(self) -> Pdu | None:
        if not self.fifo:
            return None
        pdu = self.fifo.popleft()
        self.occupancy_bytes -= pdu.size
        return pdu

    def dequeue(self, now: int) -> tuple[Pdu | None, list[Pdu]]:
        return self.pop(), []

    def transfer_from(self, other: "RlcBuffer") -> None:
        """Move every queued PDU from ``other`` (lossless handover forwarding)."""
        while other.fifo:
            pdu = other.pop()
            self.fifo.append(pdu)
            self.occupancy_bytes += pdu.size


@dataclass
class CoDelState:
    target: int = 5 * NS_PER_MS
    interval: int = 100 * NS_PER_MS
    mtu: int = 1500
    first_above_time: int = 0
    drop_next: int = 0
    count: int = 0
    lastcount: int = 0
    dropping: bool = False


def control_law(t: int, interval: int, count: int) -> int:
    # next drop spacing shrinks as interval / sqrt(count)
    return t + int(interval / math.sqrt(count))


class CoDelBuffer(RlcBuffer):
    """RLC buffer with CoDel applied at dequeue.

    Drop spacing inside a dropping episode is ``interval / sqrt(k)`` before
    the k-th drop, the first drop coming one interval after the sojourn time
    first exceeded the target.
    """

    def __init__(self, capacity_bytes: int, target: int = 5 * NS_PER_MS, interval: int = 100 * NS_PER_MS,
                 mtu: int = 1500):
        super().__init__(capacity_bytes)
        self.codel = CoDelState(target=target, interval=interval, mtu=mtu)
        self.codel_drops = 0

    def _do_dequeue(self, now: int) -> tuple[Pdu | None, bool]:
        pdu = self.pop()
        st = self.codel
        if pdu is None:
            st.first_above_time = 0
            return None, False
        sojourn = now - pdu.enqueued_at
        if sojourn < st.target or self.occupancy_bytes <= st.mtu:
            st.first_above_time = 0
            return pdu, False
        if st.first_above_time == 0:
            st.first_above_time = now + st.interval
            return pdu, False
        return pdu, now >= st.first_above_time

    def dequeue(self, now: int) -> tuple[Pdu | None, list[Pdu]]:
        st = self.codel
        dropped: list[Pdu] = []
        pdu, ok_to_drop = self._do_dequeue(now)
        if st.dropping:
            if not ok_to_drop:
                st.dropping = False
            while st.dropping and now >= st.drop_next:
                dropped.append(pdu)
                st.count += 1
                pdu, ok_to_drop = self._do_dequeue(now)
                if not ok_to_drop:
                    st.dropping = False
                else:
                    st.drop_next = control_law(st.drop_next, st.interval, st.count + 1)
        elif ok_to_drop:
            dropped.append(pdu)
            pdu, ok_to_drop = self._do_dequeue(now)
            st.dropping = True
            delta = st.count - st.lastcount
            if delta > 1 and now - st.drop_next < 16 * st.interval:
                st.count = delta
            else:
                st.count = 1
            st.lastcount = st.count
            st.drop_next = control_law(now, st.interval, st.count + 1)
        self.codel_drops += len(dropped)
        self.drops += len(dropped)
        return pdu, dropped


def codel_dequeue(buf: CoDelBuffer, now: int) -> tuple[Pdu | None, list[Pdu]]:
    return buf.dequeue(now)


def rr_schedule(tti_index: int, backlogged_ues, n_ues: int | None = None) -> dict[int, float]:
    """Equal share of the TTI for every backlogged UE; idle UEs get nothing."""
    ues = sorted(set(backlogged_ues))
    if not ues:
        return {}
    share = 1.0 / len(ues)
    return {u: share for u in ues}


def logistic_bler(sinr_db, floor_db: float = -5.0, nominal_db: float = 0.0, target: float = 0.1):
    """Block error probability: logistic in SINR, 0.5 at the outage floor and
    ``target`` at the nominal operating SINR."""
    width = (nominal_db - floor_db) / math.log(1.0 / target - 1.0)
    z = (np.asarray(sinr_db, dtype=float) - floor_db) / width
    p = 1.0 / (1.0 + np.exp(np.clip(z, -700.0, 700.0)))
    if p.ndim == 0:
        return float(p)
    return p


@dataclass(frozen=True)
class HarqConfig:
    max_harq_retx: int = 3
    harq_rtt: int = 8 * NS_PER_MS
    rlc_am_enabled: bool = True
    rlc_retx_timer: int = 20 * NS_PER_MS
    bler_floor_db: float = -5.0
    bler_nominal_db: float = 0.0
    bler_target: float = 0.1

    def error_prob(self, sinr_db):
        return logistic_bler(sinr_db, self.bler_floor_db, self.bler_nominal_db, self.bler_target)


def transmit_pdu(
    size_bytes: int,
    start: int,
    rate_bps: float,
    cfg: HarqConfig,
    rng: SplitMix64,
    error_prob,
) -> tuple[int | None, int]:
    """Time at which a PDU is decoded at the UE, or ``None`` if lost.

    Serialization takes ``size / rate``. Each transmission attempt fails with
    ``error_prob(t)`` (a float or a callable of the attempt time); HARQ retries
    add ``harq_rtt`` each, up to ``max_harq_retx`` retries. When a HARQ round
    is exhausted RLC-AM restarts it after ``rlc_retx_timer``; without RLC-AM
    the PDU is lost. Returns ``(delivery_time, attempts)``.
    """
    if rate_bps <= 0:
        raise ValueError("link capacity must be positive")
    t = start + serialization_ns(size_bytes, rate_bps)
    p_of = error_prob if callable(error_prob) else (lambda _t, p=float(error_prob): p)
    attempts = 0
    while True:
        for k in range(cfg.max_harq_retx + 1):
            attempts += 1
            if rng.uniform() >= p_of(t):
                return t, attempts
            if k < cfg.max_harq_retx:
                t += cfg.harq_rtt
        if not cfg.rlc_am_enabled:
            return None, attempts
        t += cfg.rlc_retx_timer


def serialization_ns(size_bytes: int, rate_bps: float) -> int:
    return int(math.ceil(size_bytes * 8e9 / rate_bps))


class ReorderBuffer:
    """RLC receive side: releases PDUs to TCP strictly in SN order.

    A PDU declared lost (no RLC-AM) is skipped so that later PDUs are not
    held forever.
    """

    def __init__(self) -> None:
        self.next_sn = 0
        self.pending: dict[int, Pdu | None] = {}

    def push(self, sn: int, pdu: Pdu | None) -> list[Pdu]:
        if sn < self.next_sn:
            return []
        self.pending[sn] = pdu
        out: list[Pdu] = []
        while self.next_sn in self.pending:
            p = self.pending.pop(self.next_sn)
            if p is not None:
                out.append(p)
            self.next_sn += 1
        return out

    def __len__(self) -> int:
        return len(self.pending)
