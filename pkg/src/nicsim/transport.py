"""Transport subsystem: PSN arithmetic, the lossy point-to-point link and
reliable delivery with Go-Back-N or Selective Repeat."""
from __future__ import annotations

import logging
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable

from .kernel import Simulator
from .primitives import DynamicBuffer

log = logging.getLogger(__name__)

PSN_BITS = 24
PSN_MOD = 1 << PSN_BITS
PSN_HALF = 1 << (PSN_BITS - 1)
SACK_BITS = 64


def psn_add(a: int, n: int) -> int:
    return (a + n) % PSN_MOD


def psn_diff(a: int, b: int) -> int:
    """Signed distance a - b in serial-number arithmetic."""
    d = (a - b) % PSN_MOD
    return d - PSN_MOD if d >= PSN_HALF else d


def psn_lt(a: int, b: int) -> bool:
    return psn_diff(a, b) < 0


DATA, ACK, NAK = "data", "ack", "nak"


@dataclass
class Frame:
    kind: str
    conn: int  # destination connection id
    psn: int
    size: int
    payload: Any = None
    sack: int = 0
    retx: bool = False
    errors: tuple = ()  # (psn, status) pairs the receiver rejected


class LossyLink:
    """Serializing one-way link with seeded per-packet loss.

    Sources register with ``attach`` and are polled round-robin whenever the
    wire frees up.  ``loss_model='stratified'`` drops exactly one packet at a
    random position in each block of round(1/p) packets, which keeps the
    realized loss rate at p even for short runs.
    """

    def __init__(self, sim: Simulator, latency: int, bandwidth: float = 102.4e9,
                 loss_rate: float = 0.0, seed: int = 0, loss_model: str = "bernoulli",
                 reorder_jitter: int = 0, name: str = "link"):
        if not 0.0 <= loss_rate <= 1.0:
            raise ValueError("loss_rate must be in [0, 1]")
        if loss_model not in ("bernoulli", "stratified"):
            raise ValueError(f"unknown loss model {loss_model!r}")
        self.sim = sim
        self.latency = latency
        self.bandwidth = bandwidth
        self.loss_rate = loss_rate
        self.loss_model = loss_model
        self.reorder_jitter = reorder_jitter
        self.name = name
        self.rng = random.Random(seed)
        self._ps_per_byte = 8e12 / bandwidth
        self.sink: Callable[[Frame], None] | None = None
        self._sources: deque = deque()
        self._busy = False
        self.free_at = 0
        self.sent = self.dropped = self.delivered = 0
        self.bytes_sent = 0
        self._block_left = 0
        self._block_drop = -1
        self._last_arrival = 0

    def attach(self, source) -> None:
        self._sources.append(source)

    def connect(self, sink: Callable[[Frame], None]) -> None:
        self.sink = sink

    def kick(self) -> None:
        if not self._busy:
            self._busy = True
            self.sim.schedule(max(self.sim.now, self.free_at), self._next)

    def _next(self) -> None:
        for _ in range(len(self._sources)):
            src = self._sources[0]
            self._sources.rotate(-1)
            frame = src.poll()
            if frame is not None:
                self.transmit(frame)
                self.sim.schedule(self.free_at, self._next)
                return
        self._busy = False

    def _drop(self) -> bool:
        p = self.loss_rate
        if p <= 0.0:
            return False
        if p >= 1.0:
            return True
        if self.loss_model == "bernoulli":
            return self.rng.random() < p
        if self._block_left == 0:
            self._block_left = max(1, round(1 / p))
            self._block_drop = self.rng.randrange(self._block_left)
        self._block_left -= 1
        return self._block_left == self._block_drop

    def transmit(self, frame: Frame) -> bool:
        """Serialize ``frame``; returns False if it was dropped."""
        start = max(self.sim.now, self.free_at)
        self.free_at = start + int(round(frame.size * self._ps_per_byte))
        self.sent += 1
        self.bytes_sent += frame.size
        if self._drop():
            self.dropped += 1
            return False
        arrive = self.free_at + self.latency
        if self.reorder_jitter:
            arrive += self.rng.randrange(self.reorder_jitter + 1)
        else:
            arrive = max(arrive, self._last_arrival)
            self._last_arrival = arrive
        self.delivered += 1
        self.sim.schedule(arrive, self._arrive, frame)
        return True

    def _arrive(self, frame: Frame) -> None:
        if self.sink is not None:
            self.sink(frame)


@dataclass
class _Unacked:
    seq: int
    frame: Frame
    handle: int
    retries: int = 0
    last_sent: int = 0


@dataclass
class Connection:
    conn: int
    peer: int
    reliable: bool = True
    on_commit: Callable[[int, Any], None] = lambda conn, payload: None
    on_acked: Callable[[int, Any], None] = lambda conn, payload: None
    on_error: Callable[[int], None] = lambda conn: None
    on_space: Callable[[int], None] = lambda conn: None
    on_remote_error: Callable[[int, Any, int], None] = lambda conn, payload, status: None
    # sender
    next_seq: int = 0
    base_psn: int = 0
    send_ptr: int = 0  # GBN: next seq to put on the wire
    unacked: dict = field(default_factory=dict)
    pending: deque = field(default_factory=deque)  # SR retransmit queue
    buffer: DynamicBuffer | None = None
    rto: int = 0
    timer: Any = None
    last_goback: dict = field(default_factory=dict)
    failed: bool = False
    # receiver
    expected: int = 0
    rx_buffer: dict = field(default_factory=dict)
    rx_errors: deque = field(default_factory=deque)
    # counters
    tx_packets: int = 0
    tx_bytes: int = 0
    retx_packets: int = 0
    retx_bytes: int = 0
    committed: int = 0
    committed_bytes: int = 0
    discarded: int = 0
    stalls: int = 0
    timeouts: int = 0

    una: int = 0  # lowest seq not yet acknowledged

    @property
    def acked_seq(self) -> int:
        while self.una < self.next_seq and self.una not in self.unacked:
            self.una += 1
        return self.una


class Transport:
    """Per-NIC transport endpoint; one instance per node."""

    def __init__(self, sim: Simulator, *, algorithm: str = "sr", window: int = 32,
                 rtt_estimate: int = 0, rto: int | None = None, max_retries: int = 7,
                 ack_bytes: int = 64, initial_psn: int = 0, name: str = "ts"):
        if algorithm not in ("gbn", "sr"):
            raise ValueError(f"unknown algorithm {algorithm!r}")
        self.sim = sim
        self.algorithm = algorithm
        self.window = window
        self.rtt = rtt_estimate
        self.base_rto = rto if rto is not None else max(3 * rtt_estimate, sim.cycles(100))
        self.max_retries = max_retries
        self.ack_bytes = ack_bytes
        self.initial_psn = initial_psn
        self.name = name
        self.conns: dict[int, Connection] = {}
        self.link: LossyLink | None = None
        self._ctrl: deque[Frame] = deque()
        self._data_rr: deque[int] = deque()
        self.errors: list[int] = []

    # -- wiring ------------------------------------------------------------
    def attach_link(self, link: LossyLink) -> None:
        self.link = link
        link.attach(self)

    def receive(self, frame: Frame) -> None:
        c = self.conns.get(frame.conn)
        if c is None:
            log.warning("%s: frame for unknown conn %d", self.name, frame.conn)
            return
        if frame.kind == DATA:
            if not c.reliable:
                self._rx_unreliable(c, frame)
            elif self.algorithm == "gbn":
                self.rx_deliver_gbn(c, frame)
            else:
                self.rx_deliver_sr(c, frame)
        else:
            self._on_ack(c, frame)

    def open(self, conn: int, peer: int, reliable: bool = True, **callbacks) -> Connection:
        c = Connection(conn, peer, reliable, **callbacks)
        c.base_psn = self.initial_psn
        c.buffer = DynamicBuffer(slots=self.window)
        c.rto = self.base_rto
        self.conns[conn] = c
        self._data_rr.append(conn)
        return c

    def _seq_psn(self, c: Connection, seq: int) -> int:
        return psn_add(c.base_psn, seq)

    def _psn_seq(self, c: Connection, psn: int, ref: int) -> int:
        return ref + psn_diff(psn, self._seq_psn(c, ref))

    # -- sender -------------------------------------------------------------
    def can_inject(self, conn: int) -> bool:
        c = self.conns[conn]
        return not c.reliable or (c.buffer.free_slots > 0 and not c.failed)

    def tx_inject(self, conn: int, payload: Any, size: int) -> bool:
        """Stamp the next PSN and queue for transmission; False = backpressure."""
        c = self.conns[conn]
        if c.failed:
            return False
        seq = c.next_seq
        frame = Frame(DATA, c.peer, self._seq_psn(c, seq), size, payload)
        if not c.reliable:
            c.next_seq += 1
            c.pending.append(frame)
            self.link.kick()
            return True
        handle = c.buffer.insert(seq, 1)
        if handle is None:
            c.stalls += 1
            return False
        c.next_seq += 1
        c.unacked[seq] = _Unacked(seq, frame, handle)
        self.link.kick()
        return True

    def poll(self) -> Frame | None:
        """Link pulls the next frame: control first, then connections round-robin."""
        if self._ctrl:
            return self._ctrl.popleft()
        for _ in range(len(self._data_rr)):
            c = self.conns[self._data_rr[0]]
            self._data_rr.rotate(-1)
            f = self._next_data(c)
            if f is not None:
                return f
        return None

    def _next_data(self, c: Connection) -> Frame | None:
        if not c.reliable:
            if c.pending:
                f = c.pending.popleft()
                c.tx_packets += 1
                c.tx_bytes += f.size
                return f
            return None
        seq = None
        retx = False
        if self.algorithm == "sr":
            while c.pending:
                s = c.pending.popleft()
                if s in c.unacked:
                    seq, retx = s, True
                    break
            if seq is None and c.send_ptr < c.next_seq:
                seq = c.send_ptr
                c.send_ptr += 1
        else:
            while c.send_ptr < c.next_seq and c.send_ptr not in c.unacked:
                c.send_ptr += 1
            if c.send_ptr < c.next_seq:
                seq = c.send_ptr
                c.send_ptr += 1
        if seq is None:
            return None
        u = c.unacked[seq]
        retx = retx or u.last_sent > 0 or u.retries > 0
        u.last_sent = self.sim.now or 1
        f = Frame(DATA, u.frame.conn, u.frame.psn, u.frame.size, u.frame.payload, retx=retx)
        c.tx_packets += 1
        c.tx_bytes += f.size
        if retx:
            c.retx_packets += 1
            c.retx_bytes += f.size
        if c.timer is None:
            self._arm(c)
        return f

    def _arm(self, c: Connection) -> None:
        if c.timer is not None:
            self.sim.cancel(c.timer)
        c.timer = self.sim.after(c.rto, self.on_timeout, c.conn) if c.unacked else None

    def on_timeout(self, conn: int) -> None:
        c = self.conns[conn]
        c.timer = None
        if not c.unacked or c.failed:
            return
        oldest = c.unacked[c.acked_seq]
        oldest.retries += 1
        c.timeouts += 1
        if oldest.retries > self.max_retries:
            self._fail(c)
            return
        c.rto *= 2
        if self.algorithm == "gbn":
            c.send_ptr = oldest.seq
        else:
            c.pending.appendleft(oldest.seq)
        self._arm(c)
        self.link.kick()

    def _fail(self, c: Connection) -> None:
        c.failed = True
        log.info("%s: conn %d exceeded %d retries", self.name, c.conn, self.max_retries)
        for u in c.unacked.values():
            c.buffer.delete(u.handle)
        c.unacked.clear()
        c.pending.clear()
        self.errors.append(c.conn)
        c.on_error(c.conn)

    def _release(self, c: Connection, seq: int) -> None:
        u = c.unacked.pop(seq)
        c.buffer.delete(u.handle)
        c.on_acked(c.conn, u.frame.payload)

    def _on_ack(self, c: Connection, f: Frame) -> None:
        if c.failed:
            return
        ref = c.acked_seq
        cum = self._psn_seq(c, f.psn, ref)  # highest seq received in order
        for psn, status in f.errors:
            s = self._psn_seq(c, psn, ref)
            u = c.unacked.pop(s, None)
            if u is not None:
                c.buffer.delete(u.handle)
                c.on_remote_error(c.conn, u.frame.payload, status)
        advanced = False
        for s in range(ref, min(cum, c.next_seq - 1) + 1):
            if s in c.unacked:
                self._release(c, s)
                advanced = True
        if self.algorithm == "sr" and f.sack:
            holes_before = -1
            for i in range(SACK_BITS):
                if f.sack >> i & 1:
                    s = cum + 2 + i
                    holes_before = s
                    if s in c.unacked:
                        self._release(c, s)
            for s in range(cum + 1, holes_before):
                u = c.unacked.get(s)
                if u is not None and u.last_sent and self.sim.now - u.last_sent > self.rtt:
                    u.last_sent = self.sim.now
                    c.pending.append(s)
        if f.kind == NAK and self.algorithm == "gbn":
            start = cum + 1
            last = c.last_goback.get(start)
            if start in c.unacked and (last is None or self.sim.now - last > self.rtt):
                c.last_goback = {start: self.sim.now}
                c.send_ptr = min(c.send_ptr, start)
        if advanced:
            c.rto = self.base_rto
            self._arm(c)
            c.on_space(c.conn)
        self.link.kick()

    # -- receiver ------------------------------------------------------------
    def _send_ctrl(self, c: Connection, kind: str, cum_seq: int, sack: int = 0) -> None:
        while c.rx_errors and c.rx_errors[0][0] < c.expected - self.window:
            c.rx_errors.popleft()
        errors = tuple((self._seq_psn(c, s), st) for s, st in c.rx_errors)
        self._ctrl.append(Frame(kind, c.peer, self._seq_psn(c, cum_seq), self.ack_bytes,
                                sack=sack, errors=errors))
        self.link.kick()

    def _commit(self, c: Connection, f: Frame, seq: int) -> None:
        """Hand the packet up; a nonzero return from on_commit rejects it."""
        c.committed += 1
        c.committed_bytes += f.size
        status = c.on_commit(c.conn, f.payload)
        if status:
            c.rx_errors.append((seq, int(status)))

    def rx_deliver_gbn(self, c: Connection, f: Frame) -> None:
        seq = self._psn_seq(c, f.psn, c.expected)
        if seq == c.expected:
            c.expected += 1
            self._commit(c, f, seq)
            self._send_ctrl(c, ACK, seq)
        elif seq < c.expected:
            c.discarded += 1
            self._send_ctrl(c, ACK, c.expected - 1)
        else:
            c.discarded += 1
            self._send_ctrl(c, NAK, c.expected - 1)

    def rx_deliver_sr(self, c: Connection, f: Frame) -> None:
        seq = self._psn_seq(c, f.psn, c.expected)
        if seq == c.expected:
            c.expected += 1
            self._commit(c, f, seq)
            while c.expected in c.rx_buffer:
                self._commit(c, c.rx_buffer.pop(c.expected), c.expected)
                c.expected += 1
        elif seq > c.expected:
            if seq not in c.rx_buffer:
                if len(c.rx_buffer) < self.window:
                    c.rx_buffer[seq] = f
                else:
                    c.discarded += 1
        else:
            c.discarded += 1
        sack = 0
        for i in range(SACK_BITS):
            if c.expected + 1 + i in c.rx_buffer:
                sack |= 1 << i
        self._send_ctrl(c, ACK, c.expected - 1, sack)

    def _rx_unreliable(self, c: Connection, f: Frame) -> None:
        seq = self._psn_seq(c, f.psn, c.expected)
        if seq < c.expected:
            c.discarded += 1
            return
        c.expected = seq + 1
        self._commit(c, f, seq)

    # -- stats ------------------------------------------------------------------
    @property
    def retx_bytes(self) -> int:
        return sum(c.retx_bytes for c in self.conns.values())
