"""Queue subsystem: doorbells, round-robin queue scheduler, queue cache with
prefetch, WQE fetcher/parser and the rate-limiter interface."""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from .dma import DmaEngine
from .formats import SEGMENT, WQE_HEAD, MalformedWqe, Opcode, Status, Wqe, unpack_wqe, wqe_nseg
from .kernel import Server, SimulationError, Simulator

log = logging.getLogger(__name__)

IDLE, SCHEDULED, ACTIVE, WAITING, PARKED = "idle", "scheduled", "active", "waiting", "parked"


@dataclass
class WqeMeta:
    """One streamed metadata record: a single sgl entry of a parsed WQE."""
    qid: int
    wqe_id: int
    opcode: Opcode
    seg_index: int
    nseg: int
    va: int = 0
    length: int = 0
    lkey: int = 0
    remote_va: int = 0
    rkey: int = 0
    total_len: int = 0
    kv_key: bytes | None = None

    @property
    def last(self) -> bool:
        return self.seg_index == self.nseg - 1


def parse_wqe(qid: int, raw: bytes) -> list[WqeMeta]:
    """Decode a WQE into per-entry metadata records (KV_GET yields one)."""
    w = unpack_wqe(raw)
    if w.opcode == Opcode.KV_GET:
        return [WqeMeta(qid, w.wqe_id, w.opcode, 0, 1, kv_key=w.kv_key, remote_va=w.remote_va, rkey=w.rkey)]
    total = w.total_len
    return [WqeMeta(qid, w.wqe_id, w.opcode, i, len(w.sgl), va, n, lkey, w.remote_va, w.rkey, total)
            for i, (va, n, lkey) in enumerate(w.sgl)]


@dataclass
class QueueStatus:
    qid: int
    base: int
    depth: int  # in 16 B segments
    head: int = 0  # monotonic segment counters
    tail: int = 0
    state: str = IDLE
    errors: int = 0

    @property
    def pending(self) -> int:
        return self.tail - self.head


@dataclass
class CacheRecord:
    """Cell ownership and the cached window [start, start + len(data)//16)."""
    owner: int = -1
    start: int = 0
    data: bytearray = field(default_factory=bytearray)
    refill_pending: bool = False
    waiters: deque = field(default_factory=deque)

    @property
    def end(self) -> int:
        return self.start + len(self.data) // SEGMENT


class RateLimiter:
    """Per-queue byte budget.  ``None`` budget means unlimited.

    With ``rate`` (bytes per cycle) set, the budget refills continuously up
    to ``burst``.  No congestion-control algorithm lives here.
    """

    def __init__(self, sim: Simulator):
        self.sim = sim
        self._budget: dict[int, float] = {}
        self._rate: dict[int, tuple[float, float]] = {}
        self._stamp: dict[int, int] = {}

    def _refresh(self, qid: int) -> None:
        if qid in self._rate:
            rate, burst = self._rate[qid]
            elapsed = (self.sim.now - self._stamp[qid]) / self.sim.period
            self._budget[qid] = min(burst, self._budget.get(qid, 0.0) + rate * elapsed)
            self._stamp[qid] = self.sim.now

    def get_budget(self, qid: int) -> float | None:
        if qid not in self._budget:
            return None
        self._refresh(qid)
        return self._budget[qid]

    def set(self, qid: int, budget: float | None = None, rate: float | None = None,
            burst: float | None = None) -> None:
        if budget is None and rate is None:
            self._budget.pop(qid, None)
            self._rate.pop(qid, None)
            return
        self._refresh(qid)
        if rate is not None:
            self._rate[qid] = (rate, burst if burst is not None else max(rate, budget or 0.0, 1.0))
            self._stamp[qid] = self.sim.now
        if budget is not None:
            self._budget[qid] = float(budget)
        else:
            self._budget.setdefault(qid, 0.0)

    def try_consume(self, qid: int, n: int) -> bool:
        b = self.get_budget(qid)
        if b is None:
            return True
        if b < n:
            return False
        self._budget[qid] = b - n
        return True

    def wait_cycles(self, qid: int, n: int) -> int | None:
        """Cycles until ``n`` bytes are available, or None if never without rate_set."""
        b = self.get_budget(qid)
        if b is None or b >= n:
            return 0
        if qid not in self._rate or self._rate[qid][0] <= 0:
            return None
        return int(-(-(n - b) // self._rate[qid][0]))


class QueueSubsystem:
    def __init__(self, sim: Simulator, dma: DmaEngine, sink: Callable[[list[WqeMeta]], None], *,
                 cells: int = 32, cell_slots: int = 32, prefetch_threshold: int = 2,
                 quantum: int = 1, on_error: Callable[[int, int, Status], None] | None = None,
                 name: str = "qs"):
        self.sim = sim
        self.dma = dma
        self.sink = sink
        self.on_error = on_error
        self.cell_slots = cell_slots
        self.prefetch_threshold = prefetch_threshold
        self.quantum = quantum
        self.requester = f"{name}.fetch"
        self.queues: dict[int, QueueStatus] = {}
        self.cells = [CacheRecord() for _ in range(cells)]
        self.ring: deque[int] = deque()
        self.limiter = RateLimiter(sim)
        self.sched = Server("qs.sched")
        self.fetcher = Server("qs.fetch")
        self.parser = Server("qs.parse")
        self._kick = False
        self.dropped_doorbells = 0
        self.refills = 0
        self.evictions = 0
        self.fetched = 0
        self.service_log: list[tuple[int, int]] | None = None

    def register(self, qid: int, base_pa: int, depth_segments: int) -> None:
        self.queues[qid] = QueueStatus(qid, base_pa, depth_segments)

    def cell_of(self, qid: int) -> CacheRecord:
        return self.cells[qid % len(self.cells)]

    # -- doorbell / scheduler --------------------------------------------
    def doorbell(self, qid: int, tail_index: int) -> None:
        q = self.queues.get(qid)
        if q is None:
            self.dropped_doorbells += 1
            log.warning("doorbell for unknown qid %d dropped", qid)
            return
        q.tail = q.head + (tail_index - q.head) % q.depth
        if q.state == IDLE and q.pending:
            self._enqueue(q)

    def _enqueue(self, q: QueueStatus, front: bool = False) -> None:
        q.state = SCHEDULED
        if front:
            self.ring.appendleft(q.qid)
        else:
            self.ring.append(q.qid)
        self._kick_sched()

    def _kick_sched(self) -> None:
        if self._kick or not self.ring:
            return
        self._kick = True
        self.sim.schedule(max(self.sim.now, self.sched.free_at), self._schedule_one)

    def _schedule_one(self) -> None:
        self._kick = False
        if not self.ring:
            return
        qid = self.ring.popleft()
        q = self.queues[qid]
        start = self.sched.reserve(self.sim.now, self.sim.cycles(1))
        if self.service_log is not None:
            self.service_log.append((start, qid))
        q.state = ACTIVE
        self._visit(q, start + self.sim.cycles(1))
        self._kick_sched()

    def _visit(self, q: QueueStatus, t: int) -> None:
        cell = self.cell_of(q.qid)
        if cell.owner != q.qid:
            if cell.refill_pending:
                q.state = WAITING
                cell.waiters.append(q.qid)
                return
            if cell.owner >= 0:
                self.evictions += 1
            cell.owner = q.qid
            cell.start = q.head
            cell.data = bytearray()
        served = 0
        while served < self.quantum and q.pending:
            raw = self._cached_wqe(cell, q)
            if raw is None:
                if not cell.refill_pending:
                    self._refill(cell, q)
                q.state = WAITING  # the landing refill re-enqueues us
                return
            nbytes = self._msg_bytes(raw)
            if not self.limiter.try_consume(q.qid, nbytes):
                self._park(q, nbytes)
                return
            t = self._fetch_parse(q, cell, raw, t)
            served += 1
        if q.pending and cell.owner == q.qid:
            self._maybe_prefetch(cell, q)
        self._release_cell(cell)
        if q.pending:
            self._enqueue(q)
        else:
            q.state = IDLE

    def _release_cell(self, cell: CacheRecord) -> None:
        if cell.waiters and not cell.refill_pending:
            qid = cell.waiters.popleft()
            self._enqueue(self.queues[qid])

    def _cached_wqe(self, cell: CacheRecord, q: QueueStatus) -> bytes | None:
        off = (q.head - cell.start) * SEGMENT
        if off < 0 or off + WQE_HEAD > len(cell.data):
            return None
        size = WQE_HEAD + SEGMENT * wqe_nseg(cell.data[off:off + WQE_HEAD])
        if off + size > len(cell.data):
            return None
        return bytes(cell.data[off:off + size])

    @staticmethod
    def _msg_bytes(raw: bytes) -> int:
        try:
            return unpack_wqe(raw).total_len
        except MalformedWqe:
            return 0

    def _fetch_parse(self, q: QueueStatus, cell: CacheRecord, raw: bytes, t: int) -> int:
        sim = self.sim
        nseg = len(raw) // SEGMENT - 1
        f_start = self.fetcher.reserve(t, sim.cycles(sim.beats(64) + 1))
        f_end = f_start + sim.cycles(sim.beats(64) + 1)
        p_start = self.parser.reserve(f_end, sim.cycles(1 + max(1, nseg)))
        p_end = p_start + sim.cycles(1 + max(1, nseg))
        q.head += len(raw) // SEGMENT
        # drop consumed segments from the cell window
        drop = (q.head - cell.start) * SEGMENT
        del cell.data[:drop]
        cell.start = q.head
        self.fetched += 1
        sim.schedule(p_end, self._emit, q.qid, raw)
        return f_end

    def _emit(self, qid: int, raw: bytes) -> None:
        try:
            metas = parse_wqe(qid, raw)
        except MalformedWqe as e:
            self.queues[qid].errors += 1
            wqe_id = int.from_bytes(raw[2:6], "little") if len(raw) >= 6 else 0
            log.debug("malformed WQE on qid %d: %s", qid, e)
            if self.on_error is not None:
                self.on_error(qid, wqe_id, Status.MALFORMED_WQE)
            return
        self.sink(metas)

    def _park(self, q: QueueStatus, nbytes: int) -> None:
        q.state = PARKED
        q.parked_need = nbytes  # type: ignore[attr-defined]
        self._release_cell(self.cell_of(q.qid))
        wait = self.limiter.wait_cycles(q.qid, nbytes)
        if wait:
            self.sim.after(self.sim.cycles(wait), self._unpark, q.qid)

    def _unpark(self, qid: int) -> None:
        q = self.queues[qid]
        if q.state == PARKED:
            self._enqueue(q)

    def rate_set(self, qid: int, budget: float | None = None, rate: float | None = None,
                 burst: float | None = None) -> None:
        if qid not in self.queues:
            raise KeyError(qid)
        self.limiter.set(qid, budget, rate, burst)
        self._unpark(qid)

    def rate_get_budget(self, qid: int) -> float | None:
        return self.limiter.get_budget(qid)

    # -- queue cache refill ---------------------------------------------
    def _refill(self, cell: CacheRecord, q: QueueStatus, prefetch: bool = False) -> bool:
        start = cell.end if cell.owner == q.qid and cell.data else q.head
        if not cell.data:
            cell.start = q.head
            start = q.head
        stop = min(q.tail, cell.start + self.cell_slots)
        if stop <= start:
            if prefetch:
                return False
            raise SimulationError(f"qid {q.qid}: nothing to refill but WQE incomplete")
        cell.refill_pending = True
        self.refills += 1
        pieces = []
        idx = start
        while idx < stop:
            ring_pos = idx % q.depth
            n = min(stop - idx, q.depth - ring_pos)
            pieces.append((q.base + ring_pos * SEGMENT, n * SEGMENT))
            idx += n
        parts: list[bytes | None] = [None] * len(pieces)
        left = [len(pieces)]

        def landed(i):
            def cb(data, err):
                if err is not None:
                    raise SimulationError(f"queue cache refill failed: {err}")
                parts[i] = data
                left[0] -= 1
                if left[0] == 0:
                    self._refilled(cell, q, start, b"".join(parts), prefetch)  # type: ignore[arg-type]
            return cb

        for i, (pa, n) in enumerate(pieces):
            self.dma.read(pa, n, self.requester, landed(i))
        return True

    def _refilled(self, cell: CacheRecord, q: QueueStatus, start: int, data: bytes, prefetch: bool) -> None:
        cell.refill_pending = False
        if cell.owner == q.qid and cell.end == start:
            cell.data += data
        if prefetch:
            if q.state == WAITING:
                self._enqueue(q, front=True)
            self._release_cell(cell)
        else:
            self._enqueue(q, front=True)

    def _maybe_prefetch(self, cell: CacheRecord, q: QueueStatus) -> None:
        if cell.refill_pending or cell.waiters:
            return
        # count complete WQEs still cached
        n, off = 0, 0
        while off + WQE_HEAD <= len(cell.data):
            size = WQE_HEAD + SEGMENT * wqe_nseg(cell.data[off:off + WQE_HEAD])
            if off + size > len(cell.data):
                break
            n += 1
            off += size
        if n < self.prefetch_threshold and cell.end < q.tail:
            self._refill(cell, q, prefetch=True)
