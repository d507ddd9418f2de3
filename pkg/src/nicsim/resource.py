"""Resource subsystem: typed context caches backed by ICM in host memory.

Misses do not block other connections: every request is parked in its
connection's logical queue of a MultiQueue and responses are released per
connection in request order, while hits of other connections flow past a
pending miss.  ``blocking=True`` gives the single-FIFO baseline that stalls
lookup until each miss is filled.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable

from .dma import DmaEngine
from .formats import CQC_BITS, MPT_BITS, MTT_BITS, QPC_BITS, VALUE_BITS
from .kernel import Server, SimulationError, Simulator
from .primitives import BLOCK_OVERHEAD, MultiQueue

ENTRY_BITS = {"QPC": QPC_BITS, "CQC": CQC_BITS, "MPT": MPT_BITS, "MTT": MTT_BITS, "Value": VALUE_BITS}
DEFAULT_DEPTH = {"QPC": 128, "CQC": 128, "MPT": 512, "MTT": 1024, "Value": 1024}


class ResourceError(RuntimeError):
    def __init__(self, conn: int, rtype: str, index: int, reason: str):
        super().__init__(f"{rtype}[{index}] for conn {conn}: {reason}")
        self.conn, self.rtype, self.index = conn, rtype, index


@dataclass
class _Req:
    conn: int
    index: int
    done: Callable
    issued: int
    data: bytes | None = None
    error: Exception | None = None
    ready: bool = False
    hit: bool = False


class ResourceCache:
    """Direct-mapped cache indexed by the low bits of the entry index."""

    def __init__(self, depth: int):
        self.depth = depth
        self.tags: list[int] = [-1] * depth
        self.lines: list[bytes | None] = [None] * depth

    def lookup(self, index: int) -> bytes | None:
        if self.depth == 0:
            return None
        line = index % self.depth
        return self.lines[line] if self.tags[line] == index else None

    def fill(self, index: int, data: bytes) -> None:
        if self.depth:
            line = index % self.depth
            self.tags[line] = index
            self.lines[line] = data

    def invalidate(self, index: int) -> None:
        if self.depth:
            line = index % self.depth
            if self.tags[line] == index:
                self.tags[line] = -1
                self.lines[line] = None

    def entries(self):
        for line, tag in enumerate(self.tags):
            if tag >= 0:
                yield tag, self.lines[line]


class ResourceSubsystem:
    def __init__(self, sim: Simulator, dma: DmaEngine, rtype: str, icm_base: int, table_size: int,
                 depth: int | None = None, *, blocking: bool = False,
                 lookup_overhead: int = BLOCK_OVERHEAD["cache_read"],
                 modify_overhead: int = BLOCK_OVERHEAD["cache_write"],
                 mq_slots: int = 32, reorder_bytes: int = 8192, name: str | None = None):
        if rtype not in ENTRY_BITS:
            raise ValueError(f"unknown resource type {rtype}")
        self.sim = sim
        self.dma = dma
        self.rtype = rtype
        self.entry_bytes = ENTRY_BITS[rtype] // 8
        self.icm_base = icm_base
        self.table_size = table_size
        self.cache = ResourceCache(DEFAULT_DEPTH[rtype] if depth is None else depth)
        self.blocking = blocking
        self.name = name or rtype
        self.requester = f"rs.{self.name}"
        self._lookup_cycles = sim.beats(self.entry_bytes) + lookup_overhead
        self._modify_cycles = sim.beats(self.entry_bytes) + modify_overhead
        self.lookup = Server(f"{self.name}.lookup")
        self.modify_srv = Server(f"{self.name}.modify")
        self.respond = Server(f"{self.name}.respond")
        self.queues = MultiQueue(slots=mq_slots, width_bits=512)
        self.reorder_capacity = reorder_bytes
        self.reorder_used = 0
        self._inbox: deque[_Req] = deque()
        self._lookup_busy = False
        self._blocked_on: _Req | None = None
        self._inflight: dict[int, list[_Req]] = {}
        self._version: dict[int, int] = {}
        self.bypass: set[int] = set()  # connections whose lookups always miss
        self.hit_fifo = 0
        self.miss_fifo = 0
        self.hits = 0
        self.misses = 0
        self.coalesced = 0
        self.dma_reads = 0
        self.dma_read_bytes = 0
        self.responses = 0

    def icm_addr(self, index: int) -> int:
        return self.icm_base + index * self.entry_bytes

    def preload(self, memory, indices) -> None:
        """Warm the cache straight from host memory (setup only)."""
        for i in indices:
            self.cache.fill(i, memory.read(self.icm_addr(i), self.entry_bytes))

    # -- CacheRead --------------------------------------------------------
    def read(self, conn: int, index: int, done: Callable[[bytes | None, Exception | None], None]) -> None:
        self._inbox.append(_Req(conn, index, done, self.sim.now))
        self._pump()

    def _pump(self) -> None:
        if self._lookup_busy or self._blocked_on is not None or not self._inbox:
            return
        req = self._inbox[0]
        qkey = 0 if self.blocking else req.conn
        need = self.entry_bytes
        if self.queues.free_slots == 0 or self.reorder_used + need > self.reorder_capacity:
            return  # stalled; a response frees space
        self._inbox.popleft()
        self.queues.enqueue(qkey, req)
        self.reorder_used += need
        self._lookup_busy = True
        start = self.lookup.reserve(self.sim.now, self.sim.cycles(self._lookup_cycles))
        self.sim.schedule(start + self.sim.cycles(self._lookup_cycles), self._lookup_done, req)

    def _lookup_done(self, req: _Req) -> None:
        self._lookup_busy = False
        if req.index >= self.table_size or req.index < 0:
            req.error = ResourceError(req.conn, self.rtype, req.index, "index outside ICM table")
            self._mark_ready(req)
            self._pump()
            return
        data = None if req.conn in self.bypass else self.cache.lookup(req.index)
        if data is not None:
            self.hits += 1
            self.hit_fifo += 1
            req.hit = True
            req.data = data
            self._mark_ready(req)
        else:
            self.misses += 1
            self.miss_fifo += 1
            waiters = self._inflight.get(req.index) if self.cache.depth and req.conn not in self.bypass else None
            if waiters is not None:
                self.coalesced += 1
                waiters.append(req)
            else:
                self._issue_miss(req)
            if self.blocking:
                self._blocked_on = req
        self._pump()

    def _issue_miss(self, req: _Req) -> None:
        waiters = [req]
        if self.cache.depth and req.conn not in self.bypass:
            self._inflight[req.index] = waiters
        self.dma_reads += 1
        self.dma_read_bytes += self.entry_bytes
        version = self._version.get(req.index, 0)
        index = req.index

        def filled(data, err):
            if self._inflight.get(index) is waiters:
                del self._inflight[index]
            if err is None and self._version.get(index, 0) == version and req.conn not in self.bypass:
                self.cache.fill(index, data)
            for w in waiters:
                w.data, w.error = data, (ResourceError(w.conn, self.rtype, index, str(err)) if err else None)
                self.sim.after(self.sim.cycles(1), self._mark_ready, w)

        self.dma.read(self.icm_addr(index), self.entry_bytes, self.requester, filled)

    def _mark_ready(self, req: _Req) -> None:
        req.ready = True
        if self._blocked_on is req:
            self._blocked_on = None
        qkey = 0 if self.blocking else req.conn
        q = self.queues
        while True:
            head = q.peek(qkey)
            if head is None or not head.ready:
                break
            q.dequeue(qkey)
            self.reorder_used -= self.entry_bytes
            start = self.respond.reserve(self.sim.now, self.sim.cycles(1))
            self.sim.schedule(start + self.sim.cycles(1), self._respond, head)
        self._pump()

    def _respond(self, req: _Req) -> None:
        self.responses += 1
        req.done(req.data, req.error)

    # -- CacheModify ------------------------------------------------------
    def modify(self, index: int, payload: bytes | None,
               done: Callable[[Exception | None], None] = lambda e: None) -> None:
        """Write-through update; ``payload=None`` deletes (zeroes ICM, invalidates)."""
        if index < 0 or index >= self.table_size:
            raise ResourceError(-1, self.rtype, index, "index outside ICM table")
        if payload is not None and len(payload) != self.entry_bytes:
            raise ValueError(f"{self.rtype} payload must be {self.entry_bytes} B, got {len(payload)}")
        self._version[index] = self._version.get(index, 0) + 1
        start = self.modify_srv.reserve(self.sim.now, self.sim.cycles(self._modify_cycles))
        self.sim.schedule(start + self.sim.cycles(self._modify_cycles), self._do_modify, index, payload, done)

    def _do_modify(self, index, payload, done) -> None:
        if payload is None:
            self.cache.invalidate(index)
            data = bytes(self.entry_bytes)
        else:
            data = payload
            self.cache.fill(index, payload)
        self.dma.write(self.icm_addr(index), data, self.requester, done)

    # -- checks -----------------------------------------------------------
    def check_coherence(self, memory) -> None:
        for index, data in self.cache.entries():
            if memory.read(self.icm_addr(index), self.entry_bytes) != data:
                raise SimulationError(f"{self.rtype}[{index}] cache differs from ICM")

    @property
    def outstanding(self) -> int:
        return self.queues.slots - self.queues.free_slots + len(self._inbox)
