"""NIC-side DMA engine.

Hides the bus transaction layer behind ``read``/``write``: requests are split
at MRRS/MPS, read completions are reassembled in a reorder buffer and handed
to each requester as an in-order byte stream.
"""
from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Callable

from .host import MAX_PAYLOAD, SystemBus
from .kernel import Server, SimulationError, Simulator
from .primitives import BLOCK_OVERHEAD


@dataclass
class _ReadReq:
    requester: str
    pa: int
    length: int
    done: Callable
    parts: list = field(default_factory=list)
    next_deliver: int = 0
    delivered: int = 0
    error: Exception | None = None
    ntrans: int = 0


@dataclass
class _ReadTrans:
    req: _ReadReq
    index: int
    pa: int
    length: int
    buf: bytearray
    got: int = 0
    done: bool = False


class CplReorderBuffer:
    """Byte-granular reservation accounting for outstanding read completions."""

    def __init__(self, capacity: int = 512 * 64):
        self.capacity = capacity
        self.used = 0
        self.max_used = 0

    def try_reserve(self, n: int) -> bool:
        if self.used + n > self.capacity:
            return False
        self.used += n
        self.max_used = max(self.max_used, self.used)
        return True

    def release(self, n: int) -> None:
        self.used -= n
        if self.used < 0:
            raise SimulationError("reorder buffer released more than reserved")


class DmaEngine:
    def __init__(self, sim: Simulator, bus: SystemBus, *, max_tags: int = 32,
                 reorder_bytes: int = 512 * 64, mrrs: int = MAX_PAYLOAD, mps: int = MAX_PAYLOAD,
                 read_overhead: int = BLOCK_OVERHEAD["dma_read"],
                 write_overhead: int = BLOCK_OVERHEAD["dma_write"],
                 latency_cycles: int = 8, name: str = "dma"):
        if mrrs > MAX_PAYLOAD or mps > MAX_PAYLOAD:
            raise ValueError("MRRS/MPS cannot exceed the bus limit")
        self.sim = sim
        self.bus = bus
        self.name = name
        self.max_tags = max_tags
        self.mrrs = mrrs
        self.mps = mps
        self.read_overhead = read_overhead
        self.write_overhead = write_overhead
        self.latency = sim.cycles(latency_cycles)
        self.reorder = CplReorderBuffer(reorder_bytes)
        self.tags_in_use = 0
        self._rd_issue = Server(f"{name}.rd_issue")
        self._wr_issue = Server(f"{name}.wr_issue")
        self._wr_data = Server(f"{name}.wr_data")
        self._ports: dict[str, Server] = {}
        self._rd_pending: dict[str, deque] = {}
        self._rd_rr: deque[str] = deque()
        self._wr_pending: dict[str, deque] = {}
        self._wr_rr: deque[str] = deque()
        self._rd_kick = False
        self._wr_kick = False
        self.read_reqs: dict[str, int] = defaultdict(int)
        self.read_bytes: dict[str, int] = defaultdict(int)
        self.write_reqs: dict[str, int] = defaultdict(int)
        self.write_bytes: dict[str, int] = defaultdict(int)
        self.read_transactions = 0
        self.write_transactions = 0
        self.max_wait_transactions = 0

    def _port(self, requester: str) -> Server:
        p = self._ports.get(requester)
        if p is None:
            p = self._ports[requester] = Server(f"{self.name}.port.{requester}")
        return p

    # -- reads ------------------------------------------------------------
    def read(self, pa: int, length: int, requester: str,
             done: Callable[[bytes | None, Exception | None], None]) -> None:
        if length <= 0:
            raise ValueError("DMA read length must be > 0")
        req = _ReadReq(requester, pa, length, done)
        self.read_reqs[requester] += 1
        self.read_bytes[requester] += length
        off = 0
        q = self._rd_pending.get(requester)
        if q is None:
            q = self._rd_pending[requester] = deque()
        if not q:
            self._rd_rr.append(requester)
        i = 0
        while off < length:
            n = min(self.mrrs, length - off)
            q.append(_ReadTrans(req, i, pa + off, n, bytearray(n)))
            req.parts.append(None)
            off += n
            i += 1
        req.ntrans = i
        self._kick_reads()

    def _kick_reads(self) -> None:
        if self._rd_kick:
            return
        self._rd_kick = True
        at = max(self.sim.now, self._rd_issue.free_at)
        self.sim.schedule(at, self._dispatch_read)

    def _dispatch_read(self) -> None:
        self._rd_kick = False
        if not self._rd_rr:
            return
        if self.sim.now < self._rd_issue.free_at:
            self._kick_reads()
            return
        requester = self._rd_rr[0]
        q = self._rd_pending[requester]
        t = q[0]
        if self.tags_in_use >= self.max_tags or not self.reorder.try_reserve(t.length):
            return  # resumes on release
        q.popleft()
        self._rd_rr.rotate(-1)
        if not q:
            self._rd_rr.remove(requester)
        self.tags_in_use += 1
        self.read_transactions += 1
        self._rd_issue.reserve(self.sim.now, self.sim.cycles(self.read_overhead))
        self.sim.after(self.sim.cycles(self.read_overhead), self._issue_read, t)
        if self._rd_rr:
            self._kick_reads()

    def _issue_read(self, t: _ReadTrans) -> None:
        def on_chunk(off: int, data: bytes) -> None:
            t.buf[off:off + len(data)] = data
            t.got += len(data)
            if t.got == t.length:
                self._trans_complete(t)

        def on_error(err: Exception) -> None:
            t.req.error = err
            t.got = t.length
            self._trans_complete(t)

        self.bus.read(t.pa, t.length, on_chunk, on_error)

    def _trans_complete(self, t: _ReadTrans) -> None:
        t.done = True
        self.tags_in_use -= 1
        req = t.req
        req.parts[t.index] = t
        # deliver the contiguous prefix to the requester port
        while req.next_deliver < req.ntrans and req.parts[req.next_deliver] is not None:
            tr = req.parts[req.next_deliver]
            req.next_deliver += 1
            port = self._port(req.requester)
            start = port.reserve(self.sim.now + self.latency, self.sim.cycles(self.sim.beats(tr.length)))
            end = start + self.sim.cycles(self.sim.beats(tr.length))
            self.sim.schedule(end, self._delivered, tr)
        self._kick_reads()

    def _delivered(self, t: _ReadTrans) -> None:
        self.reorder.release(t.length)
        req = t.req
        req.delivered += 1
        if req.delivered == req.ntrans:
            if req.error is not None:
                req.done(None, req.error)
            else:
                req.done(b"".join(bytes(p.buf) for p in req.parts), None)
        self._kick_reads()

    # -- writes -----------------------------------------------------------
    def write(self, pa: int, data: bytes, requester: str,
              done: Callable[[Exception | None], None]) -> None:
        if not data:
            raise ValueError("DMA write needs data")
        self.write_reqs[requester] += 1
        self.write_bytes[requester] += len(data)
        q = self._wr_pending.get(requester)
        if q is None:
            q = self._wr_pending[requester] = deque()
        if not q:
            self._wr_rr.append(requester)
        n = -(-len(data) // self.mps)
        state = {"left": n, "err": None, "done": done}
        for i in range(n):
            q.append((pa + i * self.mps, data[i * self.mps:(i + 1) * self.mps], state))
        self._kick_writes()

    def _kick_writes(self) -> None:
        if self._wr_kick:
            return
        self._wr_kick = True
        self.sim.schedule(max(self.sim.now, self._wr_issue.free_at), self._dispatch_write)

    def _dispatch_write(self) -> None:
        self._wr_kick = False
        if not self._wr_rr:
            return
        requester = self._wr_rr[0]
        q = self._wr_pending[requester]
        pa, chunk, state = q.popleft()
        self._wr_rr.rotate(-1)
        if not q:
            self._wr_rr.remove(requester)
        self.write_transactions += 1
        sim = self.sim
        issue_start = self._wr_issue.reserve(sim.now, sim.cycles(self.write_overhead))
        data_start = self._wr_data.reserve(issue_start, sim.cycles(sim.beats(len(chunk))))
        ready = max(issue_start + sim.cycles(self.write_overhead),
                    data_start + sim.cycles(sim.beats(len(chunk))))
        sim.schedule(ready, self._issue_write, pa, chunk, state)
        if self._wr_rr:
            self._kick_writes()

    def _issue_write(self, pa: int, chunk: bytes, state: dict) -> None:
        def accepted(err):
            if err is not None and state["err"] is None:
                state["err"] = err
            state["left"] -= 1
            if state["left"] == 0:
                self.sim.after(self.latency, state["done"], state["err"])
        self.bus.write(pa, chunk, accepted)

    # -- stats ------------------------------------------------------------
    def read_op_rate(self) -> float:
        """Ceiling on read transactions per second (issue-bound)."""
        return self.sim.clock_hz / self.read_overhead
