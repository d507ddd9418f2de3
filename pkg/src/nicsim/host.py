"""Host side: memory pool, address map, PCIe-like system bus, driver and
application flows."""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from typing import Callable

from .formats import CQE_BYTES, SEGMENT, Cqe, Wqe, unpack_cqe
from .kernel import SimulationError, Simulator
from .primitives import AccessFault

log = logging.getLogger(__name__)

PAGE = 4096
MAX_PAYLOAD = 512  # MPS / MRRS


class TranslationFault(AccessFault):
    pass


class BusFault(AccessFault):
    pass


class RingFull(RuntimeError):
    pass


class MemoryPool:
    """Sparse byte store; unwritten bytes read as zero."""

    def __init__(self, size: int = 1 << 30):
        self.size = size
        self._pages: dict[int, bytearray] = {}

    def _check(self, pa: int, n: int) -> None:
        if pa < 0 or n < 0 or pa + n > self.size:
            raise BusFault(f"access [{pa:#x}, +{n}) outside pool of {self.size:#x} B")

    def read(self, pa: int, n: int) -> bytes:
        self._check(pa, n)
        out = bytearray()
        while n:
            page, off = divmod(pa, PAGE)
            take = min(n, PAGE - off)
            buf = self._pages.get(page)
            out += buf[off:off + take] if buf is not None else bytes(take)
            pa += take
            n -= take
        return bytes(out)

    def write(self, pa: int, data: bytes) -> None:
        self._check(pa, len(data))
        mv = memoryview(data)
        while mv:
            page, off = divmod(pa, PAGE)
            take = min(len(mv), PAGE - off)
            buf = self._pages.get(page)
            if buf is None:
                buf = self._pages[page] = bytearray(PAGE)
            buf[off:off + take] = mv[:take]
            pa += take
            mv = mv[take:]


@dataclass
class Region:
    name: str
    base: int
    size: int
    cursor: int = 0

    def alloc(self, n: int, align: int = 64) -> int:
        start = -(-(self.base + self.cursor) // align) * align
        if start + n > self.base + self.size:
            raise MemoryError(f"{self.name} region exhausted ({n} B requested)")
        self.cursor = start + n - self.base
        return start

    def contains(self, pa: int, n: int = 1) -> bool:
        return self.base <= pa and pa + n <= self.base + self.size


class MemoryRegions:
    """Disjoint queue / data / ICM ranges carved from the pool."""

    def __init__(self, pool: MemoryPool, queue_bytes: int = 16 << 20,
                 data_bytes: int = 512 << 20, icm_bytes: int = 64 << 20):
        if queue_bytes + data_bytes + icm_bytes > pool.size:
            raise ValueError("regions exceed memory pool")
        self.queue_buffer = Region("queue_buffer", 0, queue_bytes)
        self.data_buffer = Region("data_buffer", queue_bytes, data_bytes)
        self.icm_buffer = Region("icm_buffer", queue_bytes + data_bytes, icm_bytes)

    def all(self) -> list[Region]:
        return [self.queue_buffer, self.data_buffer, self.icm_buffer]


class AddressMap:
    """Naive virtual-to-physical page table (4 KiB pages)."""

    def __init__(self, page_size: int = PAGE):
        self.page_size = page_size
        self.table: dict[int, int] = {}
        self._used_ppages: set[int] = set()

    def map(self, va: int, pa: int, length: int) -> None:
        ps = self.page_size
        if va % ps or pa % ps:
            raise ValueError("mappings must be page aligned")
        for i in range(-(-length // ps)):
            vp, pp = va // ps + i, pa // ps + i
            if pp in self._used_ppages and self.table.get(vp) != pp:
                raise ValueError(f"physical page {pp:#x} already mapped")
            self.table[vp] = pp
            self._used_ppages.add(pp)

    def identity(self, base: int, length: int) -> None:
        self.map(base, base, length)

    def va_to_pa(self, va: int) -> int:
        vp, off = divmod(va, self.page_size)
        pp = self.table.get(vp)
        if pp is None:
            raise TranslationFault(f"va {va:#x} not mapped")
        return pp * self.page_size + off

    def translate_range(self, va: int, length: int) -> list[tuple[int, int]]:
        out: list[tuple[int, int]] = []
        while length > 0:
            take = min(length, self.page_size - va % self.page_size)
            pa = self.va_to_pa(va)
            if out and out[-1][0] + out[-1][1] == pa:
                out[-1] = (out[-1][0], out[-1][1] + take)
            else:
                out.append((pa, take))
            va += take
            length -= take
        return out


class SystemBus:
    """Transaction layer of a PCIe-like bus.

    Reads: the request takes an op slot, reaches the host after rtt/2, its
    completion is cut into ``rcb``-byte chunks that share the host's
    downstream port round-robin across tags (so completions of different
    tags interleave), and each chunk lands rtt/2 after leaving the port.
    Writes are posted: op slot + upstream serialization, memory updated
    rtt/2 later.
    """

    def __init__(self, sim: Simulator, memory: MemoryPool, bandwidth: float = 100e9,
                 op_rate: float = 200e6, rtt: float = 350e-9, rcb: int = 128,
                 ideal: bool = False):
        self.sim = sim
        self.memory = memory
        self.bandwidth = bandwidth
        self.op_rate = op_rate
        self.rtt = int(round(rtt * 1e12))
        self.rcb = rcb
        self.ideal = ideal
        self._op_interval = 0 if ideal else int(round(1e12 / op_rate))
        self._ps_per_byte = 0.0 if ideal else 8e12 / bandwidth
        self._op_free = 0
        self._up_free = 0
        # downstream completion port
        self._port_tags: deque = deque()
        self._port_chunks: dict[int, deque] = {}
        self._port_busy = False
        self._tag_seq = 0
        self.inflight_bytes = 0
        self.max_inflight_bytes = 0
        self.reads = 0
        self.writes = 0
        self.read_bytes = 0
        self.write_bytes = 0
        self.interleavings = 0
        self._last_tag_out: int | None = None
        self._open_tags: set[int] = set()

    @property
    def bdp_bytes(self) -> float:
        return self.bandwidth * self.rtt / 1e12 / 8

    def _ser(self, n: int) -> int:
        return int(round(n * self._ps_per_byte))

    def _op_slot(self) -> int:
        start = max(self.sim.now, self._op_free)
        self._op_free = start + self._op_interval
        return start

    # -- reads ------------------------------------------------------------
    def read(self, pa: int, length: int, on_chunk: Callable[[int, bytes], None],
             on_error: Callable[[Exception], None]) -> int:
        """Issue one read transaction; returns its tag."""
        if length <= 0 or length > MAX_PAYLOAD:
            raise SimulationError(f"bus read length {length} violates MRRS {MAX_PAYLOAD}")
        tag = self._tag_seq
        self._tag_seq += 1
        self.reads += 1
        start = self._op_slot()
        half = self.rtt // 2
        self.sim.schedule(start + half, self._host_read, tag, pa, length, on_chunk, on_error)
        return tag

    def _host_read(self, tag, pa, length, on_chunk, on_error) -> None:
        try:
            data = self.memory.read(pa, length)
        except BusFault as e:
            self.sim.after(self.rtt - self.rtt // 2, on_error, e)
            return
        self.read_bytes += length
        if self.ideal:
            self.sim.after(0, on_chunk, 0, data)
            return
        chunks = deque()
        # first chunk ends on an rcb boundary, like PCIe completions
        off = 0
        first = min(length, self.rcb - pa % self.rcb)
        chunks.append((off, data[:first]))
        off = first
        while off < length:
            chunks.append((off, data[off:off + self.rcb]))
            off += self.rcb
        self._port_chunks[tag] = (chunks, on_chunk)  # type: ignore[assignment]
        self._port_tags.append(tag)
        if not self._port_busy:
            self._port_busy = True
            self._port_next()

    def _port_next(self) -> None:
        if not self._port_tags:
            self._port_busy = False
            return
        tag = self._port_tags.popleft()
        chunks, on_chunk = self._port_chunks[tag]
        off, data = chunks.popleft()
        if chunks:
            self._port_tags.append(tag)
            self._open_tags.add(tag)
        else:
            del self._port_chunks[tag]
            self._open_tags.discard(tag)
        if self._last_tag_out is not None and self._last_tag_out != tag and self._last_tag_out in self._open_tags:
            self.interleavings += 1
        self._last_tag_out = tag
        ser = self._ser(len(data))
        self.inflight_bytes += len(data)
        self.max_inflight_bytes = max(self.max_inflight_bytes, self.inflight_bytes)
        depart = self.sim.now + ser
        self.sim.schedule(depart + self.rtt - self.rtt // 2, self._land, len(data), on_chunk, off, data)
        self.sim.schedule(depart, self._port_next)

    def _land(self, n, on_chunk, off, data) -> None:
        self.inflight_bytes -= n
        on_chunk(off, data)

    # -- writes -----------------------------------------------------------
    def write(self, pa: int, data: bytes, on_accept: Callable[[Exception | None], None]) -> None:
        if not data or len(data) > MAX_PAYLOAD:
            raise SimulationError(f"bus write length {len(data)} violates MPS {MAX_PAYLOAD}")
        self.writes += 1
        start = self._op_slot()
        s = max(start, self._up_free)
        self._up_free = s + self._ser(len(data))
        accept = self._up_free
        if pa < 0 or pa + len(data) > self.memory.size:
            self.sim.schedule(accept, on_accept, BusFault(f"write to {pa:#x} outside pool"))
            return
        self.write_bytes += len(data)
        self.sim.schedule(accept + self.rtt // 2, self.memory.write, pa, bytes(data))
        self.sim.schedule(accept, on_accept, None)

    def pio(self, fn: Callable, *args) -> None:
        """Host-to-NIC register write: one-way latency rtt/2."""
        self.sim.after(self.rtt // 2, fn, *args)


class Ring:
    """Circular buffer of fixed-size slots in host memory.

    One slot is sacrificed so head == tail means empty.
    """

    def __init__(self, qid: int, kind: str, base: int, depth: int, slot_bytes: int):
        self.qid = qid
        self.kind = kind
        self.base = base
        self.depth = depth
        self.slot_bytes = slot_bytes
        self.head = 0
        self.tail = 0

    @property
    def used(self) -> int:
        return (self.tail - self.head) % self.depth

    @property
    def free(self) -> int:
        return self.depth - 1 - self.used

    def slot_pa(self, index: int) -> int:
        return self.base + (index % self.depth) * self.slot_bytes


class Driver:
    """Creates queues and contexts, posts WQEs, rings doorbells, polls CQs."""

    def __init__(self, sim: Simulator, pool: MemoryPool, regions: MemoryRegions,
                 bus: SystemBus, amap: AddressMap | None = None):
        self.sim = sim
        self.pool = pool
        self.regions = regions
        self.bus = bus
        self.amap = amap or AddressMap()
        self.rings: dict[int, Ring] = {}
        self.nic = None
        self._next_qid = 0
        self._posted: dict[int, deque] = {}
        self.doorbells = 0

    def attach(self, nic) -> None:
        self.nic = nic

    def create_queue(self, kind: str, depth: int, slot_bytes: int | None = None) -> int:
        if kind not in ("SQ", "RQ", "CQ"):
            raise ValueError(f"unknown queue kind {kind!r}")
        if depth < 2:
            raise ValueError("queue depth must be >= 2")
        if slot_bytes is None:
            slot_bytes = CQE_BYTES if kind == "CQ" else SEGMENT
        base = self.regions.queue_buffer.alloc(depth * slot_bytes, align=PAGE)
        qid = self._next_qid
        self._next_qid += 1
        self.rings[qid] = Ring(qid, kind, base, depth, slot_bytes)
        self._posted[qid] = deque()
        return qid

    def post_wqe(self, qid: int, wqe: Wqe) -> None:
        """Serialize ``wqe`` at the SQ tail (16 B segments, may wrap)."""
        ring = self.rings[qid]
        raw = wqe.pack()
        nslots = len(raw) // ring.slot_bytes
        if nslots > ring.free:
            raise RingFull(f"SQ {qid} has {ring.free} free segments, need {nslots}")
        for i in range(nslots):
            self.pool.write(ring.slot_pa(ring.tail + i), raw[i * ring.slot_bytes:(i + 1) * ring.slot_bytes])
        ring.tail = (ring.tail + nslots) % ring.depth
        self._posted[qid].append((wqe.wqe_id, nslots))

    def ring_doorbell(self, qid: int) -> None:
        """PIO write of the producer index to the NIC doorbell register."""
        ring = self.rings[qid]
        self.doorbells += 1
        self.bus.pio(self.nic.doorbell, qid, ring.tail)

    def poll_cq(self, cqid: int) -> Cqe | None:
        ring = self.rings[cqid]
        pa = ring.slot_pa(ring.head)
        cqe = unpack_cqe(self.pool.read(pa, CQE_BYTES))
        if cqe is None:
            return None
        self.pool.write(pa, bytes(CQE_BYTES))
        ring.head = (ring.head + 1) % ring.depth
        return cqe

    def retire(self, sq: int, wqe_id: int) -> None:
        """Free the SQ segments of the oldest WQE once its CQE is consumed."""
        posted = self._posted[sq]
        if not posted:
            raise SimulationError(f"completion for SQ {sq} with nothing posted")
        wid, nslots = posted.popleft()
        if wid != wqe_id:
            raise SimulationError(f"SQ {sq}: completion for wqe {wqe_id}, expected {wid}")
        ring = self.rings[sq]
        ring.head = (ring.head + nslots) % ring.depth

    def alloc_data(self, length: int, align: int = PAGE) -> int:
        return self.regions.data_buffer.alloc(length, align=align)
