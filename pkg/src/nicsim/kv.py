"""In-network key-value GET pipeline: dispatcher, N hash cores, Value cache lookup."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable

from .dma import DmaEngine
from .formats import KV_KEY_BYTES, Opcode, Status, Wqe
from .host import PAGE, Driver, MemoryPool, MemoryRegions, SystemBus
from .kernel import Server, Simulator
from .primitives import Packet, append_header
from .queue import QueueSubsystem, WqeMeta
from .resource import ResourceSubsystem

HASH_CYCLES = 64
ETH_HEADER_BYTES = 14
VALUE_BYTES = 32


def kv_hash(key: bytes) -> int:
    """First 8 bytes of SHA-256(key), big-endian."""
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big")


@dataclass
class KvResponse:
    req_id: int
    qid: int
    status: int
    value: bytes
    packet: Packet
    time: int


@dataclass
class KvConfig:
    n_hash_cores: int = 1
    table_size: int = 1024
    value_depth: int = 1024
    quantum: int = 8
    clock_hz: float = 200e6
    bus_rtt: float = 350e-9


class KvNic:
    def __init__(self, sim: Simulator, cfg: KvConfig | None = None,
                 on_response: Callable[[KvResponse], None] | None = None, name: str = "kv"):
        self.sim = sim
        self.cfg = cfg = cfg or KvConfig()
        if cfg.n_hash_cores < 1:
            raise ValueError("need at least one hash core")
        self.name = name
        self.pool = MemoryPool()
        self.regions = MemoryRegions(self.pool)
        self.bus = SystemBus(sim, self.pool, rtt=cfg.bus_rtt)
        self.driver = Driver(sim, self.pool, self.regions, self.bus)
        self.driver.attach(self)
        self.dma = DmaEngine(sim, self.bus, name=f"{name}.dma")
        base = self.regions.icm_buffer.alloc(cfg.table_size * VALUE_BYTES, align=PAGE)
        self.values = ResourceSubsystem(sim, self.dma, "Value", base, cfg.table_size, cfg.value_depth)
        self.qs = QueueSubsystem(sim, self.dma, self._on_wqe, quantum=cfg.quantum)
        self.dispatcher = Server(f"{name}.dispatch")
        self.cores = [Server(f"{name}.hash{i}") for i in range(cfg.n_hash_cores)]
        self.emitter = Server(f"{name}.emit")
        self._rr = 0
        self._tags: dict[int, int] = {}  # index -> digest of the resident key
        self.collisions = 0
        self.digests = 0
        self.responses = 0
        self.on_response = on_response

    # -- host side ------------------------------------------------------------
    def create_client_queue(self, depth: int = 4096) -> int:
        qid = self.driver.create_queue("SQ", depth)
        self.qs.register(qid, self.driver.rings[qid].base, depth)
        return qid

    def post_get(self, qid: int, key: bytes, req_id: int, ring: bool = True) -> None:
        self.driver.post_wqe(qid, Wqe(Opcode.KV_GET, req_id, kv_key=key.ljust(KV_KEY_BYTES, b"\0")))
        if ring:
            self.driver.ring_doorbell(qid)

    def doorbell(self, qid: int, tail: int) -> None:
        self.qs.doorbell(qid, tail)

    def index_of(self, key: bytes) -> int:
        return kv_hash(key.ljust(KV_KEY_BYTES, b"\0")) % self.cfg.table_size

    def kv_put(self, key: bytes, value: bytes, done: Callable = lambda err: None) -> None:
        """Write-through store; a different resident key at the same index is overwritten."""
        if len(value) > VALUE_BYTES:
            raise ValueError(f"value must be <= {VALUE_BYTES} B")
        digest = kv_hash(key.ljust(KV_KEY_BYTES, b"\0"))
        index = digest % self.cfg.table_size
        old = self._tags.get(index)
        if old is not None and old != digest:
            self.collisions += 1
        self._tags[index] = digest
        self.values.modify(index, value.ljust(VALUE_BYTES, b"\0"), done)

    def warm(self) -> None:
        self.values.preload(self.pool, range(min(self.cfg.table_size, self.values.cache.depth)))

    # -- pipeline --------------------------------------------------------------
    def _on_wqe(self, metas: list[WqeMeta]) -> None:
        m = metas[0]
        if m.opcode != Opcode.KV_GET:
            return
        sim = self.sim
        d_start = self.dispatcher.reserve(sim.now, sim.cycles(1))
        core = self.cores[self._rr]
        self._rr = (self._rr + 1) % len(self.cores)
        h_start = core.reserve(d_start + sim.cycles(1), sim.cycles(HASH_CYCLES))
        sim.schedule(h_start + sim.cycles(HASH_CYCLES), self._hashed, m)

    def _hashed(self, m: WqeMeta) -> None:
        digest = kv_hash(m.kv_key)
        self.digests += 1
        index = digest % self.cfg.table_size
        self.values.read(m.qid, index, lambda data, err: self._looked_up(m, digest, index, data, err))

    def _looked_up(self, m: WqeMeta, digest: int, index: int, data, err) -> None:
        if err is not None or self._tags.get(index) != digest:
            status, value = Status.NOT_FOUND, b""
        else:
            status, value = Status.SUCCESS, bytes(data)
        pkt = Packet(bytes([status]) + value, conn_id=m.qid)
        pkt = append_header(pkt, b"\xff" * 6 + b"\x02" * 6 + b"\x88\xb5")
        busy = self.sim.cycles(self.sim.beats(pkt.length))
        start = self.emitter.reserve(self.sim.now, busy)
        resp = KvResponse(m.wqe_id, m.qid, int(status), value, pkt, start + busy)
        self.sim.schedule(start + busy, self._emit, resp)

    def _emit(self, resp: KvResponse) -> None:
        self.responses += 1
        if self.on_response is not None:
            self.on_response(resp)

    def utilization(self, elapsed: int) -> dict[str, float]:
        u = {"dispatch": self.dispatcher.utilization(elapsed),
             "hash": sum(c.utilization(elapsed) for c in self.cores) / len(self.cores),
             "value_lookup": self.values.lookup.utilization(elapsed),
             "emit": self.emitter.utilization(elapsed)}
        return u
