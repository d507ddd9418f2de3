"""RDMA NIC: host + DMA + resource/queue/transport subsystems around an RDMA
semantics core with requester and responder halves.

Every message follows the same stage pattern: read contexts, generate a
header, gather or scatter payload, append the header.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from .dma import DmaEngine
from .formats import (ACCESS_ALL, ACCESS_LOCAL_READ, ACCESS_REMOTE_READ, ACCESS_REMOTE_WRITE,
                      CQE_BYTES, HDR_FIRST, HDR_LAST, MTT_BITS, QP_ERROR, RDMA_HEADER_BYTES,
                      CqContext, Cqe, Mpt, Opcode, QpContext, RdmaHeader, Status, Wqe,
                      pack_mtt, unpack_mtt)
from .host import PAGE, AddressMap, Driver, MemoryPool, MemoryRegions, SystemBus
from .kernel import Server, Simulator
from .primitives import Packet, append_header, remove_header
from .queue import QueueSubsystem, WqeMeta
from .resource import ENTRY_BITS, ResourceSubsystem
from .transport import Transport

log = logging.getLogger(__name__)

MTT_SEG = 64  # translation entries (pages) reserved per memory region
VA_BASE = 0x7F00_0000_0000
HDR_ERROR = 0x4
CONTEXT_TYPES = ("QPC", "CQC", "MPT", "MTT")


@dataclass
class NicConfig:
    clock_hz: float = 200e6
    bus_bandwidth: float = 100e9
    bus_op_rate: float = 200e6
    bus_rtt: float = 350e-9
    ideal_bus: bool = False
    dma_tags: int = 32
    reorder_bytes: int = 32768
    dma_latency_cycles: int = 8
    mtu: int = 4096
    cache_mode: str = "default"  # default | all_hit | all_miss
    blocking: bool = False
    cache_depth: dict = field(default_factory=dict)
    resource_reorder_bytes: int = 8192
    quantum: int = 1
    cells: int = 32
    max_qps: int = 256
    max_mrs: int = 256
    memory_bytes: int = 1 << 30


@dataclass
class MemoryRegion:
    index: int
    va: int
    pa: int
    length: int
    access: int

    @property
    def lkey(self) -> int:
        return self.index << 8

    @property
    def rkey(self) -> int:
        return (self.index << 8) | 1

    def pa_of(self, va: int) -> int:
        return self.pa + (va - self.va)


@dataclass
class QueuePair:
    qpn: int
    peer_qpn: int
    sq: int
    cq: int
    cq_base: int
    cq_depth: int
    state: int = 1
    cq_pi: int = 0
    next_msg_id: int = 0
    inflight: deque = field(default_factory=deque)  # messages in WQE order
    egress: deque = field(default_factory=deque)
    reads: dict = field(default_factory=dict)
    cqes: int = 0


@dataclass
class _Msg:
    qp: QueuePair
    metas: list[WqeMeta]
    msg_id: int
    status: int = Status.SUCCESS
    ctx_left: int = 0
    payload: bytes | None = None
    local: list = field(default_factory=list)  # (pa, len) pieces of the local sgl
    qpc_ok: bool = False
    gathered: bool = False
    injected: bool = False
    npkts: int = 0
    acked: int = 0
    placed: int = 0
    done: bool = False
    cqc: CqContext | None = None

    @property
    def opcode(self) -> Opcode:
        return self.metas[0].opcode

    @property
    def total(self) -> int:
        return self.metas[0].total_len


class _Join:
    def __init__(self, n: int, cb: Callable[[], None]):
        self.n, self.cb = n, cb
        if n == 0:
            cb()

    def __call__(self) -> None:
        self.n -= 1
        if self.n == 0:
            self.cb()


def mtt_index(mr_index: int, va: int) -> int:
    return mr_index * MTT_SEG + (va // PAGE) % MTT_SEG


def split_pages(va: int, length: int) -> list[tuple[int, int]]:
    out = []
    while length > 0:
        take = min(length, PAGE - va % PAGE)
        out.append((va, take))
        va += take
        length -= take
    return out


class RdmaNic:
    """One host plus its RDMA NIC."""

    def __init__(self, sim: Simulator, cfg: NicConfig | None = None, transport: Transport | None = None,
                 name: str = "nic"):
        self.sim = sim
        self.cfg = cfg = cfg or NicConfig()
        self.name = name
        self.pool = MemoryPool(cfg.memory_bytes)
        self.regions = MemoryRegions(self.pool)
        self.bus = SystemBus(sim, self.pool, cfg.bus_bandwidth, cfg.bus_op_rate, cfg.bus_rtt,
                             ideal=cfg.ideal_bus)
        self.amap = AddressMap()
        self.driver = Driver(sim, self.pool, self.regions, self.bus, self.amap)
        self.driver.attach(self)
        self.dma = DmaEngine(sim, self.bus, max_tags=cfg.dma_tags, reorder_bytes=cfg.reorder_bytes,
                             latency_cycles=cfg.dma_latency_cycles, name=f"{name}.dma")
        sizes = {"QPC": cfg.max_qps, "CQC": cfg.max_qps, "MPT": cfg.max_mrs, "MTT": cfg.max_mrs * MTT_SEG}
        self.res: dict[str, ResourceSubsystem] = {}
        for rtype, n in sizes.items():
            depth = cfg.cache_depth.get(rtype)
            if cfg.cache_mode == "all_miss":
                depth = 0
            elif cfg.cache_mode == "all_hit":
                depth = n
            base = self.regions.icm_buffer.alloc(n * ENTRY_BITS[rtype] // 8, align=PAGE)
            self.res[rtype] = ResourceSubsystem(sim, self.dma, rtype, base, n, depth,
                                                blocking=cfg.blocking,
                                                reorder_bytes=cfg.resource_reorder_bytes)
        self.qs = QueueSubsystem(sim, self.dma, self._on_wqe, quantum=cfg.quantum, cells=cfg.cells,
                                 on_error=self._on_bad_wqe)
        self.transport = transport
        self.req_trans = Server(f"{name}.req_trans")
        self.req_recv = Server(f"{name}.req_recv")
        self.resp_trans = Server(f"{name}.resp_trans")
        self.resp_recv = Server(f"{name}.resp_recv")
        self.qps: dict[int, QueuePair] = {}
        self._sq_qp: dict[int, QueuePair] = {}
        self.mrs: list[MemoryRegion] = []
        self.on_cqe: Callable[[QueuePair, Cqe, int], None] | None = None
        self.on_send: Callable[[int, bytes], None] | None = None
        self.doorbell_times: dict[int, deque] = {}
        self.stats = {"messages": 0, "packets_out": 0, "payload_bytes_out": 0, "bytes_placed": 0,
                      "context_reads": 0, "payload_reads": 0, "cqes": 0, "errors": 0}

    # -- setup (driver side) ------------------------------------------------
    def _icm_write(self, rtype: str, index: int, data: bytes) -> None:
        r = self.res[rtype]
        if not 0 <= index < r.table_size:
            raise ValueError(f"{rtype} index {index} outside table")
        self.pool.write(r.icm_addr(index), data.ljust(r.entry_bytes, b"\0"))

    def create_qp(self, qpn: int, peer_qpn: int, sq_depth: int = 1024, cq_depth: int = 1024) -> QueuePair:
        if qpn in self.qps or not 0 <= qpn < self.cfg.max_qps:
            raise ValueError(f"qpn {qpn} invalid or in use")
        sq = self.driver.create_queue("SQ", sq_depth)
        cq = self.driver.create_queue("CQ", cq_depth)
        ring = self.driver.rings[cq]
        qp = QueuePair(qpn, peer_qpn, sq, cq, ring.base, cq_depth)
        self._icm_write("QPC", qpn, QpContext(qpn, peer_qpn, sq_id=sq, cq_id=cq).pack())
        self._icm_write("CQC", qpn, CqContext(ring.base, cq_depth).pack())
        self.qs.register(sq, self.driver.rings[sq].base, sq_depth)
        self.qps[qpn] = qp
        self._sq_qp[sq] = qp
        self.doorbell_times[sq] = deque()
        if self.transport is not None:
            self.transport.open(qpn, peer_qpn, on_commit=self._on_commit, on_acked=self._on_acked,
                                on_space=self._on_space, on_remote_error=self._on_remote_error,
                                on_error=self._on_transport_error)
        return qp

    def reg_mr(self, length: int, access: int = ACCESS_ALL) -> MemoryRegion:
        if length <= 0 or length > MTT_SEG * PAGE:
            raise ValueError(f"region length must be in (0, {MTT_SEG * PAGE}]")
        idx = len(self.mrs)
        if idx >= self.cfg.max_mrs:
            raise ValueError("out of memory-region slots")
        va = VA_BASE + idx * MTT_SEG * PAGE
        pa = self.driver.alloc_data(length, align=PAGE)
        self.amap.map(va, pa, length)
        mr = MemoryRegion(idx, va, pa, length, access)
        self._icm_write("MPT", idx, Mpt(mr.lkey, mr.rkey, access, 0, va, length, idx * MTT_SEG).pack())
        for i in range(-(-length // PAGE)):
            self._icm_write("MTT", idx * MTT_SEG + i, pack_mtt(self.amap.va_to_pa(va + i * PAGE)))
        self.mrs.append(mr)
        return mr

    def warm_caches(self) -> None:
        """Preload every programmed context (all-hit setup)."""
        self.res["QPC"].preload(self.pool, self.qps)
        self.res["CQC"].preload(self.pool, self.qps)
        self.res["MPT"].preload(self.pool, range(len(self.mrs)))
        mtt = [m.index * MTT_SEG + i for m in self.mrs for i in range(-(-m.length // PAGE))]
        self.res["MTT"].preload(self.pool, mtt)

    def post(self, qp: QueuePair, wqe: Wqe, ring: bool = True) -> None:
        self.driver.post_wqe(qp.sq, wqe)
        if ring:
            self.ring(qp)

    def ring(self, qp: QueuePair) -> None:
        self.driver.ring_doorbell(qp.sq)

    def doorbell(self, qid: int, tail: int) -> None:
        self.doorbell_times.setdefault(qid, deque()).append(self.sim.now)
        self.qs.doorbell(qid, tail)

    # -- requester: ReqTrans ---------------------------------------------
    def _on_bad_wqe(self, qid: int, wqe_id: int, status: Status) -> None:
        qp = self._sq_qp[qid]
        meta = WqeMeta(qid, wqe_id, Opcode.SEND, 0, 1)
        msg = _Msg(qp, [meta], -1, status=status, done=True)
        qp.inflight.append(msg)
        self._complete(qp)

    def _on_wqe(self, metas: list[WqeMeta]) -> None:
        qp = self._sq_qp[metas[0].qid]
        msg = _Msg(qp, metas, qp.next_msg_id)
        qp.next_msg_id += 1
        qp.inflight.append(msg)
        self.stats["messages"] += 1
        if qp.state == QP_ERROR:
            msg.status = Status.FLUSHED
            msg.done = True
            self._complete(qp)
            return
        pages = [[(va, n, mtt_index(m.lkey >> 8, va)) for va, n in split_pages(m.va, m.length)]
                 for m in metas]
        # all context reads go out in parallel; payload waits on MPT+MTT only
        after_mem = _Join(len(metas) + sum(len(p) for p in pages), lambda: self._translated(msg, pages))
        self._ctx_read("QPC", qp.qpn, qp.qpn, lambda d: self._qpc_ready(msg, d))
        self._ctx_read("CQC", qp.qpn, qp.qpn, lambda d: setattr(msg, "cqc", CqContext.unpack(d)))
        mpts: list = [None] * len(metas)
        mtts: dict = {}
        msg.ctx = (mpts, mtts)  # type: ignore[attr-defined]
        for i, m in enumerate(metas):
            def got_mpt(d, i=i):
                mpts[i] = Mpt.unpack(d)
                after_mem()
            self._ctx_read("MPT", qp.qpn, m.lkey >> 8, got_mpt, msg)
            for _, _, idx in pages[i]:
                def got_mtt(d, idx=idx):
                    mtts[idx] = unpack_mtt(d)
                    after_mem()
                self._ctx_read("MTT", qp.qpn, idx, got_mtt, msg)

    def _ctx_read(self, rtype: str, conn: int, index: int, cb: Callable[[bytes], None],
                  msg: _Msg | None = None) -> None:
        self.stats["context_reads"] += 1

        def done(data, err):
            if err is not None:
                log.debug("%s: context read failed: %s", self.name, err)
                if msg is not None and msg.status == Status.SUCCESS:
                    msg.status = Status.LOCAL_PROTECTION
                data = bytes(self.res[rtype].entry_bytes)
            cb(data)

        self.res[rtype].read(conn, index, done)

    def _qpc_ready(self, msg: _Msg, data: bytes) -> None:
        qpc = QpContext.unpack(data)
        if qpc.qpn != msg.qp.qpn and msg.status == Status.SUCCESS:
            msg.status = Status.LOCAL_PROTECTION
        msg.qpc_ok = True
        self._try_inject(msg.qp)

    def _translated(self, msg: _Msg, pages) -> None:
        mpts, mtts = msg.ctx  # type: ignore[attr-defined]
        need = ACCESS_LOCAL_READ
        for m, mpt in zip(msg.metas, mpts):
            if msg.status != Status.SUCCESS:
                break
            if mpt.lkey != m.lkey or not mpt.access & need or not mpt.covers(m.va, m.length):
                msg.status = Status.LOCAL_PROTECTION
        for plist in pages:
            for va, n, idx in plist:
                pa = mtts.get(idx, 0)
                if msg.status == Status.SUCCESS and pa == 0:
                    msg.status = Status.TRANSLATION_FAULT
                msg.local.append((pa + va % PAGE, n))
        if msg.status != Status.SUCCESS:
            self._latch_error(msg)
            return
        if msg.opcode == Opcode.RDMA_READ:
            msg.gathered = True
            self._try_inject(msg.qp)
            return
        parts: list = [None] * len(msg.local)
        join = _Join(len(msg.local), lambda: self._gathered(msg, parts))
        for i, (pa, n) in enumerate(msg.local):
            def got(data, err, i=i):
                if err is not None and msg.status == Status.SUCCESS:
                    msg.status = Status.BUS_FAULT
                parts[i] = data or b""
                join()
            self.stats["payload_reads"] += 1
            self.dma.read(pa, n, f"{self.name}.payload", got)

    def _gathered(self, msg: _Msg, parts) -> None:
        if msg.status != Status.SUCCESS:
            self._latch_error(msg)
            return
        msg.payload = b"".join(parts)
        msg.gathered = True
        self._try_inject(msg.qp)

    def _latch_error(self, msg: _Msg) -> None:
        msg.qp.state = QP_ERROR
        msg.done = True
        self.stats["errors"] += 1
        # every later WQE on the QP completes flushed, even if already on the wire
        for other in msg.qp.inflight:
            if not other.done:
                other.status = Status.FLUSHED
                other.done = True
                msg.qp.reads.pop(other.msg_id, None)
        msg.qp.egress = deque((t, p) for t, p in msg.qp.egress
                              if not (p.meta.get("msg") is not None and p.meta["msg"].done))
        self._try_inject(msg.qp)
        self._complete(msg.qp)

    def _try_inject(self, qp: QueuePair) -> None:
        """Segment messages into packets strictly in WQE order."""
        for msg in qp.inflight:
            if msg.injected or msg.done:
                continue
            if not (msg.qpc_ok and msg.gathered):
                break
            self._segment(msg)
        self._on_space(qp.qpn)

    def _segment(self, msg: _Msg) -> None:
        msg.injected = True
        qp = msg.qp
        mtu = self.cfg.mtu
        m0 = msg.metas[0]
        if msg.opcode == Opcode.RDMA_READ:
            chunks = [b""]
        else:
            data = msg.payload or b""
            chunks = [data[i:i + mtu] for i in range(0, len(data), mtu)] or [b""]
        msg.npkts = len(chunks)
        t = self.sim.now
        off = 0
        for i, chunk in enumerate(chunks):
            flags = (HDR_FIRST if i == 0 else 0) | (HDR_LAST if i == len(chunks) - 1 else 0)
            hdr = RdmaHeader(int(msg.opcode), qp.peer_qpn, 0, m0.remote_va + off, m0.rkey,
                             msg.total if msg.opcode == Opcode.RDMA_READ else len(chunk),
                             msg.msg_id, flags)
            pkt = append_header(Packet(chunk, conn_id=qp.qpn, meta={"msg": msg, "last": i == len(chunks) - 1}),
                                hdr.pack())
            busy = self.sim.cycles(self.sim.beats(pkt.length))
            t = self.req_trans.reserve(t, busy) + busy
            qp.egress.append((t, pkt))
            off += len(chunk)
        if msg.opcode == Opcode.RDMA_READ:
            qp.reads[msg.msg_id] = msg

    def _on_space(self, conn: int) -> None:
        qp = self.qps.get(conn)
        if qp is None or self.transport is None:
            return
        while qp.egress:
            t, pkt = qp.egress[0]
            if t > self.sim.now:
                if not getattr(qp, "_wake", False):
                    qp._wake = True  # type: ignore[attr-defined]
                    self.sim.schedule(t, self._wake_egress, qp)
                return
            if not self.transport.tx_inject(qp.qpn, pkt, pkt.length):
                return
            qp.egress.popleft()
            self.stats["packets_out"] += 1
            self.stats["payload_bytes_out"] += len(pkt.payload)

    def _wake_egress(self, qp: QueuePair) -> None:
        qp._wake = False  # type: ignore[attr-defined]
        self._on_space(qp.qpn)

    # -- requester completion ------------------------------------------------
    def _on_acked(self, conn: int, pkt: Packet) -> None:
        msg: _Msg | None = pkt.meta.get("msg")
        if msg is None:
            return  # read response acked at the responder side
        msg.acked += 1
        if msg.acked == msg.npkts and msg.opcode != Opcode.RDMA_READ:
            msg.done = True
            self._complete(msg.qp)

    def _on_remote_error(self, conn: int, pkt: Packet, status: int) -> None:
        msg: _Msg | None = pkt.meta.get("msg")
        if msg is None or msg.done:
            return
        msg.status = status
        msg.qp.reads.pop(msg.msg_id, None)
        self._latch_error(msg)

    def _on_transport_error(self, conn: int) -> None:
        qp = self.qps[conn]
        qp.state = QP_ERROR
        for msg in qp.inflight:
            if not msg.done:
                msg.status = Status.TRANSPORT_RETRY_EXCEEDED
                msg.done = True
        qp.egress.clear()
        self._complete(qp)

    def _complete(self, qp: QueuePair) -> None:
        """Write CQEs for finished messages at the head of the QP, in order."""
        while qp.inflight and qp.inflight[0].done:
            msg = qp.inflight.popleft()
            m0 = msg.metas[0]
            cqc = msg.cqc or CqContext(qp.cq_base, qp.cq_depth)
            cqe = Cqe(m0.wqe_id, int(msg.status), qp.sq,
                      msg.total if msg.status == Status.SUCCESS else 0)
            pa = cqc.base_pa + (qp.cq_pi % cqc.depth) * CQE_BYTES
            qp.cq_pi += 1
            qp.cqes += 1
            self.stats["cqes"] += 1
            self.dma.write(pa, cqe.pack(), f"{self.name}.cqe",
                           lambda err, qp=qp, cqe=cqe: self._cqe_written(qp, cqe))
        self._try_inject(qp)

    def _cqe_written(self, qp: QueuePair, cqe: Cqe) -> None:
        if self.on_cqe is not None:
            self.on_cqe(qp, cqe, self.sim.now)

    # -- responder: ReqRecv / RespTrans, requester: RespRecv --------------
    def _check_remote(self, hdr: RdmaHeader, need: int) -> int:
        """Functional rkey/bounds check at commit (timing is charged on the data path)."""
        idx = hdr.rkey >> 8
        if idx >= len(self.mrs):
            return Status.REMOTE_ACCESS
        mpt = Mpt.unpack(self.pool.read(self.res["MPT"].icm_addr(idx), 32))
        n = hdr.length if hdr.length else 1
        if mpt.rkey != hdr.rkey or not mpt.access & need or not mpt.covers(hdr.remote_va, n):
            return Status.REMOTE_ACCESS
        return 0

    def _on_commit(self, conn: int, pkt: Packet) -> int:
        raw, body = remove_header(pkt, RDMA_HEADER_BYTES)
        hdr = RdmaHeader.unpack(raw)
        op = hdr.opcode
        if op == Opcode.READ_RESPONSE:
            self._resp_recv(conn, hdr, body.payload)
            return 0
        qp = self.qps.get(conn)
        if qp is None or qp.state == QP_ERROR:
            return Status.REMOTE_ACCESS
        if op == Opcode.SEND:
            if self.on_send is not None:
                self.on_send(conn, body.payload)
            return 0
        need = ACCESS_REMOTE_WRITE if op == Opcode.RDMA_WRITE else ACCESS_REMOTE_READ
        status = self._check_remote(hdr, need)
        if status:
            qp.state = QP_ERROR  # later packets on this QP are rejected too
            return status
        # timing: responder context reads (QPC, MPT, one MTT per page) before the data moves
        pages = split_pages(hdr.remote_va, hdr.length) if hdr.length else []
        mr_index = hdr.rkey >> 8
        join = _Join(2 + len(pages), lambda: self._responder_go(qp, hdr, body.payload, pages))
        self._ctx_read("QPC", conn, conn, lambda d: join())
        self._ctx_read("MPT", conn, mr_index, lambda d: join())
        for va, _ in pages:
            self._ctx_read("MTT", conn, mtt_index(mr_index, va), lambda d: join())
        return 0

    def _responder_go(self, qp: QueuePair, hdr: RdmaHeader, payload: bytes, pages) -> None:
        mr = self.mrs[hdr.rkey >> 8]
        busy = self.sim.cycles(self.sim.beats(len(payload) + RDMA_HEADER_BYTES))
        start = self.req_recv.reserve(self.sim.now, busy)
        if hdr.opcode == Opcode.RDMA_WRITE:
            off = 0
            for va, n in pages:
                chunk = payload[off:off + n]
                off += n
                self.sim.schedule(start + busy, self.dma.write, mr.pa_of(va), chunk,
                                  f"{self.name}.scatter", lambda err: None)
            self.stats["bytes_placed"] += len(payload)
        elif hdr.opcode == Opcode.RDMA_READ:
            self.sim.schedule(start + busy, self._serve_read, qp, hdr, mr)

    def _serve_read(self, qp: QueuePair, hdr: RdmaHeader, mr: MemoryRegion) -> None:
        mtu = self.cfg.mtu
        total = hdr.length
        chunks = [(off, min(mtu, total - off)) for off in range(0, total, mtu)]
        resp: list = [None] * len(chunks)
        state = {"next": 0}

        def emit_ready():
            while state["next"] < len(chunks) and resp[state["next"]] is not None:
                i = state["next"]
                state["next"] += 1
                off, _ = chunks[i]
                flags = (HDR_FIRST if i == 0 else 0) | (HDR_LAST if i == len(chunks) - 1 else 0)
                h = RdmaHeader(Opcode.READ_RESPONSE, qp.peer_qpn, 0, off, 0, len(resp[i]), hdr.msg_id, flags)
                pkt = append_header(Packet(resp[i], conn_id=qp.qpn), h.pack())
                busy = self.sim.cycles(self.sim.beats(pkt.length))
                t = self.resp_trans.reserve(self.sim.now, busy) + busy
                qp.egress.append((t, pkt))
            self._on_space(qp.qpn)

        for i, (off, n) in enumerate(chunks):
            pieces = split_pages(hdr.remote_va + off, n)
            parts: list = [None] * len(pieces)

            def done_piece(i=i, parts=parts):
                resp[i] = b"".join(parts)
                emit_ready()
            join = _Join(len(pieces), done_piece)
            for j, (va, m) in enumerate(pieces):
                def got(data, err, j=j, parts=parts, join=join):
                    parts[j] = data if data is not None else bytes(m)
                    join()
                self.dma.read(mr.pa_of(va), m, f"{self.name}.resp_gather", got)

    def _resp_recv(self, conn: int, hdr: RdmaHeader, data: bytes) -> None:
        qp = self.qps[conn]
        msg = qp.reads.get(hdr.msg_id)
        if msg is None:
            return
        busy = self.sim.cycles(self.sim.beats(len(data) + RDMA_HEADER_BYTES))
        start = self.resp_recv.reserve(self.sim.now, busy)
        writes = []
        off = hdr.remote_va
        base = 0
        for pa, n in msg.local:
            lo, hi = max(off, base), min(off + len(data), base + n)
            if lo < hi:
                writes.append((pa + lo - base, data[lo - off:hi - off]))
            base += n
        join = _Join(len(writes), lambda: self._placed(msg, len(data)))
        for pa, chunk in writes:
            self.sim.schedule(start + busy, self.dma.write, pa, chunk, f"{self.name}.scatter",
                              lambda err: join())

    def _placed(self, msg: _Msg, n: int) -> None:
        msg.placed += n
        self.stats["bytes_placed"] += n
        if msg.placed >= msg.total and not msg.done:
            msg.qp.reads.pop(msg.msg_id, None)
            msg.done = True
            self._complete(msg.qp)

    # -- checks -------------------------------------------------------------
    def context_read_bytes(self) -> int:
        return sum(self.res[t].dma_read_bytes for t in CONTEXT_TYPES)


__all__ = ["RdmaNic", "NicConfig", "MemoryRegion", "QueuePair", "MTT_SEG", "MTT_BITS", "mtt_index"]
