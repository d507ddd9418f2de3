"""Randomized RDMA WRITE/READ soak with byte-level and completion checks."""
from __future__ import annotations

import random
from collections import Counter, deque
from dataclasses import dataclass, field

from ..formats import Opcode, Status, Wqe
from .rdma_bench import MR_BYTES, RdmaHarness

SLOT = 8192  # each slot holds one op; offsets up to 4095 make page crossings common
HALF = MR_BYTES // 2
SLOTS = HALF // SLOT


@dataclass
class SoakReport:
    ops: int = 0
    writes: int = 0
    reads: int = 0
    cqes: Counter = field(default_factory=Counter)  # (qpn, wqe_id) -> count
    bad_status: int = 0
    corrupt: int = 0
    retx_bytes: int = 0
    dropped: int = 0

    @property
    def exactly_once(self) -> bool:
        return len(self.cqes) == self.ops and set(self.cqes.values()) == {1}


def soak(n_ops: int = 10_000, loss_rate: float = 0.0, seed: int = 0, n_qps: int = 8,
         outstanding: int = 8, max_size: int = 4096) -> SoakReport:
    """Post ``n_ops`` random writes and reads across ``n_qps`` QPs.

    Writes go to the lower half of each MR and reads come from the upper half
    of the remote MR, which writes never touch. A write slot is compared with
    its expected bytes before it is reused and again at the end; a read is
    compared at completion time.
    """
    if outstanding > SLOTS:
        raise ValueError(f"at most {SLOTS} outstanding ops per QP")
    h = RdmaHarness("all_hit", n_qps, loss_rate=loss_rate, seed=seed)
    rng = random.Random(seed)
    rep = SoakReport()
    per_qp = [n_ops // n_qps + (1 if i < n_ops % n_qps else 0) for i in range(n_qps)]
    posted = [0] * n_qps
    pending = [deque() for _ in range(n_qps)]  # (wqe_id, op, slot, off, size)
    expected: list[dict] = [{} for _ in range(n_qps)]  # write slot -> (off, bytes)
    free = [deque(range(SLOTS)) for _ in range(n_qps)]

    def verify_write(q, slot):
        off_data = expected[q].pop(slot, None)
        if off_data is None:
            return
        off, data = off_data
        _, _, _, dm = h.pairs[q]
        if h.resp.pool.read(dm.pa + slot * SLOT + off, len(data)) != data:
            rep.corrupt += 1

    def post(q):
        a, _, sm, dm = h.pairs[q]
        ring = h.req.driver.rings[a.sq]
        n = 0
        while posted[q] < per_qp[q] and len(pending[q]) < outstanding and ring.free >= 2:
            slot = free[q].popleft()
            op = Opcode.RDMA_WRITE if rng.random() < 0.5 else Opcode.RDMA_READ
            size = rng.randint(1, max_size)
            off = rng.randrange(SLOT - size + 1)
            wid = posted[q]
            if op == Opcode.RDMA_WRITE:
                verify_write(q, slot)
                data = rng.randbytes(size)
                h.req.pool.write(sm.pa + slot * SLOT + off, data)
                wqe = Wqe(op, wid, [(sm.va + slot * SLOT + off, size, sm.lkey)],
                          dm.va + slot * SLOT + off, dm.rkey)
                rep.writes += 1
            else:
                wqe = Wqe(op, wid, [(sm.va + HALF + slot * SLOT + off, size, sm.lkey)],
                          dm.va + HALF + slot * SLOT + off, dm.rkey)
                rep.reads += 1
            h.req.post(a, wqe, ring=False)
            pending[q].append((wid, op, slot, off, size))
            posted[q] += 1
            n += 1
        if n:
            h.req.ring(a)

    def on_cqe(qp, cqe, t):
        h.sim.after(h.req.bus.rtt // 2, poll, qp)

    def poll(qp):
        q = qp.qpn
        cqe = h.req.driver.poll_cq(qp.cq)
        if cqe is None:
            raise AssertionError("CQE announced but not in memory")
        h.req.driver.retire(qp.sq, cqe.wqe_id)
        rep.cqes[(q, cqe.wqe_id)] += 1
        wid, op, slot, off, size = pending[q].popleft()
        if wid != cqe.wqe_id:
            raise AssertionError(f"qp {q}: CQE for {cqe.wqe_id}, expected {wid}")
        if cqe.status != Status.SUCCESS or cqe.byte_len != size:
            rep.bad_status += 1
        _, _, sm, dm = h.pairs[q]
        if op == Opcode.RDMA_READ:
            local = h.req.pool.read(sm.pa + HALF + slot * SLOT + off, size)
            if local != h.resp.pool.read(dm.pa + HALF + slot * SLOT + off, size):
                rep.corrupt += 1
        else:
            expected[q][slot] = (off, h.req.pool.read(sm.pa + slot * SLOT + off, size))
        free[q].append(slot)
        post(q)

    h.req.on_cqe = on_cqe
    for q in range(n_qps):
        post(q)
    h.sim.run()
    for q in range(n_qps):
        for slot in list(expected[q]):
            verify_write(q, slot)
    rep.ops = sum(posted)
    rep.retx_bytes = h.retx_bytes()
    rep.dropped = sum(fwd.dropped + rev.dropped for _, _, fwd, rev in h.topo.links)
    return rep
