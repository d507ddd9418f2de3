import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nicsim.dma import DmaEngine
from nicsim.formats import (CQC_BITS, MPT_BITS, MTT_BITS, QPC_BITS, Cqe, CqContext, MalformedWqe, Mpt,
                            Opcode, QpContext, RdmaHeader, Wqe, pack_mtt, unpack_cqe, unpack_mtt,
                            unpack_wqe)
from nicsim.host import BusFault, MemoryPool, SystemBus
from nicsim.kernel import Simulator

seg = st.tuples(st.integers(0, 2**64 - 1), st.integers(1, 2**32 - 1), st.integers(0, 2**32 - 1))


@given(st.sampled_from([Opcode.RDMA_WRITE, Opcode.RDMA_READ, Opcode.SEND]), st.integers(0, 2**32 - 1),
       st.lists(seg, min_size=1, max_size=4), st.integers(0, 2**48 - 1), st.integers(0, 2**32 - 1))
def test_wqe_round_trip(op, wid, sgl, rva, rkey):
    w = Wqe(op, wid, sgl, rva, rkey)
    raw = w.pack()
    assert len(raw) == 16 + 16 * len(sgl)
    assert unpack_wqe(raw) == w


def test_kv_wqe_round_trip_and_errors():
    w = Wqe(Opcode.KV_GET, 9, kv_key=bytes(range(32)))
    assert unpack_wqe(w.pack()) == w
    raw = bytearray(Wqe(Opcode.RDMA_WRITE, 1, [(0, 8, 0)]).pack())
    with pytest.raises(MalformedWqe):
        unpack_wqe(bytes([0x7E]) + bytes(raw[1:]))
    with pytest.raises(MalformedWqe):
        unpack_wqe(bytes(raw[:20]))
    raw[1] = (raw[1] & ~0x7) | 0  # zero segments
    with pytest.raises(MalformedWqe):
        unpack_wqe(bytes(raw))
    with pytest.raises(ValueError):
        Wqe(Opcode.RDMA_WRITE, 1, []).pack()


def test_cqe_and_header_round_trip():
    c = Cqe(7, 2, 0x123456, 4096)
    raw = c.pack()
    assert len(raw) == 16 and unpack_cqe(raw) == c
    assert unpack_cqe(bytes(16)) is None
    h = RdmaHeader(1, 5, 0xFFFFFF, 0x7F00_0000_1000, 0x101, 4096, 3, 3)
    assert len(h.pack()) == 32 and RdmaHeader.unpack(h.pack()) == h


def test_context_sizes_sum_to_108_bytes():
    assert (QPC_BITS + CQC_BITS + MPT_BITS + MTT_BITS) // 8 == 108
    assert len(QpContext(1, 2).pack()) == QPC_BITS // 8
    assert QpContext.unpack(QpContext(1, 2, next_send_psn=77).pack()).next_send_psn == 77
    assert CqContext.unpack(CqContext(4096, 64, 3).pack()) == CqContext(4096, 64, 3)
    m = Mpt(0x100, 0x101, 7, 0, 0x7F00_0000_0000, 8192, 64)
    assert len(m.pack()) <= MPT_BITS // 8 and Mpt.unpack(m.pack()) == m
    assert m.covers(0x7F00_0000_0000, 8192) and not m.covers(0x7F00_0000_0001, 8192)
    assert unpack_mtt(pack_mtt(0xABC000)) == 0xABC000


def test_bus_completions_interleave_across_tags():
    sim = Simulator()
    pool = MemoryPool(1 << 20)
    bus = SystemBus(sim, pool)
    got = {0: [], 1: []}
    for t in (0, 1):
        bus.read(t * 4096, 512, lambda off, d, t=t: got[t].append(off), lambda e: None)
    sim.run()
    assert sorted(got[0]) == [0, 128, 256, 384] and sorted(got[1]) == [0, 128, 256, 384]
    assert bus.interleavings > 0


def test_bus_read_latency_is_rtt_plus_serialization():
    sim = Simulator()
    bus = SystemBus(sim, MemoryPool(1 << 20), rtt=350e-9)
    t = []
    bus.read(0, 64, lambda off, d: t.append(sim.now), lambda e: None)
    sim.run()
    assert t[0] == 350_000 + round(64 * 8e12 / 100e9)


def test_bus_fault_out_of_pool():
    sim = Simulator()
    bus = SystemBus(sim, MemoryPool(4096))
    errs = []
    bus.read(8192, 64, lambda off, d: None, errs.append)
    bus.write(8192, b"x", errs.append)
    sim.run()
    assert len(errs) == 2 and all(isinstance(e, BusFault) for e in errs)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 60000), st.integers(1, 5000)), min_size=1, max_size=12))
def test_dma_reassembles_out_of_order_completions(reads):
    sim = Simulator()
    pool = MemoryPool(1 << 17)
    pool.write(0, bytes((i * 7 + 3) % 251 for i in range(1 << 17)))
    dma = DmaEngine(sim, SystemBus(sim, pool), max_tags=4, reorder_bytes=2048)
    out = {}
    for i, (pa, n) in enumerate(reads):
        dma.read(pa, n, f"r{i % 3}", lambda d, e, i=i: out.setdefault(i, (d, e)))
    sim.run()
    for i, (pa, n) in enumerate(reads):
        data, err = out[i]
        assert err is None and data == pool.read(pa, n)
    assert dma.tags_in_use == 0


def test_dma_write_then_read_and_split():
    sim = Simulator()
    pool = MemoryPool(1 << 16)
    bus = SystemBus(sim, pool)
    dma = DmaEngine(sim, bus)
    payload = bytes(range(256)) * 6  # 1536 B -> three 512 B transactions
    res = {}
    dma.write(100, payload, "w", lambda e: res.setdefault("w", e))
    sim.run()
    assert res["w"] is None and bus.writes == 3
    dma.read(100, len(payload), "r", lambda d, e: res.setdefault("r", d))
    sim.run()
    assert res["r"] == payload and bus.reads == 3


def test_dma_error_propagates():
    sim = Simulator()
    dma = DmaEngine(sim, SystemBus(sim, MemoryPool(4096)))
    res = []
    dma.read(1 << 20, 64, "x", lambda d, e: res.append((d, e)))
    sim.run()
    assert res[0][0] is None and isinstance(res[0][1], BusFault)
