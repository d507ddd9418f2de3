import random
from collections import deque

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nicsim.dma import DmaEngine
from nicsim.host import MemoryPool, SystemBus
from nicsim.kernel import SimulationError, Simulator
from nicsim.primitives import (DynamicBuffer, MalformedPacketError, MultiQueue, Packet, Sgl,
                               append_header, gather, remove_header, scatter)


@given(st.binary(max_size=200), st.lists(st.binary(min_size=1, max_size=40), max_size=4),
       st.binary(min_size=1, max_size=40))
def test_header_round_trip(payload, stack, h):
    p = Packet(payload)
    for x in stack:
        p = append_header(p, x)
    got, q = remove_header(append_header(p, h), len(h))
    assert got == h and q == p


def test_header_errors_and_wire_order():
    with pytest.raises(MalformedPacketError):
        remove_header(Packet(b"x"), 4)
    p = append_header(append_header(Packet(b"pay"), b"in"), b"out")
    assert p.wire_bytes() == b"outinpay"
    assert p.length == 8
    with pytest.raises(MalformedPacketError):
        remove_header(p, 2)


def _dma():
    sim = Simulator()
    pool = MemoryPool(1 << 20)
    return sim, pool, DmaEngine(sim, SystemBus(sim, pool, rtt=350e-9))


@settings(max_examples=30, deadline=None)
@given(st.binary(min_size=1, max_size=3000), st.integers(1, 6), st.randoms(use_true_random=False))
def test_scatter_gather_round_trip(payload, parts, rnd):
    cuts = sorted(rnd.sample(range(1, len(payload)), min(parts - 1, len(payload) - 1)))
    bounds = [0] + cuts + [len(payload)]
    sgl = Sgl.of(*[(10000 + 5000 * i, bounds[i + 1] - bounds[i]) for i in range(len(bounds) - 1)])
    sim, pool, dma = _dma()
    res = {}
    scatter(payload, sgl, dma, "t", lambda err: res.setdefault("w", err))
    sim.run()
    assert res["w"] is None
    gather(sgl, dma, "t", lambda data, err: res.setdefault("r", data))
    sim.run()
    assert res["r"] == payload


def test_sgl_rejects_empty_entry():
    with pytest.raises(ValueError):
        Sgl.of((0, 0))


def test_multiqueue_fuzz_against_oracle():
    rng = random.Random(1)
    mq = MultiQueue(slots=64)
    oracle: dict[int, deque] = {q: deque() for q in range(8)}
    for i in range(100_000):
        q = rng.randrange(8)
        if rng.random() < 0.52:
            ok = mq.enqueue(q, i)
            used = sum(len(d) for d in oracle.values())
            assert ok == (used < 64)
            if ok:
                oracle[q].append(i)
        else:
            want = oracle[q].popleft() if oracle[q] else None
            assert mq.dequeue(q) == want
        assert mq.occupancy(q) == len(oracle[q])
        if i % 997 == 0:
            mq.check()
    mq.check()


def test_multiqueue_non_interference():
    mq = MultiQueue(slots=16)
    for i in range(4):
        mq.enqueue(0, ("a", i))
    for i in range(6):
        mq.enqueue(1, ("b", i))
    mq.dequeue(1)
    assert [mq.dequeue(0) for _ in range(4)] == [("a", i) for i in range(4)]
    with pytest.raises(ValueError):
        mq.enqueue(0, bytes(65))


def test_dynamic_buffer_fuzz_against_oracle():
    rng = random.Random(2)
    buf = DynamicBuffer(slots=128)
    live: dict[int, bytes] = {}
    free = 128
    for i in range(100_000):
        if live and (rng.random() < 0.5 or free == 0):
            h = rng.choice(list(live))
            data = live.pop(h)
            assert buf.delete(h) == data
            free += buf.slots_for(len(data))
        else:
            n = rng.randrange(1, 300)
            h = buf.insert(bytes([i % 256]) * n)
            need = buf.slots_for(n)
            assert (h is not None) == (need <= free)
            if h is not None:
                live[h] = bytes([i % 256]) * n
                free -= need
        assert buf.free_slots == free
        if i % 997 == 0:
            buf.check()
            used = [s for run in buf.allocated_slots().values() for s in run]
            assert len(used) == len(set(used))
    buf.check()


def test_dynamic_buffer_reuse_and_dead_handle():
    buf = DynamicBuffer(slots=2)
    a = buf.insert(b"x" * 64)
    buf.insert(b"y" * 64)
    assert buf.insert(b"z") is None
    assert buf.delete(a) == b"x" * 64
    assert buf.insert(b"z") is not None
    with pytest.raises(SimulationError):
        buf.delete(a)
