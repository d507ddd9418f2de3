"""Per-block microbenchmarks: latency, throughput and bandwidth per item size."""
from __future__ import annotations

from ..dma import DmaEngine
from ..host import MemoryPool, SystemBus
from ..kernel import Pipeline, Feeder, Simulator
from ..primitives import BLOCK_OVERHEAD, block_stage

BLOCKS = tuple(BLOCK_OVERHEAD)


def _stage_point(block: str, size: int, n: int) -> tuple[float, float, float]:
    sim = Simulator()
    pipe = Pipeline(sim)
    st = pipe.add(block_stage(sim, block))
    src = pipe.source(st, capacity=4)
    out: list[int] = []
    st.sink = lambda item, t: out.append(t)
    Feeder(sim, src, (bytes(size) for _ in range(n)))
    sim.run()
    # full-item latency of an unqueued item: head latency plus the remaining beats
    lat_cycles = 1 + st.overhead + sim.beats(size) - 1
    rate = (n - 1) / ((out[-1] - out[0]) * 1e-12)
    return lat_cycles * sim.period / 1000.0, rate, rate * size * 8


def _dma_point(block: str, size: int, n: int) -> tuple[float, float, float]:
    sim = Simulator()
    pool = MemoryPool(1 << 24)
    bus = SystemBus(sim, pool, rtt=0, ideal=True)
    dma = DmaEngine(sim, bus)
    done: list[int] = []
    first_issue = sim.now
    if block == "dma_read":
        for i in range(n):
            dma.read((i * size) % (1 << 20), size, "bench", lambda d, e: done.append(sim.now))
    else:
        for i in range(n):
            dma.write((i * size) % (1 << 20), bytes(size), "bench", lambda e: done.append(sim.now))
    sim.run()
    lat = (done[0] - first_issue) / 1000.0
    rate = (n - 1) / ((done[-1] - done[0]) * 1e-12)
    return lat, rate, rate * size * 8


def block_point(block: str, size: int, n: int = 2000) -> tuple[float, float, float]:
    """(latency ns, throughput items/s, bandwidth bits/s) for one block and item size."""
    if block not in BLOCK_OVERHEAD:
        raise KeyError(block)
    if block.startswith("dma_"):
        return _dma_point(block, size, n)
    return _stage_point(block, size, n)
