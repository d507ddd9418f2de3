"""Deterministic discrete-event kernel.

Simulated time is an integer number of picoseconds so that bus serialization
delays (e.g. 512 B at 100 Gbps) stay exact.  NIC logic is expressed in whole
clock cycles; :meth:`Simulator.cycles` converts.
"""
from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable


DEFAULT_CLOCK_HZ = 200e6
DEFAULT_BUS_BITS = 512


class SimulationError(RuntimeError):
    """Contract violation inside the simulation (fatal)."""


def beats(n_bytes: int, width_bits: int = DEFAULT_BUS_BITS) -> int:
    if width_bits <= 0 or width_bits % 8:
        raise ValueError(f"bus width must be a positive multiple of 8, got {width_bits}")
    if n_bytes <= 0:
        return 0
    return -(-n_bytes // (width_bits // 8))


@dataclass(order=True)
class _Event:
    time: int
    seq: int
    fn: Callable = field(compare=False)
    args: tuple = field(compare=False)
    cancelled: bool = field(default=False, compare=False)


class Simulator:
    """Event heap with insertion-order tie-break.

    ``schedule(at, fn, *args)`` fires ``fn(*args)`` exactly once when
    ``now == at``.  ``run_until(t)`` executes every event with time <= t and
    leaves ``now == t``.
    """

    def __init__(self, clock_hz: float = DEFAULT_CLOCK_HZ, bus_bits: int = DEFAULT_BUS_BITS,
                 trace: bool = False):
        if bus_bits % 8:
            raise ValueError("bus width must be a multiple of 8 bits")
        self.clock_hz = clock_hz
        self.period = int(round(1e12 / clock_hz))
        self.bus_bits = bus_bits
        self.now = 0
        self._heap: list[_Event] = []
        self._seq = 0
        self.events_fired = 0
        self.trace: list[tuple[int, str]] | None = [] if trace else None

    # -- time helpers -----------------------------------------------------
    def cycles(self, n: float) -> int:
        return int(round(n * self.period))

    def ns(self, t: float) -> int:
        return int(round(t * 1000))

    @property
    def cycle(self) -> int:
        return self.now // self.period

    def beats(self, n_bytes: int) -> int:
        return beats(n_bytes, self.bus_bits)

    # -- scheduling -------------------------------------------------------
    def schedule(self, at: int, fn: Callable, *args: Any) -> _Event:
        if at < self.now:
            raise SimulationError(f"cannot schedule at {at} before now={self.now}")
        ev = _Event(int(at), self._seq, fn, args)
        self._seq += 1
        heapq.heappush(self._heap, ev)
        return ev

    def after(self, delay: int, fn: Callable, *args: Any) -> _Event:
        return self.schedule(self.now + delay, fn, *args)

    @staticmethod
    def cancel(ev: _Event) -> None:
        ev.cancelled = True

    def _fire(self, ev: _Event) -> None:
        self.now = ev.time
        if ev.cancelled:
            return
        self.events_fired += 1
        if self.trace is not None:
            self.trace.append((ev.time, getattr(ev.fn, "__qualname__", repr(ev.fn))))
        ev.fn(*ev.args)

    def run_until(self, t: int) -> int:
        heap = self._heap
        while heap and heap[0].time <= t:
            self._fire(heapq.heappop(heap))
        if t > self.now:
            self.now = t
        return self.now

    def run(self, limit: int | None = None) -> int:
        """Run until the heap drains (or ``limit`` is reached)."""
        heap = self._heap
        while heap:
            if limit is not None and heap[0].time > limit:
                self.now = max(self.now, limit)
                break
            self._fire(heapq.heappop(heap))
        return self.now

    def step(self) -> bool:
        if not self._heap:
            return False
        self._fire(heapq.heappop(self._heap))
        return True

    @property
    def pending(self) -> int:
        return sum(1 for e in self._heap if not e.cancelled)


class Server:
    """Single server with FIFO reservation semantics.

    ``reserve(ready, busy)`` returns the start time of a job that becomes
    ready at ``ready`` and occupies the server for ``busy`` time units.
    This is a closed-form single-server queue used where an explicit
    channel would only add events.
    """

    __slots__ = ("name", "free_at", "busy_time", "jobs")

    def __init__(self, name: str = ""):
        self.name = name
        self.free_at = 0
        self.busy_time = 0
        self.jobs = 0

    def reserve(self, ready: int, busy: int) -> int:
        start = ready if ready > self.free_at else self.free_at
        self.free_at = start + busy
        self.busy_time += busy
        self.jobs += 1
        return start

    def utilization(self, elapsed: int) -> float:
        return self.busy_time / elapsed if elapsed > 0 else 0.0


class StageChannel:
    """Bounded FIFO between two stages.  Never exceeds ``capacity``."""

    def __init__(self, sim: Simulator, capacity: int, name: str = ""):
        if capacity < 1:
            raise ValueError("channel capacity must be >= 1")
        self.sim = sim
        self.capacity = capacity
        self.name = name
        self.items: deque = deque()
        self.max_occupancy = 0
        self.enqueued = 0
        self.dequeued = 0
        self.producer: Stage | None = None
        self.consumer: Stage | None = None

    def __len__(self) -> int:
        return len(self.items)

    @property
    def full(self) -> bool:
        return len(self.items) >= self.capacity

    def put(self, item: Any, ready_at: int) -> None:
        if self.full:
            raise SimulationError(f"channel {self.name} overflow (capacity {self.capacity})")
        self.items.append((ready_at, item))
        self.enqueued += 1
        if len(self.items) > self.max_occupancy:
            self.max_occupancy = len(self.items)
        if self.consumer is not None:
            self.consumer._wake(ready_at)

    def peek_ready(self) -> int | None:
        return self.items[0][0] if self.items else None

    def take(self) -> Any:
        _, item = self.items.popleft()
        self.dequeued += 1
        if self.producer is not None:
            self.producer._space_freed()
        return item


class Stage:
    """A PPU: single server with cut-through timing and output backpressure.

    An item whose head arrives at ``t`` starts at ``max(t, free)``; its head
    leaves after ``1 + overhead`` cycles and the stage stays occupied for
    ``beats(size) + overhead`` cycles.  If the output channel is full the
    stage stalls holding the item.
    """

    def __init__(self, sim: Simulator, name: str, overhead: int = 0,
                 fn: Callable[[Any], Any] | None = None,
                 size_of: Callable[[Any], int] | None = None,
                 service: Callable[[Any], int] | None = None):
        self.sim = sim
        self.name = name
        self.overhead = overhead
        self.fn = fn
        self.size_of = size_of or _default_size
        self._service = service
        self.inp: StageChannel | None = None
        self.out: StageChannel | None = None
        self.sink: Callable[[Any, int], None] | None = None
        self._free_at = 0
        self._held: tuple[int, Any] | None = None
        self._wake_ev: _Event | None = None
        self.processed = 0
        self.busy_time = 0
        self.stalled_time = 0
        self._stall_start: int | None = None

    def service_cycles(self, item: Any) -> int:
        if self._service is not None:
            return self._service(item)
        return self.sim.beats(self.size_of(item)) + self.overhead

    # driven by channels
    def _wake(self, at: int) -> None:
        at = max(at, self._free_at, self.sim.now)
        if self._wake_ev is not None and not self._wake_ev.cancelled:
            if self._wake_ev.time <= at:
                return
            Simulator.cancel(self._wake_ev)
        self._wake_ev = self.sim.schedule(at, self._try_start)

    def _try_start(self) -> None:
        self._wake_ev = None
        sim = self.sim
        if self._held is not None or self.inp is None or not self.inp.items:
            return
        ready = self.inp.peek_ready()
        start = max(ready, self._free_at, sim.now)
        if start > sim.now:
            self._wake(start)
            return
        item = self.inp.take()
        svc = self.service_cycles(item)
        self._free_at = sim.now + sim.cycles(svc)
        self.busy_time += sim.cycles(svc)
        head_out = sim.now + sim.cycles(1 + self.overhead)
        sim.schedule(head_out, self._emit, item)

    def _emit(self, item: Any) -> None:
        out = self.fn(item) if self.fn is not None else item
        self.processed += 1
        if out is None:
            self._after_emit()
            return
        if self.out is not None and self.out.full:
            self._held = (self.sim.now, out)
            self._stall_start = self.sim.now
            return
        self._deliver(out)
        self._after_emit()

    def _deliver(self, out: Any) -> None:
        if self.out is not None:
            self.out.put(out, self.sim.now)
        elif self.sink is not None:
            self.sink(out, self.sim.now)

    def _space_freed(self) -> None:
        if self._held is None:
            return
        _, out = self._held
        self._held = None
        if self._stall_start is not None:
            self.stalled_time += self.sim.now - self._stall_start
            self._stall_start = None
        # service time is sunk; the next item can start once we have handed off
        self._free_at = max(self._free_at, self.sim.now)
        self._deliver(out)
        self._after_emit()

    def _after_emit(self) -> None:
        if self.inp is not None and self.inp.items:
            self._wake(self.sim.now)


def _default_size(item: Any) -> int:
    if hasattr(item, "length"):
        return item.length
    if isinstance(item, (bytes, bytearray)):
        return len(item)
    return 1


class Pipeline:
    """Convenience wiring of stages; ``connect`` refuses to reuse an output port."""

    def __init__(self, sim: Simulator):
        self.sim = sim
        self.stages: list[Stage] = []
        self.channels: list[StageChannel] = []

    def add(self, stage: Stage) -> Stage:
        self.stages.append(stage)
        return stage

    def connect(self, producer: Stage, consumer: Stage, capacity: int) -> StageChannel:
        if producer not in self.stages or consumer not in self.stages:
            raise SimulationError("both stages must be registered before connecting")
        if producer.out is not None:
            raise SimulationError(f"output of {producer.name} already connected")
        if consumer.inp is not None:
            raise SimulationError(f"input of {consumer.name} already connected")
        ch = StageChannel(self.sim, capacity, f"{producer.name}->{consumer.name}")
        ch.producer, ch.consumer = producer, consumer
        producer.out, consumer.inp = ch, ch
        self.channels.append(ch)
        return ch

    def source(self, consumer: Stage, capacity: int) -> StageChannel:
        if consumer.inp is not None:
            raise SimulationError(f"input of {consumer.name} already connected")
        ch = StageChannel(self.sim, capacity, f"src->{consumer.name}")
        ch.consumer = consumer
        consumer.inp = ch
        self.channels.append(ch)
        return ch


class Feeder:
    """Pushes items into a channel as fast as backpressure allows."""

    def __init__(self, sim: Simulator, channel: StageChannel, items: Iterable[Any]):
        self.sim = sim
        self.channel = channel
        self._items = iter(items)
        self._next: Any = None
        self.injected = 0
        channel.producer = self  # type: ignore[assignment]
        self._exhausted = False
        sim.schedule(sim.now, self._fill)

    def _fill(self) -> None:
        while not self.channel.full:
            if self._next is None:
                try:
                    self._next = next(self._items)
                except StopIteration:
                    self._exhausted = True
                    return
            self.channel.put(self._next, self.sim.now)
            self._next = None
            self.injected += 1

    def _space_freed(self) -> None:
        if not self._exhausted:
            self.sim.schedule(self.sim.now, self._fill)


def percentile(values: list[float], q: float) -> float:
    """Nearest-rank percentile (q in [0, 100])."""
    if not values:
        return math.nan
    s = sorted(values)
    k = max(0, min(len(s) - 1, int(math.ceil(q / 100.0 * len(s))) - 1))
    return s[k]
