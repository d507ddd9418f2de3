"""Protocol-independent building blocks: header stack, scatter/gather,
shared-buffer multi-queue and dynamic buffer, plus their timing calibration.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable

from .kernel import SimulationError, Simulator, Stage


class MalformedPacketError(ValueError):
    pass


class AccessFault(RuntimeError):
    """Unmapped or out-of-range memory access; surfaces as a completion error."""


# Serial (non-overlappable) cycles per item for each block.  Service time is
# beats(item) + overhead, so 64 B throughput is clock / (1 + overhead).
BLOCK_OVERHEAD = {
    # one state transition (header mux, metadata FIFO pop) per item
    "append_header": 1,
    "remove_header": 1,
    "scatter": 1,
    "gather": 1,
    "cache_read": 4,
    "cache_write": 4,
    # 3 cycles to allocate and update head/tail, 1 to link the slot
    "mq_enqueue": 4,
    "mq_dequeue": 4,
    "buf_insert": 3,
    "buf_delete": 3,
    "dma_read": 3,
    "dma_write": 3,
}


@dataclass
class Packet:
    payload: bytes = b""
    headers: list[bytes] = field(default_factory=list)
    conn_id: int = 0
    psn: int | None = None
    ingress_time: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def length(self) -> int:
        return len(self.payload) + sum(len(h) for h in self.headers)

    def wire_bytes(self) -> bytes:
        return b"".join(reversed(self.headers)) + self.payload


def append_header(p: Packet, h: bytes) -> Packet:
    if not h:
        raise ValueError("header must be non-empty")
    return replace(p, headers=p.headers + [bytes(h)])


def remove_header(p: Packet, n: int) -> tuple[bytes, Packet]:
    if not p.headers:
        raise MalformedPacketError("packet has no header to remove")
    if len(p.headers[-1]) != n:
        raise MalformedPacketError(
            f"outermost header is {len(p.headers[-1])} B, asked to remove {n} B")
    return p.headers[-1], replace(p, headers=p.headers[:-1])


@dataclass(frozen=True)
class Sgl:
    """Ordered (address, length) pairs."""
    entries: tuple[tuple[int, int], ...]

    def __post_init__(self):
        for addr, length in self.entries:
            if length <= 0:
                raise ValueError(f"sgl entry at {addr:#x} has non-positive length {length}")

    @classmethod
    def of(cls, *pairs: tuple[int, int]) -> "Sgl":
        return cls(tuple((int(a), int(n)) for a, n in pairs))

    @property
    def total(self) -> int:
        return sum(n for _, n in self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def gather(sgl: Sgl, dma, requester: str, done: Callable[[bytes | None, Exception | None], None],
           conn_id: int = 0) -> None:
    """Read every sgl entry through ``dma`` and deliver the concatenation."""
    parts: list[bytes | None] = [None] * len(sgl)
    remaining = [len(sgl)]
    failed: list[Exception] = []

    def piece(i: int):
        def cb(data, err):
            if err is not None:
                failed.append(err)
            parts[i] = data
            remaining[0] -= 1
            if remaining[0] == 0:
                if failed:
                    done(None, failed[0])
                else:
                    done(b"".join(parts), None)  # type: ignore[arg-type]
        return cb

    for i, (addr, length) in enumerate(sgl):
        dma.read(addr, length, requester, piece(i))


def scatter(payload: bytes, sgl: Sgl, dma, requester: str,
            done: Callable[[Exception | None], None]) -> None:
    """Split ``payload`` across the sgl destinations in order."""
    if sgl.total < len(payload):
        raise ValueError(f"sgl holds {sgl.total} B, payload is {len(payload)} B")
    writes: list[tuple[int, bytes]] = []
    off = 0
    for addr, length in sgl:
        if off >= len(payload):
            break
        chunk = payload[off:off + length]
        writes.append((addr, chunk))
        off += len(chunk)
    if not writes:
        done(None)
        return
    remaining = [len(writes)]
    failed: list[Exception] = []

    def cb(err):
        if err is not None:
            failed.append(err)
        remaining[0] -= 1
        if remaining[0] == 0:
            done(failed[0] if failed else None)

    for addr, chunk in writes:
        dma.write(addr, chunk, requester, cb)


class MultiQueue:
    """Many logical FIFOs sharing one slot buffer.

    Slots form per-queue singly linked lists; free slots form a free list.
    ``enqueue`` returns False when no slot is free (backpressure).
    """

    def __init__(self, slots: int = 32, width_bits: int = 512):
        if slots < 1:
            raise ValueError("slots must be >= 1")
        self.slots = slots
        self.width_bits = width_bits
        self._data: list[Any] = [None] * slots
        self._next = [-1] * slots
        self._free = deque(range(slots))
        self._head: dict[int, int] = {}
        self._tail: dict[int, int] = {}
        self._count: dict[int, int] = {}

    @property
    def free_slots(self) -> int:
        return len(self._free)

    def occupancy(self, qid: int) -> int:
        return self._count.get(qid, 0)

    def enqueue(self, qid: int, item: Any) -> bool:
        if isinstance(item, (bytes, bytearray)) and len(item) * 8 > self.width_bits:
            raise ValueError(f"item of {len(item)} B exceeds slot width {self.width_bits} bits")
        if not self._free:
            return False
        s = self._free.popleft()
        self._data[s] = item
        self._next[s] = -1
        if qid in self._tail:
            self._next[self._tail[qid]] = s
        else:
            self._head[qid] = s
        self._tail[qid] = s
        self._count[qid] = self._count.get(qid, 0) + 1
        return True

    def peek(self, qid: int) -> Any:
        s = self._head.get(qid)
        return None if s is None else self._data[s]

    def dequeue(self, qid: int) -> Any:
        s = self._head.get(qid)
        if s is None:
            return None
        item = self._data[s]
        nxt = self._next[s]
        if nxt == -1:
            del self._head[qid]
            del self._tail[qid]
            del self._count[qid]
        else:
            self._head[qid] = nxt
            self._count[qid] -= 1
        self._data[s] = None
        self._free.append(s)
        return item

    def check(self) -> None:
        used = sum(self._count.values())
        if used + len(self._free) != self.slots:
            raise SimulationError(f"slot leak: {used} used + {len(self._free)} free != {self.slots}")


class DynamicBuffer:
    """Slot allocator (malloc/free at slot granularity) over a shared buffer."""

    def __init__(self, slots: int = 32, width_bits: int = 512):
        if slots < 1:
            raise ValueError("slots must be >= 1")
        self.slots = slots
        self.slot_bytes = width_bits // 8
        self._free = deque(range(slots))
        self._live: dict[int, tuple[list[int], Any]] = {}
        self._next_handle = 0

    @property
    def free_slots(self) -> int:
        return len(self._free)

    def slots_for(self, n_bytes: int) -> int:
        return max(1, -(-n_bytes // self.slot_bytes))

    def can_insert(self, n_bytes: int) -> bool:
        return self.slots_for(n_bytes) <= len(self._free)

    def insert(self, data: Any, n_bytes: int | None = None) -> int | None:
        """Store ``data``; returns a handle, or None when space is short."""
        if n_bytes is None:
            n_bytes = len(data)
        need = self.slots_for(n_bytes)
        if need > len(self._free):
            return None
        run = [self._free.popleft() for _ in range(need)]
        h = self._next_handle
        self._next_handle += 1
        self._live[h] = (run, data)
        return h

    def get(self, handle: int) -> Any:
        if handle not in self._live:
            raise SimulationError(f"handle {handle} is not live")
        return self._live[handle][1]

    def delete(self, handle: int) -> Any:
        entry = self._live.pop(handle, None)
        if entry is None:
            raise SimulationError(f"delete of dead handle {handle}")
        run, data = entry
        self._free.extend(run)
        return data

    def live_handles(self) -> list[int]:
        return list(self._live)

    def allocated_slots(self) -> dict[int, list[int]]:
        return {h: list(run) for h, (run, _) in self._live.items()}

    def check(self) -> None:
        used = sum(len(r) for r, _ in self._live.values())
        if used + len(self._free) != self.slots:
            raise SimulationError("dynamic buffer slot leak")


# -- block stages ---------------------------------------------------------

def block_stage(sim: Simulator, block: str, overhead: int | None = None,
                fn: Callable[[Any], Any] | None = None,
                size_of: Callable[[Any], int] | None = None,
                service: Callable[[Any], int] | None = None) -> Stage:
    """A Stage carrying the calibrated serial overhead of ``block``."""
    s = BLOCK_OVERHEAD[block] if overhead is None else overhead
    return Stage(sim, block, overhead=s, fn=fn, size_of=size_of, service=service)


def split_request(payload_len: int, parts: int = 2) -> list[int]:
    """Packet sizes of one scatter/gather request made of ``parts`` packets."""
    base, extra = divmod(payload_len, parts)
    return [base + (1 if i < extra else 0) for i in range(parts) if base or i < extra]


def request_beats(sim: Simulator, sizes: Iterable[int]) -> int:
    return sum(sim.beats(n) for n in sizes)
