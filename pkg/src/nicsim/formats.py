"""Bit-exact wire and memory layouts shared by host and NIC.

WQE (16 B head + 16 B per segment, little-endian)::

    head:    opcode u8 | nseg:3 + flags:5 u8 | wqe_id u32 | remote_va u48 | rkey u32
    segment: va u64 | len u32 | lkey u32          (data ops)
             32 raw key bytes across 2 segments    (KV_GET)

CQE (16 B): wqe_id u32 | status u16 | qid u24 | byte_len u32 | valid u8 | rsvd u16

RDMA header (32 B, big-endian): opcode u8 | dest_qpn u24 | psn u24 |
remote_va u64 | rkey u32 | length u32 | msg_id u32 | flags u8 | pad 4
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

SEGMENT = 16
WQE_HEAD = 16
MAX_SGE = 4
KV_KEY_BYTES = 32


class Opcode(enum.IntEnum):
    RDMA_WRITE = 1
    RDMA_READ = 2
    SEND = 3
    KV_GET = 4
    # on-wire only
    READ_RESPONSE = 0x10
    ACK = 0x20
    KV_RESPONSE = 0x30


class Status(enum.IntEnum):
    SUCCESS = 0
    LOCAL_PROTECTION = 1
    REMOTE_ACCESS = 2
    TRANSLATION_FAULT = 3
    MALFORMED_WQE = 4
    FLUSHED = 5
    TRANSPORT_RETRY_EXCEEDED = 6
    NOT_FOUND = 7
    BUS_FAULT = 8


WQE_FLAG_SIGNALED = 0x1
_VA48 = (1 << 48) - 1


class MalformedWqe(ValueError):
    pass


@dataclass
class Wqe:
    opcode: Opcode
    wqe_id: int
    sgl: list[tuple[int, int, int]] = field(default_factory=list)  # (va, len, lkey)
    remote_va: int = 0
    rkey: int = 0
    kv_key: bytes | None = None
    flags: int = WQE_FLAG_SIGNALED

    @property
    def total_len(self) -> int:
        return sum(n for _, n, _ in self.sgl)

    @property
    def nseg(self) -> int:
        return KV_KEY_BYTES // SEGMENT if self.opcode == Opcode.KV_GET else len(self.sgl)

    @property
    def size(self) -> int:
        return WQE_HEAD + SEGMENT * self.nseg

    def pack(self) -> bytes:
        if self.opcode == Opcode.KV_GET:
            if self.kv_key is None or len(self.kv_key) != KV_KEY_BYTES:
                raise ValueError("KV_GET needs a 32 B key")
        elif not 1 <= len(self.sgl) <= MAX_SGE:
            raise ValueError(f"sgl must have 1..{MAX_SGE} entries")
        if self.remote_va > _VA48:
            raise ValueError("remote_va must fit in 48 bits")
        head = struct.pack("<BBI", int(self.opcode), (self.nseg & 0x7) | ((self.flags & 0x1F) << 3),
                           self.wqe_id & 0xFFFFFFFF)
        head += (self.remote_va & _VA48).to_bytes(6, "little") + struct.pack("<I", self.rkey & 0xFFFFFFFF)
        if self.opcode == Opcode.KV_GET:
            return head + bytes(self.kv_key)  # type: ignore[arg-type]
        return head + b"".join(struct.pack("<QII", va, n, lkey) for va, n, lkey in self.sgl)


def wqe_nseg(head: bytes) -> int:
    return head[1] & 0x7


def wqe_size(head: bytes) -> int:
    return WQE_HEAD + SEGMENT * wqe_nseg(head)


def unpack_wqe(raw: bytes) -> Wqe:
    if len(raw) < WQE_HEAD:
        raise MalformedWqe("short WQE head")
    op_b, nf, wqe_id = struct.unpack_from("<BBI", raw, 0)
    try:
        opcode = Opcode(op_b)
    except ValueError:
        raise MalformedWqe(f"unknown opcode {op_b}") from None
    if opcode not in (Opcode.RDMA_WRITE, Opcode.RDMA_READ, Opcode.SEND, Opcode.KV_GET):
        raise MalformedWqe(f"opcode {opcode.name} is not a work request")
    nseg, flags = nf & 0x7, nf >> 3
    remote_va = int.from_bytes(raw[6:12], "little")
    (rkey,) = struct.unpack_from("<I", raw, 12)
    need = WQE_HEAD + SEGMENT * nseg
    if len(raw) < need:
        raise MalformedWqe(f"WQE needs {need} B, got {len(raw)}")
    if opcode == Opcode.KV_GET:
        if nseg * SEGMENT != KV_KEY_BYTES:
            raise MalformedWqe("KV_GET must carry a 32 B key")
        return Wqe(opcode, wqe_id, [], remote_va, rkey, bytes(raw[16:16 + KV_KEY_BYTES]), flags)
    if not 1 <= nseg <= MAX_SGE:
        raise MalformedWqe(f"bad sgl count {nseg}")
    sgl = [struct.unpack_from("<QII", raw, WQE_HEAD + SEGMENT * i) for i in range(nseg)]
    for _, n, _ in sgl:
        if n == 0:
            raise MalformedWqe("zero-length sgl entry")
    return Wqe(opcode, wqe_id, [tuple(e) for e in sgl], remote_va, rkey, None, flags)


CQE_BYTES = 16


@dataclass(frozen=True)
class Cqe:
    wqe_id: int
    status: int
    qid: int
    byte_len: int

    def pack(self) -> bytes:
        return (struct.pack("<IH", self.wqe_id, self.status) + (self.qid & 0xFFFFFF).to_bytes(3, "little")
                + struct.pack("<IBH", self.byte_len, 1, 0))


def unpack_cqe(raw: bytes) -> Cqe | None:
    """None when the entry's valid byte is clear."""
    if raw[13] == 0:
        return None
    wqe_id, status = struct.unpack_from("<IH", raw, 0)
    qid = int.from_bytes(raw[6:9], "little")
    (byte_len,) = struct.unpack_from("<I", raw, 9)
    return Cqe(wqe_id, status, qid, byte_len)


RDMA_HEADER_BYTES = 32
HDR_FIRST = 0x1
HDR_LAST = 0x2
PSN_MASK = (1 << 24) - 1


@dataclass
class RdmaHeader:
    opcode: int
    dest_qpn: int
    psn: int
    remote_va: int
    rkey: int
    length: int
    msg_id: int
    flags: int

    def pack(self) -> bytes:
        return (struct.pack(">B", self.opcode) + (self.dest_qpn & 0xFFFFFF).to_bytes(3, "big")
                + (self.psn & PSN_MASK).to_bytes(3, "big")
                + struct.pack(">QIIIB", self.remote_va, self.rkey, self.length, self.msg_id, self.flags)
                + b"\0" * 4)

    @classmethod
    def unpack(cls, raw: bytes) -> "RdmaHeader":
        if len(raw) != RDMA_HEADER_BYTES:
            raise ValueError(f"RDMA header must be {RDMA_HEADER_BYTES} B")
        opcode = raw[0]
        dest = int.from_bytes(raw[1:4], "big")
        psn = int.from_bytes(raw[4:7], "big")
        va, rkey, length, msg_id, flags = struct.unpack_from(">QIIIB", raw, 7)
        return cls(opcode, dest, psn, va, rkey, length, msg_id, flags)


# -- context records --------------------------------------------------------

QPC_BITS, CQC_BITS, MPT_BITS, MTT_BITS, VALUE_BITS = 416, 128, 256, 64, 256

QP_RTS = 1
QP_ERROR = 2

_QPC_FMT = "<IIIIIIBIIIH"  # 39 B, zero-padded to 52


@dataclass
class QpContext:
    qpn: int
    dest_qpn: int
    src_id: int = 0
    dst_id: int = 1
    next_send_psn: int = 0
    expected_recv_psn: int = 0
    state: int = QP_RTS
    sq_id: int = 0
    rq_id: int = 0
    cq_id: int = 0
    mtu: int = 4096

    def pack(self) -> bytes:
        raw = struct.pack(_QPC_FMT, self.qpn, self.dest_qpn, self.src_id, self.dst_id,
                          self.next_send_psn, self.expected_recv_psn, self.state,
                          self.sq_id, self.rq_id, self.cq_id, self.mtu)
        return raw + b"\0" * (QPC_BITS // 8 - len(raw))

    @classmethod
    def unpack(cls, raw: bytes) -> "QpContext":
        return cls(*struct.unpack_from(_QPC_FMT, raw, 0))


@dataclass
class CqContext:
    base_pa: int
    depth: int
    producer_index: int = 0

    def pack(self) -> bytes:
        return struct.pack("<QII", self.base_pa, self.depth, self.producer_index)

    @classmethod
    def unpack(cls, raw: bytes) -> "CqContext":
        return cls(*struct.unpack_from("<QII", raw, 0))


ACCESS_LOCAL_READ = 0x1
ACCESS_REMOTE_WRITE = 0x2
ACCESS_REMOTE_READ = 0x4
ACCESS_ALL = 0x7


@dataclass
class Mpt:
    lkey: int
    rkey: int
    access: int
    pd: int
    va_base: int
    length: int
    mtt_base: int

    def pack(self) -> bytes:
        return struct.pack("<IIIIQII", self.lkey, self.rkey, self.access, self.pd,
                           self.va_base, self.length, self.mtt_base)

    @classmethod
    def unpack(cls, raw: bytes) -> "Mpt":
        return cls(*struct.unpack_from("<IIIIQII", raw, 0))

    def covers(self, va: int, n: int) -> bool:
        return self.va_base <= va and va + n <= self.va_base + self.length


def pack_mtt(page_pa: int) -> bytes:
    return struct.pack("<Q", page_pa)


def unpack_mtt(raw: bytes) -> int:
    return struct.unpack_from("<Q", raw, 0)[0]
