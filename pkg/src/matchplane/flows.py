"""Hash-indexed per-flow storage with timeout and collision semantics.

A flow's slot index is ``H(enc(5-tuple)) mod N`` and its 32-bit TrueID is
``H'(enc(5-tuple))`` where H and H' are two independently seeded instances
of MurmurHash3 (x86, 32-bit) over the canonical 13-byte encoding

    src_ip(4, BE) | dst_ip(4, BE) | src_port(2, BE) | dst_port(2, BE) | proto(1)

On a packet for slot i:

* stored flow timed out (now - last_ts >= timeout)  -> reinitialize, fresh
* TrueID matches                                    -> continue the flow
* otherwise                                         -> Fallback (no state)

Fresh admission zeroes counters, ring and CPR.  The previous timestamp is
kept until the next packet so the IPD subtraction can use it.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import NamedTuple

from . import window

DEFAULT_N_SLOTS = 65536
DEFAULT_TIMEOUT_US = 256_000  # 256 ms
DEFAULT_SEED_IDX = 0x9E3779B9
DEFAULT_SEED_TID = 0x85EBCA6B


def murmur3_32(data: bytes, seed: int = 0) -> int:
    """MurmurHash3 x86 32-bit, as used for both slot index and TrueID."""
    c1, c2 = 0xCC9E2D51, 0x1B873593
    h = seed & 0xFFFFFFFF
    length = len(data)
    rounded = length & ~3
    for i in range(0, rounded, 4):
        k = int.from_bytes(data[i : i + 4], "little")
        k = (k * c1) & 0xFFFFFFFF
        k = ((k << 15) | (k >> 17)) & 0xFFFFFFFF
        k = (k * c2) & 0xFFFFFFFF
        h ^= k
        h = ((h << 13) | (h >> 19)) & 0xFFFFFFFF
        h = (h * 5 + 0xE6546B64) & 0xFFFFFFFF
    k = 0
    tail = data[rounded:]
    if len(tail) >= 3:
        k ^= tail[2] << 16
    if len(tail) >= 2:
        k ^= tail[1] << 8
    if len(tail) >= 1:
        k ^= tail[0]
        k = (k * c1) & 0xFFFFFFFF
        k = ((k << 15) | (k >> 17)) & 0xFFFFFFFF
        k = (k * c2) & 0xFFFFFFFF
        h ^= k
    h ^= length
    h ^= h >> 16
    h = (h * 0x85EBCA6B) & 0xFFFFFFFF
    h ^= h >> 13
    h = (h * 0xC2B2AE35) & 0xFFFFFFFF
    h ^= h >> 16
    return h


class FlowKey(NamedTuple):
    src: str
    dst: str
    sport: int
    dport: int
    proto: int

    def encode(self) -> bytes:
        return (
            _ip_bytes(self.src)
            + _ip_bytes(self.dst)
            + struct.pack(">HHB", self.sport, self.dport, self.proto)
        )


def _ip_bytes(ip: str) -> bytes:
    parts = ip.split(".")
    if len(parts) != 4:
        raise ValueError(f"bad IPv4 address {ip!r}")
    return bytes(int(p) for p in parts)


@dataclass
class FlowSlot:
    true_id: int = 0
    last_ts: int | None = None  # None = never used (timed out by definition)
    prev_ts: int | None = None  # timestamp before last_ts, for the IPD subtraction
    pktcnt: int = 0
    counters: window.PacketCounters | None = None
    ring: window.RingBuffer | None = None
    cpr_state: window.CprState | None = None

    def live(self, now: int, timeout: int) -> bool:
        return self.last_ts is not None and now - self.last_ts < timeout


@dataclass(frozen=True)
class Admit:
    slot: FlowSlot
    idx: int
    fresh: bool


class Fallback(NamedTuple):
    idx: int


@dataclass
class FlowTable:
    n_slots: int = DEFAULT_N_SLOTS
    timeout_us: int = DEFAULT_TIMEOUT_US
    seed_idx: int = DEFAULT_SEED_IDX
    seed_tid: int = DEFAULT_SEED_TID
    S: int = 8
    n_classes: int = 2
    slots: dict[int, FlowSlot] = field(default_factory=dict)
    clock_regressions: int = 0

    def __post_init__(self):
        if self.n_slots < 1:
            raise ValueError("need at least one slot")

    def index_of(self, key: FlowKey) -> int:
        return murmur3_32(key.encode(), self.seed_idx) % self.n_slots

    def true_id_of(self, key: FlowKey) -> int:
        return murmur3_32(key.encode(), self.seed_tid)

    def admit(self, key: FlowKey, now: int) -> Admit | Fallback:
        idx = self.index_of(key)
        tid = self.true_id_of(key)
        slot = self.slots.get(idx)
        if slot is None or not slot.live(now, self.timeout_us):
            slot = FlowSlot(
                true_id=tid,
                last_ts=now,
                prev_ts=None,
                pktcnt=0,
                counters=window.PacketCounters.fresh(self.S),
                ring=window.RingBuffer.fresh(self.S),
                cpr_state=window.CprState.fresh(self.n_classes),
            )
            self.slots[idx] = slot
            return Admit(slot=slot, idx=idx, fresh=True)
        if slot.true_id == tid:
            slot.prev_ts = slot.last_ts
            slot.last_ts = now
            return Admit(slot=slot, idx=idx, fresh=False)
        return Fallback(idx=idx)

    def ipd_of(self, slot: FlowSlot, now: int) -> int:
        """IPD in microseconds; 0 for the first packet of a (re)admitted flow."""
        if slot.prev_ts is None:
            return 0
        ipd = now - slot.prev_ts
        if ipd < 0:
            self.clock_regressions += 1
            return 0
        return ipd
