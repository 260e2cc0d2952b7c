"""Packet traces: types, file formats, synthesis, flow splitting, replay.

Text format (one packet per line, '#' lines are comments/metadata):

    time_us src dst sport dport proto length [label]

An optional binary variant (magic ``MPTR1``) stores the same fields as
little-endian records for bulk traces.  Timestamps are microseconds and
must be nondecreasing.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .flows import FlowKey

DEFAULT_GAP_US = 256_000  # flow record split threshold, and the engine timeout

_BIN_MAGIC = b"MPTR1\n"
_BIN_RECORD = struct.Struct("<q4s4sHHBHh")


@dataclass(frozen=True)
class PacketEvent:
    time_us: int
    key: FlowKey
    length: int
    label: int | None = None
    raw: bytes | None = None  # optional raw-byte prefix for escalated analysis


@dataclass
class Trace:
    packets: list[PacketEvent] = field(default_factory=list)
    n_classes: int | None = None
    degenerate_classes: bool = False

    def __post_init__(self):
        last = None
        for p in self.packets:
            if last is not None and p.time_us < last:
                raise ValueError("trace timestamps must be nondecreasing")
            last = p.time_us
            if p.label is not None and self.n_classes is not None:
                if not 0 <= p.label < self.n_classes:
                    raise ValueError(f"label {p.label} outside [0, {self.n_classes})")

    def __len__(self) -> int:
        return len(self.packets)

    @property
    def labeled(self) -> bool:
        return all(p.label is not None for p in self.packets)

    def duration_us(self) -> int:
        if not self.packets:
            return 0
        return self.packets[-1].time_us - self.packets[0].time_us

    def flow_count(self, gap_us: int = DEFAULT_GAP_US) -> int:
        return len(split_flows(self.packets, gap_us=gap_us))


@dataclass
class FlowRecord:
    key: FlowKey
    packets: list[PacketEvent]

    @property
    def label(self) -> int | None:
        return self.packets[0].label


def split_flows(
    events: Iterable[PacketEvent],
    gap_us: int = DEFAULT_GAP_US,
    keep_protos: tuple[int, ...] = (6, 17),
) -> list[FlowRecord]:
    """Split per-five-tuple packet streams into flow records at long gaps.

    A packet more than ``gap_us`` after its predecessor starts a new flow
    record (same rule the online engine uses for slot timeout).  Packets of
    other protocols are dropped.  Records are ordered by first-packet time.
    """
    open_records: dict[FlowKey, FlowRecord] = {}
    records: list[FlowRecord] = []
    for p in events:
        if p.key.proto not in keep_protos:
            continue
        rec = open_records.get(p.key)
        if rec is not None and p.time_us - rec.packets[-1].time_us > gap_us:
            rec = None
        if rec is None:
            rec = FlowRecord(key=p.key, packets=[])
            open_records[p.key] = rec
            records.append(rec)
        rec.packets.append(p)
    return records


# ---------------------------------------------------------------------------
# Text / binary IO


def save_trace(trace: Trace, path: str):
    with open(path, "w") as fp:
        fp.write("# matchplane-trace v1\n")
        if trace.n_classes is not None:
            fp.write(f"# classes {trace.n_classes}\n")
        for p in trace.packets:
            k = p.key
            line = f"{p.time_us} {k.src} {k.dst} {k.sport} {k.dport} {k.proto} {p.length}"
            if p.label is not None:
                line += f" {p.label}"
            fp.write(line + "\n")


def load_trace(path: str) -> Trace:
    packets: list[PacketEvent] = []
    n_classes = None
    skipped = 0
    with open(path) as fp:
        for line in fp:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 2 and parts[0] == "classes":
                    n_classes = int(parts[1])
                continue
            parts = line.split()
            if len(parts) not in (7, 8):
                skipped += 1
                continue
            try:
                packets.append(
                    PacketEvent(
                        time_us=int(parts[0]),
                        key=FlowKey(parts[1], parts[2], int(parts[3]), int(parts[4]), int(parts[5])),
                        length=int(parts[6]),
                        label=int(parts[7]) if len(parts) == 8 else None,
                    )
                )
            except (ValueError, IndexError):
                skipped += 1
    trace = Trace(packets=packets, n_classes=n_classes)
    trace.skipped_records = skipped
    return trace


def save_trace_binary(trace: Trace, path: str):
    from .flows import _ip_bytes

    with open(path, "wb") as fp:
        fp.write(_BIN_MAGIC)
        fp.write(struct.pack("<Ii", len(trace.packets), trace.n_classes if trace.n_classes is not None else -1))
        for p in trace.packets:
            k = p.key
            fp.write(
                _BIN_RECORD.pack(
                    p.time_us,
                    _ip_bytes(k.src),
                    _ip_bytes(k.dst),
                    k.sport,
                    k.dport,
                    k.proto,
                    p.length,
                    p.label if p.label is not None else -1,
                )
            )


def load_trace_binary(path: str) -> Trace:
    with open(path, "rb") as fp:
        magic = fp.read(len(_BIN_MAGIC))
        if magic != _BIN_MAGIC:
            raise ValueError("not a matchplane binary trace")
        count, n_classes = struct.unpack("<Ii", fp.read(8))
        packets = []
        for _ in range(count):
            t, src, dst, sport, dport, proto, length, label = _BIN_RECORD.unpack(
                fp.read(_BIN_RECORD.size)
            )
            packets.append(
                PacketEvent(
                    time_us=t,
                    key=FlowKey(
                        ".".join(str(b) for b in src),
                        ".".join(str(b) for b in dst),
                        sport,
                        dport,
                        proto,
                    ),
                    length=length,
                    label=label if label >= 0 else None,
                )
            )
    return Trace(packets=packets, n_classes=n_classes if n_classes >= 0 else None)


# ---------------------------------------------------------------------------
# Synthetic traces


@dataclass(frozen=True)
class ClassSpec:
    """Generative parameters for one traffic class."""

    length_mean: float
    length_std: float
    ipd_mean_us: float
    ipd_std_us: float
    proto: int = 6
    flow_len_min: int = 8
    flow_len_max: int = 40

    def signature(self):
        return (self.length_mean, self.length_std, self.ipd_mean_us, self.ipd_std_us, self.proto)


def synth_trace(
    class_specs: Sequence[ClassSpec],
    n_flows: int,
    seed: int,
    spacing_us: int = 1000,
) -> Trace:
    """Reproducible labeled trace; flow i starts at i * spacing_us.

    Classes are assigned round robin so every class appears.  Identical
    class specs are allowed but flagged on the returned trace.
    """
    if len(class_specs) < 2:
        raise ValueError("need at least two classes")
    degenerate = len({cs.signature() for cs in class_specs}) < len(class_specs)
    rng = np.random.default_rng(seed)
    packets: list[PacketEvent] = []
    for i in range(n_flows):
        label = i % len(class_specs)
        cs = class_specs[label]
        key = FlowKey(
            src=f"10.{(i >> 16) & 255}.{(i >> 8) & 255}.{i & 255}",
            dst=f"192.168.{label}.1",
            sport=1024 + (i % 60000),
            dport=443,
            proto=cs.proto,
        )
        n_pkts = int(rng.integers(cs.flow_len_min, cs.flow_len_max + 1))
        lengths = np.clip(
            rng.normal(cs.length_mean, cs.length_std, n_pkts), 40, 1500
        ).astype(int)
        ipds = np.clip(
            rng.normal(cs.ipd_mean_us, cs.ipd_std_us, n_pkts - 1), 1, None
        ).astype(int) if n_pkts > 1 else np.array([], dtype=int)
        t = i * spacing_us
        for j in range(n_pkts):
            if j > 0:
                t += int(ipds[j - 1])
            packets.append(
                PacketEvent(time_us=t, key=key, length=int(lengths[j]), label=label)
            )
    packets.sort(key=lambda p: (p.time_us, p.key))
    return Trace(packets=packets, n_classes=len(class_specs), degenerate_classes=degenerate)


def two_class_demo_specs() -> list[ClassSpec]:
    """Well-separated pair used across demos and the end-to-end tests."""
    return [
        ClassSpec(length_mean=120, length_std=25, ipd_mean_us=2_000, ipd_std_us=500, proto=6),
        ClassSpec(length_mean=1100, length_std=120, ipd_mean_us=40_000, ipd_std_us=8_000, proto=17),
    ]


# ---------------------------------------------------------------------------
# Load-controlled replay


def replay(
    trace: Trace,
    load_fps: float,
    total_flows: int | None = None,
    gap_us: int = DEFAULT_GAP_US,
    remap_ports: bool = True,
) -> Trace:
    """Re-release the trace's flows at a target load (new flows per second).

    Flow start times are uniformly spaced at 1/load seconds; intra-flow
    IPDs are preserved.  When ``total_flows`` exceeds the trace's flow
    count the flows loop, remapping source ports per repetition (off via
    ``remap_ports``) so repeats do not alias live flow slots.
    ``load_fps=math.inf`` starts every flow at t=0.
    """
    if not load_fps > 0:
        raise ValueError("load must be positive")
    records = split_flows(trace.packets, gap_us=gap_us)
    if not records:
        return Trace(packets=[], n_classes=trace.n_classes)
    want = total_flows if total_flows is not None else len(records)
    spacing = 0.0 if math.isinf(load_fps) else 1e6 / load_fps
    out: list[PacketEvent] = []
    for i in range(want):
        rec = records[i % len(records)]
        rep = i // len(records)
        key = rec.key
        if rep and remap_ports:
            key = key._replace(sport=(key.sport + rep * 13) % 65536)
        start = int(round(i * spacing))
        base = rec.packets[0].time_us
        for seq, p in enumerate(rec.packets):
            out.append(
                PacketEvent(
                    time_us=start + (p.time_us - base),
                    key=key,
                    length=p.length,
                    label=p.label,
                    raw=p.raw,
                )
            )
    out.sort(key=lambda p: (p.time_us, p.key))
    return Trace(packets=out, n_classes=trace.n_classes)
