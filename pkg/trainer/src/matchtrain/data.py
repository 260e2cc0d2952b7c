"""Trace reading and segment slicing.

Reads the engine's text trace format (``time_us src dst sport dport proto
length [label]``), splits flow records at >256 ms idle gaps, and slices
every flow into all possible windows of S consecutive packets; the flow
label labels each segment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import TrainConfig

GAP_US = 256_000


@dataclass(frozen=True)
class Packet:
    time_us: int
    key: tuple
    length: int
    label: int | None


@dataclass
class Flow:
    key: tuple
    packets: list[Packet]

    @property
    def label(self) -> int | None:
        return self.packets[0].label

    def ipds(self) -> list[int]:
        ts = [p.time_us for p in self.packets]
        return [0] + [b - a for a, b in zip(ts, ts[1:])]


def read_trace(path: str) -> list[Packet]:
    packets = []
    with open(path) as fp:
        for line in fp:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) not in (7, 8):
                continue
            packets.append(
                Packet(
                    time_us=int(parts[0]),
                    key=(parts[1], parts[2], int(parts[3]), int(parts[4]), int(parts[5])),
                    length=int(parts[6]),
                    label=int(parts[7]) if len(parts) == 8 else None,
                )
            )
    return packets


def split_flows(packets: list[Packet], gap_us: int = GAP_US) -> list[Flow]:
    open_flows: dict[tuple, Flow] = {}
    flows: list[Flow] = []
    for p in packets:
        if p.key[4] not in (6, 17):
            continue
        f = open_flows.get(p.key)
        if f is not None and p.time_us - f.packets[-1].time_us > gap_us:
            f = None
        if f is None:
            f = Flow(key=p.key, packets=[])
            open_flows[p.key] = f
            flows.append(f)
        f.packets.append(p)
    return flows


@dataclass
class SegmentDataset:
    """All S-windows of all flows, pre-quantized to embedding keys."""

    len_keys: np.ndarray  # (n, S) int64
    ipd_keys: np.ndarray  # (n, S) int64
    labels: np.ndarray  # (n,) int64

    def __len__(self) -> int:
        return len(self.labels)


def slice_segments(flows: list[Flow], cfg: TrainConfig) -> SegmentDataset:
    """Every consecutive S-window becomes one labeled sample.

    Flows shorter than S contribute nothing.  IPDs are per flow (first
    packet 0), exactly as the online engine computes them.
    """
    S = cfg.window_size
    len_rows, ipd_rows, labels = [], [], []
    for flow in flows:
        if flow.label is None:
            raise ValueError("training needs labeled flows")
        n = len(flow.packets)
        if n < S:
            continue
        lk = [cfg.len_key(p.length) for p in flow.packets]
        ik = [cfg.ipd_key(v) for v in flow.ipds()]
        for start in range(n - S + 1):
            len_rows.append(lk[start : start + S])
            ipd_rows.append(ik[start : start + S])
            labels.append(flow.label)
    if not len_rows:
        return SegmentDataset(
            np.zeros((0, S), dtype=np.int64),
            np.zeros((0, S), dtype=np.int64),
            np.zeros(0, dtype=np.int64),
        )
    return SegmentDataset(
        np.array(len_rows, dtype=np.int64),
        np.array(ipd_rows, dtype=np.int64),
        np.array(labels, dtype=np.int64),
    )


def segment_count_oracle(flow_lengths: list[int], S: int) -> int:
    return sum(max(n - S + 1, 0) for n in flow_lengths)


def packet_features(packets: list[Packet]) -> tuple[np.ndarray, np.ndarray]:
    """Per-packet (length, ttl, tos, tcp_offset, protocol) rows + labels."""
    rows, labels = [], []
    for p in packets:
        if p.label is None:
            continue
        rows.append([p.length, 0, 0, 0, p.key[4]])
        labels.append(p.label)
    return np.array(rows, dtype=np.int64), np.array(labels, dtype=np.int64)
