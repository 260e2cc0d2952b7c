"""Discrete-event replica of the off-switch escalated-analysis pipeline.

Four sequential engines connected by bounded FIFO queues, all driven by
one virtual clock (microseconds, integer):

    parser  -> pool   (per-flow prefixes of the first 5 packets seen)
    parser  -> buffer (every packet)
    pool    -> analyzer (pull: batches of fresh flows, padded to 5x320 B)
    analyzer-> buffer (per-flow results after the configured batch latency)

The buffer releases a packet immediately when its flow already has a
result (intermediate or final), otherwise parks it in the flow's egress
queue until a result arrives.  A flow with fewer than five collected
prefixes gets an intermediate result and is re-batched when new prefixes
arrive; five prefixes (or the classifier saying so) make a result final.

Events are ordered by (time, engine rank, sequence number) with ranks
parser < pool < analyzer < buffer, so identical inputs and configuration
replay to identical logs.  Queue overflow either blocks the producer
(default) or drops with a count.
"""

from __future__ import annotations

import heapq
import struct
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .flows import murmur3_32

PREFIX_BYTES = 320
POOL_PACKETS = 5

_RANK = {"parser": 0, "pool": 1, "analyzer": 2, "buffer": 3}

_ESC_MAGIC = b"MPESC1\n"
_ESC_RECORD = struct.Struct("<4s4sHHBqI320s")


@dataclass(frozen=True)
class EscalatedPacket:
    key: tuple  # (src, dst, sport, dport, proto)
    time_us: int
    seq: int
    prefix: bytes

    def __post_init__(self):
        if len(self.prefix) != PREFIX_BYTES:
            raise ValueError(f"prefix must be exactly {PREFIX_BYTES} bytes after padding")


def make_packet(key: tuple, time_us: int, seq: int, raw: bytes = b"") -> EscalatedPacket:
    return EscalatedPacket(key, time_us, seq, raw[:PREFIX_BYTES].ljust(PREFIX_BYTES, b"\x00"))


@dataclass
class ImisConfig:
    batch_size: int = 16
    batch_latency_us: int = 1000
    latency_by_batch: dict[int, int] | None = None  # overrides the constant per size
    parser_service_us: int = 0
    pool_service_us: int = 0
    buffer_service_us: int = 0
    cap_parser_pool: int = 1 << 16
    cap_parser_buffer: int = 1 << 16
    cap_results: int = 1 << 16
    overflow: str = "block"  # or "drop"
    pool_policy: str = "oldest"  # or "freshest"

    def latency_for(self, batch: int) -> int:
        if self.latency_by_batch and batch in self.latency_by_batch:
            return self.latency_by_batch[batch]
        return self.batch_latency_us

    def validate(self):
        for cap in (self.cap_parser_pool, self.cap_parser_buffer, self.cap_results):
            if cap < 1:
                raise ValueError("queue capacities must be >= 1")
        if self.overflow not in ("block", "drop"):
            raise ValueError(f"unknown overflow policy {self.overflow!r}")
        if self.pool_policy not in ("oldest", "freshest"):
            raise ValueError(f"unknown pool policy {self.pool_policy!r}")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


def default_classifier(n_classes: int, seed: int = 7) -> Callable:
    """Deterministic hash-based stand-in for the off-switch model."""

    def classify(key: tuple, data: bytes) -> tuple[int, bool]:
        enc = ("%s|%s|%d|%d|%d" % key).encode() + data[:16]
        return murmur3_32(enc, seed) % n_classes, True

    return classify


@dataclass(frozen=True)
class ReleasedPacket:
    key: tuple
    seq: int
    arrival_us: int
    release_us: int
    cls: int | None
    waited: bool
    parse_us: int | None = None
    pool_us: int | None = None  # own prefix ingested by the pool engine
    dispatch_us: int | None = None  # batch producing the releasing result
    result_us: int | None = None


@dataclass
class ImisLog:
    releases: list[ReleasedPacket]
    drops: dict[str, int]
    batches: list[dict]

    def by_flow(self) -> dict[tuple, list[ReleasedPacket]]:
        flows: dict[tuple, list[ReleasedPacket]] = {}
        for r in self.releases:
            flows.setdefault(r.key, []).append(r)
        return flows


class _Queue:
    def __init__(self, cap: int):
        self.cap = cap
        self.items: deque = deque()

    def full(self) -> bool:
        return len(self.items) >= self.cap

    def push(self, item):
        self.items.append(item)

    def pop(self):
        return self.items.popleft()

    def __len__(self):
        return len(self.items)


class _PoolEntry:
    __slots__ = ("key", "prefixes", "fresh_ts", "ingest_times", "last_batched", "final", "order")

    def __init__(self, key, order):
        self.key = key
        self.prefixes: list[bytes] = []
        self.fresh_ts = 0
        self.ingest_times: list[int] = []
        self.last_batched = 0
        self.final = False
        self.order = order


def run_pipeline(
    packets: Sequence[EscalatedPacket],
    classifier: Callable,
    cfg: ImisConfig | None = None,
) -> ImisLog:
    """Simulate the pipeline over a time-ordered escalated-packet stream."""
    cfg = cfg or ImisConfig()
    cfg.validate()
    for a, b in zip(packets, packets[1:]):
        if b.time_us < a.time_us:
            raise ValueError("escalated stream must be time-ordered")

    heap: list[tuple] = []
    seq_counter = [0]

    def schedule(t: int, engine: str, kind: str, data=None):
        seq_counter[0] += 1
        heapq.heappush(heap, (t, _RANK[engine], seq_counter[0], kind, data))

    q_pool = _Queue(cfg.cap_parser_pool)
    q_buffer = _Queue(cfg.cap_parser_buffer)
    q_results = _Queue(cfg.cap_results)
    drops = {"prefixes": 0, "packets": 0, "results": 0}

    # parser ---------------------------------------------------------------
    parser_idx = [0]
    parser_free = [0]
    parser_blocked = [False]
    parser_counts: dict[tuple, int] = {}

    # pool -----------------------------------------------------------------
    pool_free = [0]
    pool_scheduled = [False]
    pool_entries: dict[tuple, _PoolEntry] = {}
    pool_order = [0]

    # analyzer ---------------------------------------------------------------
    analyzer_busy = [False]
    batches: list[dict] = []

    # buffer -----------------------------------------------------------------
    buffer_free = [0]
    buffer_scheduled = [False]
    flow_result: dict[tuple, dict] = {}
    waiting: dict[tuple, deque] = {}
    releases: list[ReleasedPacket] = []

    def try_parser(t: int):
        if parser_idx[0] >= len(packets):
            return
        p = packets[parser_idx[0]]
        start = max(t, p.time_us, parser_free[0])
        if start > t:
            schedule(start, "parser", "parser-run")
            return
        needs_prefix = parser_counts.get(p.key, 0) < POOL_PACKETS
        if needs_prefix and q_pool.full():
            if cfg.overflow == "block":
                parser_blocked[0] = True
                return
            drops["prefixes"] += 1
            needs_prefix = False
        if q_buffer.full():
            if cfg.overflow == "block":
                parser_blocked[0] = True
                return
            drops["packets"] += 1
            parser_idx[0] += 1
            parser_free[0] = t + cfg.parser_service_us
            schedule(parser_free[0], "parser", "parser-run")
            return
        done = t + cfg.parser_service_us
        ordinal = None
        if needs_prefix:
            ordinal = parser_counts.get(p.key, 0) + 1
            parser_counts[p.key] = ordinal
            q_pool.push((done, p))
            wake_pool(done)
        q_buffer.push((done, "packet", p, done, ordinal))
        wake_buffer(done)
        parser_idx[0] += 1
        parser_free[0] = done
        schedule(done, "parser", "parser-run")

    def wake_parser(t: int):
        if parser_blocked[0]:
            parser_blocked[0] = False
            schedule(t, "parser", "parser-run")

    def wake_pool(t: int):
        if not pool_scheduled[0]:
            pool_scheduled[0] = True
            schedule(max(t, pool_free[0]), "pool", "pool-run")

    def pool_run(t: int):
        pool_scheduled[0] = False
        if not q_pool.items:
            return
        ready, p = q_pool.items[0]
        start = max(t, ready, pool_free[0])
        if start > t:
            pool_scheduled[0] = True
            schedule(start, "pool", "pool-run")
            return
        q_pool.pop()
        wake_parser(t)
        done = t + cfg.pool_service_us
        entry = pool_entries.get(p.key)
        if entry is None:
            pool_order[0] += 1
            entry = _PoolEntry(p.key, pool_order[0])
            pool_entries[p.key] = entry
        entry.prefixes.append(p.prefix)
        entry.fresh_ts = done
        entry.ingest_times.append(done)
        pool_free[0] = done
        if done > t:
            schedule(done, "pool", "pool-ingested")
        else:
            pool_ingested(t)
        if q_pool.items:
            wake_pool(done)

    def pool_ingested(t: int):
        wake_analyzer(t)

    def eligible_flows() -> list[_PoolEntry]:
        flows = [
            e
            for e in pool_entries.values()
            if not e.final and len(e.prefixes) > e.last_batched
        ]
        if cfg.pool_policy == "oldest":
            flows.sort(key=lambda e: (e.fresh_ts, e.order))
        else:
            flows.sort(key=lambda e: (-e.fresh_ts, e.order))
        return flows

    def wake_analyzer(t: int):
        if not analyzer_busy[0]:
            schedule(t, "analyzer", "analyzer-try")

    def analyzer_try(t: int):
        if analyzer_busy[0]:
            return
        flows = eligible_flows()[: cfg.batch_size]
        if not flows:
            return
        space = q_results.cap - len(q_results.items)
        if cfg.overflow == "block" and space < len(flows):
            return  # retried when the buffer pops a result
        batch = []
        for e in flows:
            count = len(e.prefixes)
            data = b"".join(e.prefixes) + b"\x00" * (PREFIX_BYTES * (POOL_PACKETS - count))
            batch.append((e, count, data, e.ingest_times[-1]))
            e.last_batched = count
        latency = cfg.latency_for(len(batch))
        done = t + latency
        analyzer_busy[0] = True
        batches.append(
            {
                "dispatch_us": t,
                "done_us": done,
                "size": len(batch),
                "flows": [e.key for e, _, _, _ in batch],
            }
        )
        schedule(done, "analyzer", "analyzer-done", (t, batch))

    def analyzer_done(t: int, payload):
        dispatched, batch = payload
        analyzer_busy[0] = False
        for e, count, data, _ in batch:
            cls, clf_final = classifier(e.key, data)
            # fewer than 5 collected packets -> intermediate regardless
            final = count >= POOL_PACKETS and clf_final
            e.final = final
            if q_results.full() and cfg.overflow == "drop":
                drops["results"] += 1
                continue
            q_results.push((t, "result", (e.key, cls, final, dispatched, t), t))
            wake_buffer(t)
        wake_analyzer(t)

    def wake_buffer(t: int):
        if not buffer_scheduled[0]:
            buffer_scheduled[0] = True
            schedule(max(t, buffer_free[0]), "buffer", "buffer-run")

    def release(p: EscalatedPacket, t: int, waited: bool, parse_us: int, ordinal):
        info = flow_result.get(p.key)
        cls = info["cls"] if info else None
        releases.append(
            ReleasedPacket(
                key=p.key,
                seq=p.seq,
                arrival_us=p.time_us,
                release_us=t,
                cls=cls,
                waited=waited,
                parse_us=parse_us,
                pool_us=_own_pool_time(p, ordinal),
                dispatch_us=info["dispatch_us"] if info else None,
                result_us=info["result_us"] if info else None,
            )
        )

    def _own_pool_time(p: EscalatedPacket, ordinal):
        if ordinal is None:
            return None
        e = pool_entries.get(p.key)
        if e is None:
            return None
        idx = ordinal - 1
        if 0 <= idx < len(e.ingest_times):
            return e.ingest_times[idx]
        return None

    def buffer_run(t: int):
        buffer_scheduled[0] = False
        # merge the two inputs deterministically by (ready time, fifo order)
        candidates = []
        if q_buffer.items:
            candidates.append(("packets", q_buffer.items[0][0]))
        if q_results.items:
            candidates.append(("results", q_results.items[0][0]))
        if not candidates:
            return
        which = min(candidates, key=lambda c: (c[1], c[0] == "packets"))[0]
        q = q_buffer if which == "packets" else q_results
        ready = q.items[0][0]
        start = max(t, ready, buffer_free[0])
        if start > t:
            wake_buffer(start)
            return
        item = q.pop()
        if which == "packets":
            wake_parser(t)
        else:
            wake_analyzer(t)
        done = t + cfg.buffer_service_us
        buffer_free[0] = done
        if which == "packets":
            _, _, p, parse_us, ordinal = item
            if p.key in flow_result:
                release(p, done, waited=False, parse_us=parse_us, ordinal=ordinal)
            else:
                waiting.setdefault(p.key, deque()).append((p, parse_us, ordinal))
        else:
            _, _, (key, cls, final, dispatched, result_t), _ = item
            prev = flow_result.get(key)
            if prev is None or not prev["final"]:
                flow_result[key] = {
                    "cls": cls,
                    "final": final,
                    "dispatch_us": dispatched,
                    "result_us": result_t,
                }
            for p, parse_us, ordinal in waiting.pop(key, ()):
                release(p, done, waited=True, parse_us=parse_us, ordinal=ordinal)
        if q_buffer.items or q_results.items:
            wake_buffer(done)

    handlers = {
        "parser-run": lambda t, d: try_parser(t),
        "pool-run": lambda t, d: pool_run(t),
        "pool-ingested": lambda t, d: pool_ingested(t),
        "analyzer-try": lambda t, d: analyzer_try(t),
        "analyzer-done": analyzer_done,
        "buffer-run": lambda t, d: buffer_run(t),
    }

    if packets:
        schedule(packets[0].time_us, "parser", "parser-run")
    while heap:
        t, _, _, kind, data = heapq.heappop(heap)
        handlers[kind](t, data)

    # Flows that never received any result (possible only with drops):
    # flush their waiting packets at the end with no class.
    if waiting:
        end = max((r.release_us for r in releases), default=0)
        for key, items in sorted(waiting.items()):
            for p, parse_us, _ in items:
                releases.append(
                    ReleasedPacket(
                        key=key,
                        seq=p.seq,
                        arrival_us=p.time_us,
                        release_us=end,
                        cls=None,
                        waited=True,
                        parse_us=parse_us,
                    )
                )
        waiting.clear()

    return ImisLog(releases=releases, drops=drops, batches=batches)


# ---------------------------------------------------------------------------
# latency accounting


PHASES = ("parse_to_pool", "pool_to_analyze", "analyze_to_result", "result_to_release")


def latency_report(log: ImisLog) -> dict:
    """Per-phase latency distribution over full-pipeline packets.

    Included packets carried a prefix into the pool and waited for their
    flow's result.  Phase boundaries are clamped nondecreasing, so phases
    are nonnegative and sum exactly to the end-to-end latency.
    """
    if not log.releases:
        raise ValueError("empty release log")
    rows = []
    for r in log.releases:
        if not r.waited or r.pool_us is None or r.dispatch_us is None:
            continue
        m1 = r.parse_us
        m2 = max(m1, r.pool_us)
        m3 = max(m2, r.dispatch_us)
        m4 = max(m3, r.result_us)
        m5 = max(m4, r.release_us)
        rows.append((m2 - m1, m3 - m2, m4 - m3, m5 - m4))
    report: dict = {"packets": len(rows)}
    percentiles = (50, 90, 99, 100)
    for i, name in enumerate(PHASES):
        vals = sorted(row[i] for row in rows)
        report[name] = {f"p{p}": _percentile(vals, p) for p in percentiles}
    e2e = sorted(sum(row) for row in rows)
    report["end_to_end"] = {f"p{p}": _percentile(e2e, p) for p in percentiles}
    return report


def _percentile(sorted_vals: list[int], pct: int) -> int:
    if not sorted_vals:
        return 0
    k = max(0, min(len(sorted_vals) - 1, round(pct / 100 * len(sorted_vals)) - 1))
    return sorted_vals[k]


# ---------------------------------------------------------------------------
# escalated-stream file IO


def save_stream(packets: Sequence[EscalatedPacket], path: str):
    from .flows import _ip_bytes

    with open(path, "wb") as fp:
        fp.write(_ESC_MAGIC)
        fp.write(struct.pack("<I", len(packets)))
        for p in packets:
            src, dst, sport, dport, proto = p.key
            fp.write(
                _ESC_RECORD.pack(
                    _ip_bytes(src), _ip_bytes(dst), sport, dport, proto,
                    p.time_us, p.seq, p.prefix,
                )
            )


def load_stream(path: str) -> list[EscalatedPacket]:
    out = []
    with open(path, "rb") as fp:
        if fp.read(len(_ESC_MAGIC)) != _ESC_MAGIC:
            raise ValueError("not a matchplane escalated stream")
        (count,) = struct.unpack("<I", fp.read(4))
        for _ in range(count):
            src, dst, sport, dport, proto, t, seq, prefix = _ESC_RECORD.unpack(
                fp.read(_ESC_RECORD.size)
            )
            key = (
                ".".join(str(b) for b in src),
                ".".join(str(b) for b in dst),
                sport,
                dport,
                proto,
            )
            out.append(EscalatedPacket(key, t, seq, prefix))
    return out
