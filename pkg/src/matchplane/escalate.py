"""Confidence records and threshold calibration.

A labeled run of the engine yields one record per full-window decision:
(flow, packet index, predicted class, true class, quantized confidence).
Calibration picks, per class, the largest fixed-point confidence threshold
that sacrifices at most a budgeted fraction of correctly classified
packets, then the smallest escalation count threshold that keeps the
escalated-flow fraction at or below a target when the escalation rule is
replayed over the same records.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .bundle import NEVER_ESCALATE, ModelBundle
from .engine import EngineConfig, run_integrated
from .trace import Trace

INFEASIBLE_SENTINEL = NEVER_ESCALATE


@dataclass(frozen=True)
class ConfidenceRecord:
    flow: int
    pkt: int
    pred: int
    true: int
    conf: int  # quantized: floor(CPR[pred] / wincnt), prob_bits scale


def confidence_trace(bundle: ModelBundle, trace: Trace, cfg: EngineConfig | None = None):
    """Run the engine over a labeled trace and return decision records."""
    if not trace.labeled:
        raise ValueError("confidence_trace needs a fully labeled trace")
    cfg = cfg or EngineConfig()
    cfg.collect_records = True
    result = run_integrated(bundle, trace, cfg)
    return [ConfidenceRecord(*r) for r in result.records]


def save_records(records: Sequence[ConfidenceRecord], path: str):
    with open(path, "w") as fp:
        fp.write("# matchplane-records v1\n")
        fp.write("# flow pkt pred true conf\n")
        for r in records:
            fp.write(f"{r.flow} {r.pkt} {r.pred} {r.true} {r.conf}\n")


def load_records(path: str) -> list[ConfidenceRecord]:
    out = []
    with open(path) as fp:
        for line in fp:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            f, p, pred, true, conf = (int(x) for x in line.split())
            out.append(ConfidenceRecord(f, p, pred, true, conf))
    return out


@dataclass(frozen=True)
class Calibration:
    t_conf_fx: tuple[int, ...]
    t_esc: int
    escalated_fraction: float
    infeasible: bool = False


def calibrate(
    records: Sequence[ConfidenceRecord],
    n_classes: int,
    target_escalation_fraction: float,
    prob_bits: int = 4,
    correct_loss_budget: float = 0.01,
) -> Calibration:
    """Pick (T_conf per class, T_esc) from labeled confidence records.

    T_conf[c] is the largest threshold on the fixed-point grid [0, 2^pb]
    whose would-be-ambiguous fraction among correctly classified class-c
    packets stays within ``correct_loss_budget``.  T_esc is then the
    smallest count whose replayed escalated-flow fraction meets the target.
    """
    if not records:
        raise ValueError("cannot calibrate from an empty record stream")
    if not 0 < target_escalation_fraction <= 1:
        raise ValueError("target escalation fraction must be in (0, 1]")
    grid_top = 1 << prob_bits

    t_conf = []
    for c in range(n_classes):
        confs = sorted(r.conf for r in records if r.true == c and r.pred == c)
        if not confs:
            # Never classified correctly: escalate aggressively.
            t_conf.append(grid_top)
            continue
        best = 0
        for t in range(grid_top + 1):
            below = _count_less_than(confs, t)
            if below / len(confs) <= correct_loss_budget:
                best = t
        t_conf.append(best)

    # Replay the escalation rule: per flow, count ambiguous packets in
    # causal order; a flow escalates when the count reaches T_esc.
    flow_ambiguous: dict[int, int] = {}
    for r in sorted(records, key=lambda r: (r.flow, r.pkt)):
        if r.conf < t_conf[r.pred]:
            flow_ambiguous[r.flow] = flow_ambiguous.get(r.flow, 0) + 1
    n_flows = len({r.flow for r in records})
    counts = sorted(flow_ambiguous.values())

    max_count = counts[-1] if counts else 0
    for t_esc in range(1, max_count + 2):
        escalated = len(counts) - _count_less_than(counts, t_esc)
        fraction = escalated / n_flows
        if fraction <= target_escalation_fraction:
            return Calibration(tuple(t_conf), t_esc, fraction)
    return Calibration(tuple(t_conf), INFEASIBLE_SENTINEL, 1.0, infeasible=True)


def _count_less_than(sorted_values: list[int], threshold: int) -> int:
    import bisect

    return bisect.bisect_left(sorted_values, threshold)


def replay_escalation(
    records: Iterable[ConfidenceRecord], t_conf_fx: Sequence[int], t_esc: int
) -> float:
    """Escalated-flow fraction when thresholds are applied to the records."""
    flows: set[int] = set()
    escalated: set[int] = set()
    counters: dict[int, int] = {}
    for r in sorted(records, key=lambda r: (r.flow, r.pkt)):
        flows.add(r.flow)
        if r.flow in escalated:
            continue
        if r.conf < t_conf_fx[r.pred]:
            counters[r.flow] = counters.get(r.flow, 0) + 1
            if counters[r.flow] >= t_esc:
                escalated.add(r.flow)
    return len(escalated) / len(flows) if flows else 0.0
