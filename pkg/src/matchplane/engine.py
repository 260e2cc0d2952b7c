"""The integrated per-packet analysis driver.

Per packet, in order: flow admission (fallback to the per-packet forest on
collision), escalation-table check (already-escalated flows exit to the
escalated stream), packet count, feature embedding, ring-buffer store,
then either pre-analysis handling (window not yet full) or the full
window: table-chained RNN inference, CPR accumulation, ternary argmax,
fixed-point confidence check, escalation marking, and the periodic reset.

The packet whose decision makes esccnt reach the escalation threshold
keeps its RNN classification; escalated analysis starts with the next
packet of the flow.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import fallback as fb
from . import ternary, window
from .bundle import ModelBundle
from .flows import Fallback, FlowTable
from .trace import PacketEvent, Trace

CATEGORIES = ("escalated", "fallback", "pre_analysis", "rnn")


class EngineError(RuntimeError):
    pass


@dataclass
class EngineConfig:
    n_slots: int = 65536
    timeout_us: int = 256_000
    seed_idx: int = 0x9E3779B9
    seed_tid: int = 0x85EBCA6B
    argmax_fan: int = 3
    cross_check_argmax: bool = False
    use_ternary_argmax: bool = True
    collect_escalated: bool = True
    collect_records: bool = True


@dataclass(frozen=True)
class PacketOutcome:
    """Per-packet decision record; the oracle equivalence compares these."""

    index: int
    category: str
    pred: int | None
    label: int | None
    flow: int | None = None  # fresh-admission ordinal of the owning flow
    ambiguous: bool | None = None
    esc_triggered: bool = False
    reset: bool = False
    wincnt: int = 0
    conf_q: int | None = None


@dataclass(frozen=True)
class EscalatedRecord:
    key: tuple
    time_us: int
    seq: int
    prefix: bytes


@dataclass
class MetricsReport:
    n_classes: int
    counts: dict[str, int]
    flow_counts: dict[str, int]
    precision: list[float]
    recall: list[float]
    f1: list[float]
    macro_f1: float

    def check_partition(self, total: int):
        if sum(self.counts[c] for c in CATEGORIES) != total:
            raise AssertionError(
                f"packet categories do not partition the trace: {self.counts} vs {total}"
            )

    def to_json(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "counts": self.counts,
            "flow_counts": self.flow_counts,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "macro_f1": self.macro_f1,
        }


@dataclass
class RunResult:
    outcomes: list[PacketOutcome]
    report: MetricsReport
    escalated: list[EscalatedRecord] = field(default_factory=list)
    records: list[tuple] = field(default_factory=list)  # (flow, pkt, pred, true, conf)


def macro_f1_scores(pairs: list[tuple[int, int]], n_classes: int):
    """(label, pred) pairs -> per-class precision/recall/f1 and macro-F1.

    Classes with an empty denominator score 0 (zero-division convention).
    """
    tp = [0] * n_classes
    fp = [0] * n_classes
    fn = [0] * n_classes
    for label, pred in pairs:
        if pred == label:
            tp[label] += 1
        else:
            fp[pred] += 1
            fn[label] += 1
    precision, recall, f1 = [], [], []
    for c in range(n_classes):
        p = tp[c] / (tp[c] + fp[c]) if tp[c] + fp[c] else 0.0
        r = tp[c] / (tp[c] + fn[c]) if tp[c] + fn[c] else 0.0
        precision.append(p)
        recall.append(r)
        f1.append(2 * p * r / (p + r) if p + r else 0.0)
    macro = sum(f1) / n_classes if n_classes else 0.0
    return precision, recall, f1, macro


def _prefix_320(p: PacketEvent) -> bytes:
    raw = p.raw or b""
    return raw[:320].ljust(320, b"\x00")


def run_integrated(bundle: ModelBundle, trace: Trace, cfg: EngineConfig | None = None) -> RunResult:
    cfg = cfg or EngineConfig()
    if bundle.tables is None:
        raise EngineError("bundle has no compiled tables")
    ft = FlowTable(
        n_slots=cfg.n_slots,
        timeout_us=cfg.timeout_us,
        seed_idx=cfg.seed_idx,
        seed_tid=cfg.seed_tid,
        S=bundle.S,
        n_classes=bundle.n_classes,
    )
    chain = None
    if cfg.use_ternary_argmax:
        chain = ternary.split_argmax(
            bundle.n_classes, bundle.cpr_width, max(cfg.argmax_fan, 2), bundle.tie_order
        )
    tree = bundle.fallback_tree or fb.constant_model(bundle.n_classes, 0)

    outcomes: list[PacketOutcome] = []
    escalated: list[EscalatedRecord] = []
    records: list[tuple] = []
    flow_ordinals: dict[int, int] = {}  # slot idx -> ordinal of current occupant
    esc_seq: dict[int, int] = {}
    next_flow = 0
    fresh_admissions = 0
    escalated_flows: set[int] = set()
    fallback_packets = 0

    for i, p in enumerate(trace.packets):
        try:
            res = ft.admit(p.key, p.time_us)
            if isinstance(res, Fallback):
                pred = fb.infer_packet(tree, _packet_features(p))
                outcomes.append(
                    PacketOutcome(index=i, category="fallback", pred=pred, label=p.label)
                )
                fallback_packets += 1
                continue
            slot, fresh = res.slot, res.fresh
            if fresh:
                flow_ordinals[res.idx] = next_flow
                esc_seq.pop(res.idx, None)
                next_flow += 1
                fresh_admissions += 1
            flow = flow_ordinals[res.idx]

            if slot.cpr_state.esc_flag:
                seq = esc_seq.get(res.idx, 0) + 1
                esc_seq[res.idx] = seq
                if cfg.collect_escalated:
                    escalated.append(
                        EscalatedRecord(
                            key=tuple(p.key), time_us=p.time_us, seq=seq, prefix=_prefix_320(p)
                        )
                    )
                escalated_flows.add(flow)
                outcomes.append(
                    PacketOutcome(index=i, category="escalated", pred=None, label=p.label, flow=flow)
                )
                continue

            slot.pktcnt += 1
            ipd = ft.ipd_of(slot, p.time_us)
            ev = bundle.embed(p.length, ipd)
            slot.counters = window.advance_counters(slot.counters, bundle.S)

            if slot.counters.ctr1 < bundle.S:
                window.store_ev(slot.ring, slot.counters, ev, bundle.S)
                pred = fb.infer_packet(tree, _packet_features(p))
                outcomes.append(
                    PacketOutcome(
                        index=i, category="pre_analysis", pred=pred, label=p.label, flow=flow
                    )
                )
                continue

            evs = window.store_and_gather(slot.ring, slot.counters, ev, bundle.S)
            pr = bundle.forward_window(evs)
            decision, st = window.accumulate_and_decide(
                slot.cpr_state,
                pr,
                t_conf_fx=bundle.t_conf_fx,
                t_esc=bundle.t_esc,
                prob_bits=bundle.prob_bits,
                reset_period=bundle.reset_period,
                argmax_chain=chain,
                cross_check=cfg.cross_check_argmax,
                tie_order=bundle.tie_order,
            )
            conf_q = window.quantized_confidence(st.cpr[decision.cls], st.wincnt, bundle.prob_bits)
            wincnt = st.wincnt
            after = window.periodic_reset(st, slot.pktcnt, bundle.reset_period)
            slot.cpr_state = after
            if decision.escalation_triggered:
                escalated_flows.add(flow)
            outcomes.append(
                PacketOutcome(
                    index=i,
                    category="rnn",
                    pred=decision.cls,
                    label=p.label,
                    flow=flow,
                    ambiguous=decision.ambiguous,
                    esc_triggered=decision.escalation_triggered,
                    reset=after is not st,
                    wincnt=wincnt,
                    conf_q=conf_q,
                )
            )
            if cfg.collect_records and p.label is not None:
                records.append((flow, i, decision.cls, p.label, conf_q))
        except (ValueError, AssertionError) as e:
            raise EngineError(f"packet #{i} at t={p.time_us}us ({p.key}): {e}") from e

    counts = {c: 0 for c in CATEGORIES}
    pairs = []
    for o in outcomes:
        counts[o.category] += 1
        if o.pred is not None and o.label is not None:
            pairs.append((o.label, o.pred))
    n_classes = bundle.n_classes
    precision, recall, f1, macro = macro_f1_scores(pairs, n_classes)
    report = MetricsReport(
        n_classes=n_classes,
        counts=counts,
        flow_counts={
            "fresh_admissions": fresh_admissions,
            "escalated_flows": len(escalated_flows),
        },
        precision=precision,
        recall=recall,
        f1=f1,
        macro_f1=macro,
    )
    report.check_partition(len(trace.packets))
    return RunResult(outcomes=outcomes, report=report, escalated=escalated, records=records)


def _packet_features(p: PacketEvent) -> dict[str, int]:
    return {"length": p.length, "protocol": p.key.proto}


def apply_imis_results(result: RunResult, flow_class: dict[tuple, int]) -> MetricsReport:
    """Fold off-switch results (five-tuple -> class) into the metrics."""
    pairs = []
    n = result.report.n_classes
    for o in result.outcomes:
        if o.pred is not None and o.label is not None:
            pairs.append((o.label, o.pred))
    for rec, o in zip(result.escalated, (o for o in result.outcomes if o.category == "escalated")):
        cls = flow_class.get(rec.key)
        if cls is not None and o.label is not None:
            pairs.append((o.label, cls))
    precision, recall, f1, macro = macro_f1_scores(pairs, n)
    rep = result.report
    return MetricsReport(
        n_classes=n,
        counts=rep.counts,
        flow_counts=rep.flow_counts,
        precision=precision,
        recall=recall,
        f1=f1,
        macro_f1=macro,
    )
