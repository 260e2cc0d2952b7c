"""Per-flow sliding-window state machine.

Everything after flow lookup in the per-packet path lives here: the two
parallel packet counters, the (S-1)-bin ring buffer of embedding vectors,
accumulation of quantized per-window results into per-class CPR counters,
the argmax + fixed-point confidence check, and the periodic reset.

Counters (hardware realization of the unbounded packet count):

* ctr1 saturates: 1, 2, ..., S, S, S, ...   (window full iff ctr1 == S)
* ctr2 cycles:    0, 1, ..., S-2, 0, ...    (ring bin of the current packet)

The k-th packet of a flow (1-based) stores its ev in bin (k-1) % (S-1);
when the window is full the i-th vector of the window (i = 1..S-1) sits in
bin (ctr2 + i - 1) % (S-1) and the current packet provides ev_S.  Reads are
modeled as one parallel access of all bins followed by a reorder keyed on
ctr2, matching the metadata-dispatch realization.

The confidence check avoids division: a packet is ambiguous iff

    cpr[class] < t_conf_fx[class] * wincnt

where t_conf_fx carries prob_bits fractional bits (a real threshold T in
[0, 1] is stored as round(T * 2^prob_bits)), evaluated as a subtraction
followed by a sign check.

All transitions are pure: they return new state objects, so flows can be
sharded across tasks without locks.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

EV_CELL_BITS = 8  # ring cells are byte-wide regardless of ev_width <= 8


@dataclass(frozen=True)
class PacketCounters:
    ctr1: int
    ctr2: int

    @classmethod
    def fresh(cls, S: int) -> "PacketCounters":
        _check_s(S)
        # First advance lands on (1, 0).
        return cls(ctr1=0, ctr2=S - 2)

    def check(self, S: int):
        if not 0 <= self.ctr1 <= S:
            raise ValueError(f"ctr1={self.ctr1} outside [0, {S}]")
        if not 0 <= self.ctr2 <= S - 2:
            raise ValueError(f"ctr2={self.ctr2} outside [0, {S - 2}]")


def _check_s(S: int):
    if S < 2:
        raise ValueError(f"window size must be >= 2, got {S}")


def advance_counters(c: PacketCounters, S: int) -> PacketCounters:
    _check_s(S)
    c.check(S)
    return PacketCounters(ctr1=min(c.ctr1 + 1, S), ctr2=(c.ctr2 + 1) % (S - 1))


@dataclass
class RingBuffer:
    # On hardware the bins are independent register arrays spread over
    # several stages (at most 4 register arrays fit one stage); here they
    # are one list and that placement constraint is not enforced.
    bins: list[int]

    @classmethod
    def fresh(cls, S: int) -> "RingBuffer":
        _check_s(S)
        return cls(bins=[0] * (S - 1))

    def check(self, S: int):
        if len(self.bins) != S - 1:
            raise ValueError(f"ring must have {S - 1} bins, has {len(self.bins)}")
        for v in self.bins:
            if not 0 <= v < (1 << EV_CELL_BITS):
                raise ValueError(f"ring cell value {v} exceeds {EV_CELL_BITS} bits")


def store_ev(rb: RingBuffer, c: PacketCounters, ev: int, S: int):
    """Write the current packet's ev into its ring bin (pre-window path)."""
    rb.check(S)
    rb.bins[c.ctr2] = ev


def store_and_gather(rb: RingBuffer, c: PacketCounters, ev: int, S: int) -> list[int]:
    """Full-window path: return ev_1..ev_S in arrival order, then store.

    The current packet's ev overwrites the bin of the packet that just fell
    out of scope (which is exactly the bin ctr2 points at).
    """
    _check_s(S)
    c.check(S)
    rb.check(S)
    if c.ctr1 != S:
        raise ValueError(f"window not full: ctr1={c.ctr1} < S={S}")
    snapshot = list(rb.bins)  # one parallel access
    order = [(c.ctr2 + i) % (S - 1) for i in range(S - 1)]  # reorder keyed on ctr2
    window = [snapshot[b] for b in order]
    window.append(ev)
    rb.bins[c.ctr2] = ev
    return window


@dataclass(frozen=True)
class CprState:
    cpr: tuple[int, ...]
    wincnt: int
    esccnt: int
    esc_flag: bool

    @classmethod
    def fresh(cls, n_classes: int) -> "CprState":
        return cls(cpr=tuple([0] * n_classes), wincnt=0, esccnt=0, esc_flag=False)


@dataclass(frozen=True)
class Decision:
    cls: int
    ambiguous: bool
    escalation_triggered: bool


def accumulate_and_decide(
    st: CprState,
    pr: Sequence[int],
    *,
    t_conf_fx: Sequence[int],
    t_esc: int,
    prob_bits: int,
    reset_period: int,
    argmax_chain=None,
    cross_check: bool = False,
    tie_order: Sequence[int] | None = None,
) -> tuple[Decision, CprState]:
    """One full-window step: CPR += PR, argmax, confidence, escalation.

    ``argmax_chain`` (an ArgmaxChain over n_classes values of cpr_width
    bits) performs the class selection; ``cross_check`` additionally runs
    the plain software argmax and asserts agreement.  Without a chain the
    software argmax with the same tie order is used directly.
    """
    n = len(st.cpr)
    if len(pr) != n:
        raise ValueError(f"PR has {len(pr)} classes, state has {n}")
    top = (1 << prob_bits) - 1
    for q in pr:
        if not 0 <= q <= top:
            raise ValueError(f"PR component {q} exceeds {prob_bits} bits")
    cpr = tuple(a + b for a, b in zip(st.cpr, pr))
    wincnt = st.wincnt + 1
    limit = top * reset_period
    width = (limit).bit_length() if limit else 1
    assert all(v <= limit for v in cpr), (
        f"CPR overflow: {cpr} exceeds {limit} (= (2^{prob_bits}-1) * {reset_period}); "
        f"declared width {width} bits is violated"
    )

    if tie_order is None:
        tie_order = tuple(range(n))
    soft = _software_argmax(cpr, tie_order)
    if argmax_chain is not None:
        cls = argmax_chain.lookup(list(cpr))
        if cross_check and cls != soft:
            raise AssertionError(
                f"ternary argmax chain disagrees with software argmax: "
                f"{cls} != {soft} on CPR={cpr}"
            )
    else:
        cls = soft

    # subtraction + sign check, no division
    ambiguous = cpr[cls] - t_conf_fx[cls] * wincnt < 0
    esccnt = st.esccnt + (1 if ambiguous else 0)
    triggered = (not st.esc_flag) and esccnt >= t_esc
    esc_flag = st.esc_flag or esccnt >= t_esc
    new = CprState(cpr=cpr, wincnt=wincnt, esccnt=esccnt, esc_flag=esc_flag)
    return Decision(cls=cls, ambiguous=ambiguous, escalation_triggered=triggered), new


def _software_argmax(values: Sequence[int], tie_order: Sequence[int]) -> int:
    best = max(values)
    return next(i for i in tie_order if values[i] == best)


def quantized_confidence(cpr_value: int, wincnt: int, prob_bits: int) -> int:
    """floor(CPR[class] / wincnt): the quantized confidence score.

    For integer thresholds t, (conf < t) iff (CPR < t * wincnt), so records
    of this value replay the engine's ambiguity rule exactly.
    """
    if wincnt < 1:
        raise ValueError("confidence needs at least one accumulated window")
    return cpr_value // wincnt


def periodic_reset(st: CprState, pktcnt: int, K: int) -> CprState:
    """Clear cpr + wincnt every K packets; esccnt/esc_flag stay, ring stays."""
    if K < 1:
        raise ValueError(f"reset period must be >= 1, got {K}")
    if pktcnt % K != 0:
        return st
    return replace(st, cpr=tuple([0] * len(st.cpr)), wincnt=0)


def threshold_to_fixed(t_real: float, prob_bits: int) -> int:
    """Real threshold in [0, 1] -> unsigned fixed point, prob_bits fractional."""
    if not 0.0 <= t_real <= 1.0:
        raise ValueError(f"threshold {t_real} outside [0, 1]")
    return round(t_real * (1 << prob_bits))
