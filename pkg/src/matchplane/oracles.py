"""Independent reference implementations used to verify the fast paths.

Nothing here shares code with the implementation it checks: the argmax
oracle is a plain max scan, the window oracle keeps unbounded history, the
forest oracle is a flat rule-list compilation, and the integrated-engine
oracle is a straight-line transcription of the per-packet analysis loop
with real-arithmetic confidence checks and no ring buffer.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import bundle as bundle_mod
from . import fallback as fb
from . import rnn
from .bundle import ModelBundle
from .flows import murmur3_32
from .ternary import TernaryTable
from .trace import Trace

# ---------------------------------------------------------------------------
# argmax


def argmax_oracle(values: Sequence[int], tie_order: Sequence[int]) -> int:
    """Max value, ties resolved by precedence order."""
    best = max(values)
    for i in tie_order:
        if values[i] == best:
            return i
    raise AssertionError("unreachable")


def exhaustive_argmax_check(table: TernaryTable) -> int:
    """Compare the table against the oracle on all 2^(n*m) inputs.

    Returns the number of inputs checked; raises on the first mismatch.
    """
    n, m = table.n, table.m
    space = 1 << (n * m)
    grids = np.indices((1 << m,) * n).reshape(n, -1).T  # (2^(nm), n)
    winners = table.lookup_batch(grids)
    # oracle, vectorized: max then first-in-tie-order equal to max
    vals = grids
    best = vals.max(axis=1)
    expect = np.full(space, -1, dtype=np.int64)
    for i in reversed(table.tie_order):
        expect[vals[:, i] == best] = i
    if not np.array_equal(winners, expect):
        bad = int(np.nonzero(winners != expect)[0][0])
        raise AssertionError(
            f"argmax table (n={n}, m={m}, level={table.level}) wrong on input "
            f"{tuple(int(v) for v in vals[bad])}: table={int(winners[bad])}, "
            f"oracle={int(expect[bad])}"
        )
    return space


# ---------------------------------------------------------------------------
# sliding window


class NaiveWindowOracle:
    """Unbounded history; the window is simply the last S embedding vectors."""

    def __init__(self, S: int):
        self.S = S
        self.history: list[int] = []

    def push(self, ev: int) -> list[int] | None:
        self.history.append(ev)
        if len(self.history) < self.S:
            return None
        return self.history[-self.S :]


def direct_window_forward(
    weights: dict[str, rnn.LayerWeights], evs: Sequence[int], ev_width: int, prob_bits: int
) -> tuple[int, ...]:
    """Run the window through the direct (table-free) layer semantics."""
    h = None
    for ev in evs:
        h = rnn.gru_step_direct(weights["gru"], h, rnn.BitVec(ev_width, ev))
    return rnn.output_probs_direct(weights["output"], h, prob_bits)


def direct_embed(b: ModelBundle, length: int, ipd_us: int) -> int:
    """Feature embedding via direct math on the stored weights."""
    w = b.weights
    len_bits = rnn.binarize(w["len_embed"].mats["E"][b.len_key(length)])
    ipd_bits = rnn.binarize(w["ipd_embed"].mats["E"][b.ipd_key(ipd_us)])
    x = np.concatenate([len_bits.decode(), ipd_bits.decode()])
    fc = w["fc"].mats
    return rnn.binarize(fc["W"] @ x + fc["b"]).value


# ---------------------------------------------------------------------------
# decision forest as a flat rule list


@dataclass(frozen=True)
class Rule:
    lo: tuple[int, ...]
    hi: tuple[int, ...]  # inclusive bounds per feature
    votes: tuple[int, ...]


def rule_list_from_tree(model: fb.TreeModel, tree) -> list[Rule]:
    nf = len(model.features)
    limit = (1 << 31) - 1
    rules: list[Rule] = []

    def walk(idx: int, lo: list[int], hi: list[int]):
        node = tree[idx]
        if isinstance(node, fb.TreeLeaf):
            rules.append(Rule(tuple(lo), tuple(hi), node.votes))
            return
        f, t = node.feature, node.threshold
        lo2, hi2 = list(lo), list(hi)
        hi2[f] = min(hi[f], t)
        walk(node.left, lo, hi2)
        lo3 = list(lo)
        lo3[f] = max(lo[f], t + 1)
        walk(node.right, lo3, hi)

    walk(0, [-limit] * nf, [limit] * nf)
    return rules


def infer_rule_list(model: fb.TreeModel, fields) -> int:
    """Forest inference through per-tree rule lists (first matching rule)."""
    fv = fb.feature_vector(model, fields)
    totals = [0] * model.n_classes
    for tree in model.trees:
        for rule in rule_list_from_tree(model, tree):
            if all(l <= v <= h for v, l, h in zip(fv, rule.lo, rule.hi)):
                for c, x in enumerate(rule.votes):
                    totals[c] += x
                break
        else:
            raise AssertionError("rule list is not total")
    return totals.index(max(totals))


# ---------------------------------------------------------------------------
# straight-line reference of the integrated analysis loop


@dataclass(frozen=True)
class RefOutcome:
    category: str
    pred: int | None
    ambiguous: bool | None
    esc_triggered: bool
    reset: bool


def algorithm1_reference(b: ModelBundle, trace: Trace, cfg) -> list[RefOutcome]:
    """Dict-based, ring-free, division-based transcription of the loop.

    Uses the direct layer math on the bundle's weights (tables untouched),
    unbounded per-flow ev history sliced to the last S, a real-valued
    confidence comparison, and the plain argmax oracle.
    """
    if b.weights is None:
        raise ValueError("reference needs the bundle's full-precision weights")
    tree = b.fallback_tree or fb.constant_model(b.n_classes, 0)
    pb = b.prob_bits
    slots: dict[int, dict] = {}
    out: list[RefOutcome] = []
    for p in trace.packets:
        enc = p.key.encode()
        idx = murmur3_32(enc, cfg.seed_idx) % cfg.n_slots
        tid = murmur3_32(enc, cfg.seed_tid)
        st = slots.get(idx)
        now = p.time_us
        if st is None or now - st["last_ts"] >= cfg.timeout_us:
            st = {
                "tid": tid,
                "last_ts": now,
                "prev_ts": None,
                "pktcnt": 0,
                "history": [],
                "cpr": [0] * b.n_classes,
                "wincnt": 0,
                "esccnt": 0,
                "esc": False,
            }
            slots[idx] = st
        elif st["tid"] == tid:
            st["prev_ts"] = st["last_ts"]
            st["last_ts"] = now
        else:
            pred = infer_rule_list(tree, {"length": p.length, "protocol": p.key.proto})
            out.append(RefOutcome("fallback", pred, None, False, False))
            continue
        if st["esc"]:
            out.append(RefOutcome("escalated", None, None, False, False))
            continue
        st["pktcnt"] += 1
        ipd = 0 if st["prev_ts"] is None else max(now - st["prev_ts"], 0)
        ev = direct_embed(b, p.length, ipd)
        st["history"].append(ev)
        if st["pktcnt"] < b.S:
            pred = infer_rule_list(tree, {"length": p.length, "protocol": p.key.proto})
            out.append(RefOutcome("pre_analysis", pred, None, False, False))
            continue
        evs = st["history"][-b.S :]
        pr = direct_window_forward(b.weights, evs, b.ev_width, pb)
        st["cpr"] = [a + q for a, q in zip(st["cpr"], pr)]
        st["wincnt"] += 1
        cls = argmax_oracle(st["cpr"], b.tie_order)
        # real arithmetic: confidence vs threshold, thresholds exactly on grid
        ambiguous = st["cpr"][cls] / st["wincnt"] < b.t_conf_fx[cls]
        if ambiguous:
            st["esccnt"] += 1
        triggered = (not st["esc"]) and st["esccnt"] >= b.t_esc
        st["esc"] = st["esc"] or st["esccnt"] >= b.t_esc
        reset = st["pktcnt"] % b.reset_period == 0
        if reset:
            st["cpr"] = [0] * b.n_classes
            st["wincnt"] = 0
        out.append(RefOutcome("rnn", cls, ambiguous, triggered, reset))
    return out


# ---------------------------------------------------------------------------
# bundle verification suite (the CLI `verify` command)


def verify_bundle(b: ModelBundle, trials: int = 512, seed: int = 0) -> list[tuple[str, bool, str]]:
    """Oracle checks on one bundle; returns (check, ok, detail) rows."""
    rng = np.random.default_rng(seed)
    results: list[tuple[str, bool, str]] = []

    def add(name: str, fn):
        try:
            detail = fn()
            results.append((name, True, detail or ""))
        except Exception as e:  # noqa: BLE001 - verification reports failures
            results.append((name, False, str(e)))

    def check_recompile():
        if b.weights is None:
            return "skipped: bundle carries no weights"
        fresh = bundle_mod.compile_bundle(
            b.weights,
            S=b.S,
            n_classes=b.n_classes,
            merged=b.merged,
            len_embed_width=b.len_embed_width,
            ipd_embed_width=b.ipd_embed_width,
            len_input_bits=b.len_input_bits,
            len_shift=b.len_shift,
            ipd_input_bits=b.ipd_input_bits,
            ipd_shift=b.ipd_shift,
            prob_bits=b.prob_bits,
            reset_period=b.reset_period,
            tie_order=b.tie_order,
        )
        for slot, t in b.tables.items():
            if fresh.tables[slot] != t:
                raise AssertionError(f"table {slot} differs from recompilation")
        return f"{len(b.tables)} tables bit-identical to recompilation"

    def check_forward():
        if b.weights is None:
            return "skipped: bundle carries no weights"
        for _ in range(trials):
            evs = [int(v) for v in rng.integers(0, 1 << b.ev_width, b.S)]
            got = b.forward_window(evs)
            want = direct_window_forward(b.weights, evs, b.ev_width, b.prob_bits)
            if got != want:
                raise AssertionError(f"forward_window {got} != direct {want} on evs={evs}")
        return f"{trials} random windows match the direct computation"

    def check_scalar_tables():
        if b.weights is None:
            return "skipped: bundle carries no weights"
        checked = 0
        for slot in ("len_embed", "ipd_embed"):
            t = b.tables[slot]
            keys = (
                range(1 << t.input_width)
                if t.input_width <= 12
                else rng.integers(0, 1 << t.input_width, 2048)
            )
            E = b.weights[slot].mats["E"]
            for k in keys:
                if t[int(k)] != rnn.binarize(E[int(k)]).value:
                    raise AssertionError(f"{slot} table wrong at key {int(k)}")
                checked += 1
        return f"{checked} embedding entries match scalar recomputation"

    def check_argmax_chain():
        from .ternary import split_argmax

        chain = split_argmax(b.n_classes, b.cpr_width, 3, b.tie_order)
        for _ in range(trials):
            vals = [int(v) for v in rng.integers(0, 1 << b.cpr_width, b.n_classes)]
            got = chain.lookup(vals)
            want = argmax_oracle(vals, b.tie_order)
            if got != want:
                raise AssertionError(f"argmax chain {got} != oracle {want} on {vals}")
        return f"{trials} random CPR vectors agree with the oracle"

    def check_roundtrip():
        doc = json.dumps(bundle_mod.bundle_to_json(b))
        again = bundle_mod.bundle_from_json(json.loads(doc))
        for slot, t in b.tables.items():
            if again.tables[slot] != t:
                raise AssertionError(f"table {slot} not bit-exact after round-trip")
        if json.dumps(bundle_mod.bundle_to_json(again)) != doc:
            raise AssertionError("serialization is not stable")
        return "bundle round-trip is bit-exact"

    add("recompile-tables", check_recompile)
    add("forward-vs-direct", check_forward)
    add("embedding-scalar", check_scalar_tables)
    add("argmax-chain", check_argmax_chain)
    add("roundtrip", check_roundtrip)
    return results
