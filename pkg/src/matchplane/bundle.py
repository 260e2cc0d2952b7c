"""Portable model bundle: hyperparameters, compiled tables, thresholds.

The bundle is a versioned JSON document (field names are normative, see
FORMATS.md) holding the quantized lookup tables as fixed-width hex arrays,
the fixed-point escalation thresholds, optionally the full-precision
weights (so compilation can be re-verified), and optionally the per-packet
fallback forest.  Round-trips are bit exact.

Table slots
-----------
merged (default, mirrors the prototype's GRU_1@GRU_2 and Output@GRU_S merges):

    S == 2 : len_embed, ipd_embed, fc, output_first    (ev1,ev2) -> probs
    S == 3 : ... , gru_first (ev1,ev2) -> h, output_last (h,evS) -> probs
    S >= 4 : ... , gru_first, gru_mid (h,ev) -> h, output_last

unmerged (testing): gru_first (ev1) -> h, gru_mid reused for steps 2..S,
output (h) -> probs.

Key layouts: gru_mid / output_last pack (h << ev_width) | ev; pair keys
pack (ev2 << ev_width) | ev1; fc packs (ipd << len_embed_width) | len.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import fallback, rnn
from .rnn import LayerWeights, LookupTable

FORMAT_NAME = "matchplane-bundle"
FORMAT_VERSION = 1

WEIGHT_SLOTS = ("len_embed", "ipd_embed", "fc", "gru", "output")

# t_esc value meaning "never escalate" (also the infeasible-calibration sentinel)
NEVER_ESCALATE = (1 << 31) - 1


def cpr_width(prob_bits: int, reset_period: int) -> int:
    """ceil(log2(2^prob_bits * K)), exact in integer arithmetic."""
    return ((1 << prob_bits) * reset_period - 1).bit_length()


def key_h_ev(h: int, ev: int, ev_width: int) -> int:
    return (h << ev_width) | ev


def key_ev_pair(ev1: int, ev2: int, ev_width: int) -> int:
    return (ev2 << ev_width) | ev1


def key_fc(len_bits: int, ipd_bits: int, len_embed_width: int) -> int:
    return (ipd_bits << len_embed_width) | len_bits


@dataclass
class ModelBundle:
    S: int
    n_classes: int
    ev_width: int
    h_width: int
    len_embed_width: int = 10
    ipd_embed_width: int = 8
    len_input_bits: int = 11
    len_shift: int = 0
    ipd_input_bits: int = 10
    ipd_shift: int = 10
    prob_bits: int = 4
    reset_period: int = 128
    tie_order: tuple[int, ...] = ()
    merged: bool = True
    tables: dict[str, LookupTable] | None = None
    t_conf_fx: tuple[int, ...] = ()
    t_esc: int = NEVER_ESCALATE
    weights: dict[str, LayerWeights] | None = None
    fallback_tree: fallback.TreeModel | None = None

    def __post_init__(self):
        if self.S < 2:
            raise ValueError(f"window size must be >= 2, got {self.S}")
        if self.n_classes < 2:
            raise ValueError(f"need >= 2 classes, got {self.n_classes}")
        if self.reset_period < 1:
            raise ValueError("reset period must be >= 1")
        if not self.tie_order:
            self.tie_order = tuple(range(self.n_classes))
        else:
            self.tie_order = tuple(self.tie_order)
        if sorted(self.tie_order) != list(range(self.n_classes)):
            raise ValueError("tie_order must be a permutation of the classes")
        if not self.t_conf_fx:
            self.t_conf_fx = tuple([0] * self.n_classes)
        else:
            self.t_conf_fx = tuple(int(t) for t in self.t_conf_fx)
        if len(self.t_conf_fx) != self.n_classes:
            raise ValueError("t_conf_fx needs one entry per class")
        self._check_table_shapes()

    @property
    def cpr_width(self) -> int:
        return cpr_width(self.prob_bits, self.reset_period)

    @property
    def prob_out_width(self) -> int:
        return self.n_classes * self.prob_bits

    def expected_table_widths(self) -> dict[str, tuple[int, int]]:
        """slot -> (input_width, output_width) for this geometry."""
        widths = {
            "len_embed": (self.len_input_bits, self.len_embed_width),
            "ipd_embed": (self.ipd_input_bits, self.ipd_embed_width),
            "fc": (self.len_embed_width + self.ipd_embed_width, self.ev_width),
        }
        if self.merged:
            if self.S == 2:
                widths["output_first"] = (2 * self.ev_width, self.prob_out_width)
            else:
                widths["gru_first"] = (2 * self.ev_width, self.h_width)
                if self.S >= 4:
                    widths["gru_mid"] = (self.h_width + self.ev_width, self.h_width)
                widths["output_last"] = (self.h_width + self.ev_width, self.prob_out_width)
        else:
            widths["gru_first"] = (self.ev_width, self.h_width)
            widths["gru_mid"] = (self.h_width + self.ev_width, self.h_width)
            widths["output"] = (self.h_width, self.prob_out_width)
        return widths

    def _check_table_shapes(self):
        if self.tables is None:
            return
        expect = self.expected_table_widths()
        if set(self.tables) != set(expect):
            raise ValueError(
                f"bundle tables {sorted(self.tables)} do not match the "
                f"expected slots {sorted(expect)}"
            )
        for slot, (iw, ow) in expect.items():
            t = self.tables[slot]
            if (t.input_width, t.output_width) != (iw, ow):
                raise ValueError(
                    f"table {slot} is {t.input_width}->{t.output_width} bits, "
                    f"expected {iw}->{ow}"
                )

    # -- feature path -------------------------------------------------------

    def len_key(self, length: int) -> int:
        return min(max(int(length), 0) >> self.len_shift, (1 << self.len_input_bits) - 1)

    def ipd_key(self, ipd_us: int) -> int:
        return min(max(int(ipd_us), 0) >> self.ipd_shift, (1 << self.ipd_input_bits) - 1)

    def embed(self, length: int, ipd_us: int) -> int:
        """Feature embedding: raw length + IPD -> ev bits, all via tables."""
        lb = self.tables["len_embed"][self.len_key(length)]
        ib = self.tables["ipd_embed"][self.ipd_key(ipd_us)]
        return self.tables["fc"][key_fc(lb, ib, self.len_embed_width)]

    # -- window inference ---------------------------------------------------

    def forward_window(self, evs: Sequence[int]) -> tuple[int, ...]:
        """Chain the compiled tables over one full window of S ev values."""
        if len(evs) != self.S:
            raise ValueError(f"need exactly {self.S} embedding vectors, got {len(evs)}")
        top = 1 << self.ev_width
        for ev in evs:
            if not 0 <= ev < top:
                raise ValueError(f"ev value {ev} does not fit {self.ev_width} bits")
        if self.merged:
            if self.S == 2:
                packed = self.tables["output_first"][
                    key_ev_pair(evs[0], evs[1], self.ev_width)
                ]
            else:
                h = self.tables["gru_first"][key_ev_pair(evs[0], evs[1], self.ev_width)]
                for ev in evs[2:-1]:
                    h = self.tables["gru_mid"][key_h_ev(h, ev, self.ev_width)]
                packed = self.tables["output_last"][key_h_ev(h, evs[-1], self.ev_width)]
        else:
            h = self.tables["gru_first"][evs[0]]
            for ev in evs[1:]:
                h = self.tables["gru_mid"][key_h_ev(h, ev, self.ev_width)]
            packed = self.tables["output"][h]
        return rnn.unpack_value(packed, [self.prob_bits] * self.n_classes)


# ---------------------------------------------------------------------------
# Compilation from full-precision weights


def _compile_pair_table(gru: LayerWeights, ev_width: int, out_is_probs, prob_bits, n_classes, output=None):
    """(ev1, ev2) keyed table: two GRU steps from the zero state, optionally
    finished by the output layer (the S==2 doubly merged case)."""
    in_width = 2 * ev_width
    n_in = 1 << in_width
    keys = np.arange(n_in, dtype=np.int64)
    ev1 = rnn._decode_batch(keys & ((1 << ev_width) - 1), ev_width)
    ev2 = rnn._decode_batch(keys >> ev_width, ev_width)
    h0 = np.zeros((n_in, gru.h_width))
    h1 = np.where(rnn._gru_math_batch(gru.mats, ev1, h0) >= 0, 1.0, -1.0)
    h2 = rnn._gru_math_batch(gru.mats, ev2, h1)
    if not out_is_probs:
        return LookupTable(in_width, gru.h_width, rnn._encode_batch(h2).astype(np.uint64))
    h2 = np.where(h2 >= 0, 1.0, -1.0)
    return LookupTable(
        in_width,
        n_classes * prob_bits,
        _quantized_output_batch(output, h2, prob_bits),
    )


def _compile_output_last(gru: LayerWeights, output: LayerWeights, ev_width: int, prob_bits: int):
    """(h, ev) keyed table: one GRU step then the quantized output layer."""
    h_width = gru.h_width
    in_width = h_width + ev_width
    n_in = 1 << in_width
    keys = np.arange(n_in, dtype=np.int64)
    ev = rnn._decode_batch(keys & ((1 << ev_width) - 1), ev_width)
    h = rnn._decode_batch(keys >> ev_width, h_width)
    hn = np.where(rnn._gru_math_batch(gru.mats, ev, h) >= 0, 1.0, -1.0)
    n_classes = output.mats["W"].shape[0]
    return LookupTable(in_width, n_classes * prob_bits, _quantized_output_batch(output, hn, prob_bits))


def _quantized_output_batch(output: LayerWeights, h_pm: np.ndarray, prob_bits: int) -> np.ndarray:
    p = rnn._softmax(h_pm @ output.mats["W"].T + output.mats["b"])
    top = (1 << prob_bits) - 1
    q = np.clip(np.floor(p * top + 0.5), 0, top).astype(np.uint64)
    shifts = np.arange(q.shape[1], dtype=np.uint64) * np.uint64(prob_bits)
    return (q << shifts[None, :]).sum(axis=1)


def compile_bundle(
    weights: dict[str, LayerWeights],
    *,
    S: int,
    n_classes: int,
    merged: bool = True,
    cap: int = rnn.DEFAULT_COMPILE_CAP,
    **hyper,
) -> ModelBundle:
    """Compile all tables for a bundle from its full-precision weights.

    ``weights`` holds the slots len_embed, ipd_embed (embedding kind),
    fc (fully_connected), gru, output.  The single recurrent cell is shared
    by every time step, so one gru_mid table serves all interior steps.
    """
    missing = set(WEIGHT_SLOTS) - set(weights)
    if missing:
        raise ValueError(f"missing weight slots: {sorted(missing)}")
    gru = weights["gru"]
    out = weights["output"]
    proto = ModelBundle(
        S=S,
        n_classes=n_classes,
        ev_width=gru.x_width,
        h_width=gru.h_width,
        merged=merged,
        **hyper,
    )
    if out.mats["W"].shape != (n_classes, gru.h_width):
        raise ValueError("output layer shape must be (n_classes, h_width)")
    expect = proto.expected_table_widths()
    for slot, (iw, _) in expect.items():
        if (1 << iw) > cap:
            raise rnn.TableTooLargeError(iw, cap)
    pb = proto.prob_bits
    tables: dict[str, LookupTable] = {
        "len_embed": rnn.compile_layer(weights["len_embed"], *expect["len_embed"], cap=cap),
        "ipd_embed": rnn.compile_layer(weights["ipd_embed"], *expect["ipd_embed"], cap=cap),
        "fc": rnn.compile_layer(weights["fc"], *expect["fc"], cap=cap),
    }
    ev_w = proto.ev_width
    if merged:
        if S == 2:
            tables["output_first"] = _compile_pair_table(gru, ev_w, True, pb, n_classes, out)
        else:
            tables["gru_first"] = _compile_pair_table(gru, ev_w, False, pb, n_classes)
            if S >= 4:
                tables["gru_mid"] = rnn.compile_layer(gru, *expect["gru_mid"], cap=cap)
            tables["output_last"] = _compile_output_last(gru, out, ev_w, pb)
    else:
        tables["gru_first"] = rnn.compile_layer(
            gru, *expect["gru_first"], cap=cap, initial_step=True
        )
        tables["gru_mid"] = rnn.compile_layer(gru, *expect["gru_mid"], cap=cap)
        tables["output"] = rnn.compile_layer(out, *expect["output"], prob_bits=pb, cap=cap)
    return replace(proto, tables=tables, weights=dict(weights))


# ---------------------------------------------------------------------------
# Serialization


def _table_to_json(t: LookupTable) -> dict:
    digits = max(1, (t.output_width + 3) // 4)
    values = "".join(format(int(v), f"0{digits}x") for v in t.values)
    return {
        "input_width": t.input_width,
        "output_width": t.output_width,
        "values_hex": values,
    }


def _table_from_json(doc: dict) -> LookupTable:
    iw, ow = int(doc["input_width"]), int(doc["output_width"])
    digits = max(1, (ow + 3) // 4)
    s = doc["values_hex"]
    if len(s) != digits * (1 << iw):
        raise ValueError(
            f"table hex payload has {len(s)} digits, expected {digits * (1 << iw)}"
        )
    values = np.array(
        [int(s[i : i + digits], 16) for i in range(0, len(s), digits)], dtype=np.uint64
    )
    return LookupTable(iw, ow, values)


def _weights_to_json(weights: dict[str, LayerWeights]) -> dict:
    return {
        slot: {"kind": w.kind, **{k: v.tolist() for k, v in w.mats.items()}}
        for slot, w in weights.items()
    }


def _weights_from_json(doc: dict) -> dict[str, LayerWeights]:
    out = {}
    for slot, entry in doc.items():
        kind = entry["kind"]
        mats = {k: np.array(v, dtype=np.float64) for k, v in entry.items() if k != "kind"}
        out[slot] = LayerWeights(kind=kind, mats=mats)
    return out


def bundle_to_json(b: ModelBundle) -> dict:
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "hyper": {
            "window_size": b.S,
            "n_classes": b.n_classes,
            "ev_width": b.ev_width,
            "h_width": b.h_width,
            "len_embed_width": b.len_embed_width,
            "ipd_embed_width": b.ipd_embed_width,
            "len_input_bits": b.len_input_bits,
            "len_shift": b.len_shift,
            "ipd_input_bits": b.ipd_input_bits,
            "ipd_shift": b.ipd_shift,
            "prob_bits": b.prob_bits,
            "reset_period": b.reset_period,
            "tie_order": list(b.tie_order),
            "merged": b.merged,
        },
        "thresholds": {"t_conf_fx": list(b.t_conf_fx), "t_esc": b.t_esc},
        "tables": {slot: _table_to_json(t) for slot, t in sorted(b.tables.items())},
    }
    if b.weights is not None:
        doc["weights"] = _weights_to_json(b.weights)
    if b.fallback_tree is not None:
        doc["fallback_tree"] = fallback.model_to_json(b.fallback_tree)
    return doc


def bundle_from_json(doc: dict) -> ModelBundle:
    if doc.get("format") != FORMAT_NAME:
        raise ValueError(f"not a {FORMAT_NAME} document")
    if int(doc.get("version", -1)) != FORMAT_VERSION:
        raise ValueError(f"unsupported bundle version {doc.get('version')}")
    h = doc["hyper"]
    th = doc["thresholds"]
    return ModelBundle(
        S=int(h["window_size"]),
        n_classes=int(h["n_classes"]),
        ev_width=int(h["ev_width"]),
        h_width=int(h["h_width"]),
        len_embed_width=int(h["len_embed_width"]),
        ipd_embed_width=int(h["ipd_embed_width"]),
        len_input_bits=int(h["len_input_bits"]),
        len_shift=int(h["len_shift"]),
        ipd_input_bits=int(h["ipd_input_bits"]),
        ipd_shift=int(h["ipd_shift"]),
        prob_bits=int(h["prob_bits"]),
        reset_period=int(h["reset_period"]),
        tie_order=tuple(int(t) for t in h["tie_order"]),
        merged=bool(h["merged"]),
        tables={slot: _table_from_json(t) for slot, t in doc["tables"].items()},
        t_conf_fx=tuple(int(t) for t in th["t_conf_fx"]),
        t_esc=int(th["t_esc"]),
        weights=_weights_from_json(doc["weights"]) if "weights" in doc else None,
        fallback_tree=(
            fallback.model_from_json(doc["fallback_tree"])
            if "fallback_tree" in doc
            else None
        ),
    )


def save_bundle(b: ModelBundle, path: str):
    with open(path, "w") as fp:
        json.dump(bundle_to_json(b), fp, indent=1)
        fp.write("\n")


def load_bundle(path: str) -> ModelBundle:
    with open(path) as fp:
        return bundle_from_json(json.load(fp))


# ---------------------------------------------------------------------------
# Random bundles (demos and tests)


def random_weights(
    rng: np.random.Generator,
    *,
    n_classes: int,
    ev_width: int,
    h_width: int,
    len_embed_width: int = 10,
    ipd_embed_width: int = 8,
    len_input_bits: int = 11,
    ipd_input_bits: int = 10,
    scale: float = 1.0,
) -> dict[str, LayerWeights]:
    def mat(*shape):
        return rng.normal(0.0, scale, shape)

    g_in = ev_width + h_width
    return {
        "len_embed": LayerWeights("embedding", {"E": mat(1 << len_input_bits, len_embed_width)}),
        "ipd_embed": LayerWeights("embedding", {"E": mat(1 << ipd_input_bits, ipd_embed_width)}),
        "fc": LayerWeights(
            "fully_connected",
            {"W": mat(ev_width, len_embed_width + ipd_embed_width), "b": mat(ev_width)},
        ),
        "gru": LayerWeights(
            "gru",
            {
                "W_z": mat(h_width, g_in),
                "W_r": mat(h_width, g_in),
                "W_h": mat(h_width, g_in),
                "b_z": mat(h_width),
                "b_r": mat(h_width),
                "b_h": mat(h_width),
            },
        ),
        "output": LayerWeights("output", {"W": mat(n_classes, h_width), "b": mat(n_classes)}),
    }
