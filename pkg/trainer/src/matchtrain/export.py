"""Bundle export: enumerate tables in float64 and write the engine format.

The engine re-verifies this file by recompiling every table from the
embedded weights, so the enumeration here follows FORMATS.md to the bit:
sign(0) = +1, float64 math, key layouts with the documented field,
class 0 in the low value bits, merged first/last tables.
"""

from __future__ import annotations

import json

import numpy as np

from .config import TrainConfig
from .model import BinaryWindowModel

FORMAT_NAME = "matchplane-bundle"
FORMAT_VERSION = 1
NEVER_ESCALATE = (1 << 31) - 1


def _decode(values: np.ndarray, width: int) -> np.ndarray:
    bits = (values[:, None] >> np.arange(width)[None, :]) & 1
    return np.where(bits == 1, 1.0, -1.0)


def _encode(pm: np.ndarray) -> np.ndarray:
    bits = (pm >= 0).astype(np.int64)
    return bits @ (1 << np.arange(pm.shape[1], dtype=np.int64))


def _sign(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, 1.0, -1.0)


def extract_weights(model: BinaryWindowModel) -> dict[str, dict[str, np.ndarray]]:
    """Torch parameters -> float64 numpy, the values the tables are built from."""

    def f64(t):
        return t.detach().double().numpy().copy()

    return {
        "len_embed": {"kind": "embedding", "E": f64(model.len_embed.weight)},
        "ipd_embed": {"kind": "embedding", "E": f64(model.ipd_embed.weight)},
        "fc": {"kind": "fully_connected", "W": f64(model.fc.weight), "b": f64(model.fc.bias)},
        "gru": {
            "kind": "gru",
            "W_z": f64(model.cell.w_z.weight),
            "W_r": f64(model.cell.w_r.weight),
            "W_h": f64(model.cell.w_h.weight),
            "b_z": f64(model.cell.w_z.bias),
            "b_r": f64(model.cell.w_r.bias),
            "b_h": f64(model.cell.w_h.bias),
        },
        "output": {"kind": "output", "W": f64(model.out.weight), "b": f64(model.out.bias)},
    }


def _gru_batch(w: dict, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    cat = np.concatenate([x, h], axis=1)
    z = _sign(cat @ w["W_z"].T + w["b_z"])
    r = _sign(cat @ w["W_r"].T + w["b_r"])
    c = _sign(np.concatenate([x, r * h], axis=1) @ w["W_h"].T + w["b_h"])
    a = (1.0 + z) / 2.0
    return _sign((1.0 - a) * h + a * c)


def _quantized_probs(w_out: dict, h_pm: np.ndarray, prob_bits: int) -> np.ndarray:
    logits = h_pm @ w_out["W"].T + w_out["b"]
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)
    top = (1 << prob_bits) - 1
    q = np.clip(np.floor(p * top + 0.5), 0, top).astype(np.int64)
    shifts = np.arange(q.shape[1], dtype=np.int64) * prob_bits
    return (q << shifts[None, :]).sum(axis=1)


def enumerate_tables(weights: dict, cfg: TrainConfig) -> dict[str, dict]:
    """All table slots for the merged layout, as (in, out, values) dicts."""
    S = cfg.window_size
    ev_w, h_w = cfg.ev_width, cfg.h_width
    pb = cfg.prob_bits
    gru = weights["gru"]
    out = weights["output"]
    tables: dict[str, dict] = {}

    def put(slot: str, in_w: int, out_w: int, values: np.ndarray):
        tables[slot] = {"input_width": in_w, "output_width": out_w, "values": values}

    put("len_embed", cfg.len_input_bits, cfg.len_embed_width,
        _encode(weights["len_embed"]["E"]))
    put("ipd_embed", cfg.ipd_input_bits, cfg.ipd_embed_width,
        _encode(weights["ipd_embed"]["E"]))

    fc_in = cfg.len_embed_width + cfg.ipd_embed_width
    keys = np.arange(1 << fc_in, dtype=np.int64)
    len_pm = _decode(keys & ((1 << cfg.len_embed_width) - 1), cfg.len_embed_width)
    ipd_pm = _decode(keys >> cfg.len_embed_width, cfg.ipd_embed_width)
    x = np.concatenate([len_pm, ipd_pm], axis=1)
    put("fc", fc_in, ev_w, _encode(x @ weights["fc"]["W"].T + weights["fc"]["b"]))

    pair = np.arange(1 << (2 * ev_w), dtype=np.int64)
    ev1 = _decode(pair & ((1 << ev_w) - 1), ev_w)
    ev2 = _decode(pair >> ev_w, ev_w)
    h1 = _gru_batch(gru, ev1, np.zeros((pair.size, h_w)))
    h2 = _gru_batch(gru, ev2, h1)
    if S == 2:
        put("output_first", 2 * ev_w, cfg.n_classes * pb, _quantized_probs(out, h2, pb))
    else:
        put("gru_first", 2 * ev_w, h_w, _encode(h2))
        mixed = np.arange(1 << (h_w + ev_w), dtype=np.int64)
        ev = _decode(mixed & ((1 << ev_w) - 1), ev_w)
        h = _decode(mixed >> ev_w, h_w)
        hn = _gru_batch(gru, ev, h)
        if S >= 4:
            put("gru_mid", h_w + ev_w, h_w, _encode(hn))
        put("output_last", h_w + ev_w, cfg.n_classes * pb, _quantized_probs(out, hn, pb))
    return tables


def export_bundle(
    model: BinaryWindowModel,
    cfg: TrainConfig,
    path: str,
    t_conf_fx=None,
    t_esc: int = NEVER_ESCALATE,
    fallback_tree: dict | None = None,
):
    """Write a bundle the engine can load and re-verify bit-exactly."""
    weights = extract_weights(model)
    tables = enumerate_tables(weights, cfg)
    if t_conf_fx is None:
        t_conf_fx = [0] * cfg.n_classes
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "hyper": {
            "window_size": cfg.window_size,
            "n_classes": cfg.n_classes,
            "ev_width": cfg.ev_width,
            "h_width": cfg.h_width,
            "len_embed_width": cfg.len_embed_width,
            "ipd_embed_width": cfg.ipd_embed_width,
            "len_input_bits": cfg.len_input_bits,
            "len_shift": cfg.len_shift,
            "ipd_input_bits": cfg.ipd_input_bits,
            "ipd_shift": cfg.ipd_shift,
            "prob_bits": cfg.prob_bits,
            "reset_period": cfg.reset_period,
            "tie_order": list(range(cfg.n_classes)),
            "merged": True,
        },
        "thresholds": {"t_conf_fx": [int(t) for t in t_conf_fx], "t_esc": int(t_esc)},
        "tables": {
            slot: {
                "input_width": t["input_width"],
                "output_width": t["output_width"],
                "values_hex": _hex(t["values"], t["output_width"]),
            }
            for slot, t in sorted(tables.items())
        },
        "weights": {
            slot: {"kind": entry["kind"]}
            | {k: v.tolist() for k, v in entry.items() if k != "kind"}
            for slot, entry in weights.items()
        },
    }
    if fallback_tree is not None:
        doc["fallback_tree"] = fallback_tree
    with open(path, "w") as fp:
        json.dump(doc, fp, indent=1)
        fp.write("\n")
    return doc


def _hex(values: np.ndarray, out_width: int) -> str:
    digits = max(1, (out_width + 3) // 4)
    return "".join(format(int(v), f"0{digits}x") for v in values)
