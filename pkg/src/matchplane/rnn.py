"""Binarized RNN layers and their exact compilation into lookup tables.

Every activation in the network is binarized to +1/-1 (bit 1 means +1), so
the input and output of any layer is a bit string and the whole layer can
be replaced by a dense table indexed by the input bit pattern.  Weights
stay full precision; only activations are binarized.

Bit conventions (normative, shared with the bundle file format):

* a width-w bit vector is an int v in [0, 2^w); component i is (v>>i)&1;
* sign(0) = +1 everywhere;
* table keys concatenate inputs with the earlier operand in the HIGH bits:
  interior GRU key = (h << ev_width) | ev, FC key = (len << ipd_width) | ipd,
  merged first-step key = (ev1 << ev_width) | ev2;
* multi-field table values put class 0 / component 0 in the LOW bits.

The GRU cell uses the standard update/reset/candidate gates with sign in
place of both sigmoid and tanh.  The update gate acts as a hard selector:

    cat  = [x, h]                      (x = embedding vector, h = previous state)
    z    = sign(W_z cat + b_z)         r = sign(W_r cat + b_r)
    c    = sign(W_h [x, r*h] + b_h)
    a    = (1 + z) / 2                 in {0, 1}
    h'   = binarize((1 - a)*h + a*c)

``h`` may be the all-zero real vector for the first time step (the state
before any packet), in which case a kept component binarizes to +1.

All direct computations run in float64; compiled tables are defined by the
float64 evaluation of the stored weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

DEFAULT_COMPILE_CAP = 1 << 22

LAYER_KINDS = ("embedding", "fully_connected", "rnn", "gru", "output")


class BitVec(NamedTuple):
    """Packed bit string; bit i encodes activation i (1 = +1, 0 = -1)."""

    width: int
    value: int

    def check(self) -> "BitVec":
        if self.width <= 0:
            raise ValueError(f"width must be positive, got {self.width}")
        if not 0 <= self.value < (1 << self.width):
            raise ValueError(f"value {self.value} does not fit {self.width} bits")
        return self

    def decode(self) -> np.ndarray:
        """Float64 vector in {-1, +1}^width."""
        bits = (self.value >> np.arange(self.width)) & 1
        return np.where(bits == 1, 1.0, -1.0)

    def __str__(self) -> str:
        return "".join(str((self.value >> i) & 1) for i in range(self.width))


def binarize(x: Sequence[float] | np.ndarray) -> BitVec:
    """sign() each component into a bit: bit i = 1 iff x_i >= 0."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("binarize expects a nonempty 1-D vector")
    if np.any(np.isnan(arr)):
        raise ValueError("binarize rejects NaN input")
    value = int(np.sum((arr >= 0).astype(np.uint64) << np.arange(arr.size, dtype=np.uint64)))
    return BitVec(arr.size, value)


def _sign_pm(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, 1.0, -1.0)


def _decode_batch(values: np.ndarray, width: int) -> np.ndarray:
    """(k,) ints -> (k, width) float64 in {-1, +1}."""
    bits = (values[:, None] >> np.arange(width)[None, :]) & 1
    return np.where(bits == 1, 1.0, -1.0)


def _encode_batch(pm: np.ndarray) -> np.ndarray:
    """(k, w) nonneg-means-one matrix -> (k,) packed ints."""
    bits = (pm >= 0).astype(np.int64)
    return bits @ (1 << np.arange(pm.shape[1], dtype=np.int64))


@dataclass
class LayerWeights:
    """Full-precision parameters for one layer kind.

    embedding:        E (2^in_bits, out_width)
    fully_connected:  W (out, in), b (out,)
    rnn:              W (h, ev+h), b (h,)            [background form]
    gru:              W_z/W_r/W_h (h, ev+h), b_z/b_r/b_h (h,)
    output:           W (n_classes, h), b (n_classes,)
    """

    kind: str
    mats: dict[str, np.ndarray]

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        self.mats = {k: np.asarray(v, dtype=np.float64) for k, v in self.mats.items()}
        self._validate()

    def _validate(self):
        m = self.mats
        need = {
            "embedding": {"E"},
            "fully_connected": {"W", "b"},
            "rnn": {"W", "b"},
            "gru": {"W_z", "W_r", "W_h", "b_z", "b_r", "b_h"},
            "output": {"W", "b"},
        }[self.kind]
        if set(m) != need:
            raise ValueError(f"{self.kind} layer needs matrices {sorted(need)}, got {sorted(m)}")
        if self.kind == "gru":
            shape = m["W_z"].shape
            for k in ("W_r", "W_h"):
                if m[k].shape != shape:
                    raise ValueError("GRU gate matrices must share one shape")
            for k in ("b_z", "b_r", "b_h"):
                if m[k].shape != (shape[0],):
                    raise ValueError("GRU biases must match the hidden width")
        elif self.kind != "embedding":
            if m["b"].shape != (m["W"].shape[0],):
                raise ValueError("bias length must match the output rows")

    @property
    def h_width(self) -> int:
        if self.kind == "gru":
            return self.mats["W_z"].shape[0]
        if self.kind == "rnn":
            return self.mats["W"].shape[0]
        raise AttributeError(f"{self.kind} layer has no hidden width")

    @property
    def x_width(self) -> int:
        if self.kind == "gru":
            return self.mats["W_z"].shape[1] - self.h_width
        if self.kind == "rnn":
            return self.mats["W"].shape[1] - self.h_width
        raise AttributeError(f"{self.kind} layer has no input split")


def gru_step_direct(w: LayerWeights, h: BitVec | None, ev: BitVec) -> BitVec:
    """Reference GRU semantics the compiled tables must reproduce.

    ``h is None`` selects the initial step with the all-zero real state.
    """
    if w.kind != "gru":
        raise ValueError("gru_step_direct needs a gru layer")
    ev.check()
    if ev.width != w.x_width:
        raise ValueError(f"ev width {ev.width} != layer input width {w.x_width}")
    h_pm = np.zeros(w.h_width) if h is None else h.check().decode()
    if h is not None and h.width != w.h_width:
        raise ValueError(f"h width {h.width} != layer hidden width {w.h_width}")
    x_pm = ev.decode()
    return binarize(_gru_math(w.mats, x_pm, h_pm))


def _gru_math(m: dict[str, np.ndarray], x_pm: np.ndarray, h_pm: np.ndarray) -> np.ndarray:
    cat = np.concatenate([x_pm, h_pm])
    z = _sign_pm(m["W_z"] @ cat + m["b_z"])
    r = _sign_pm(m["W_r"] @ cat + m["b_r"])
    c = _sign_pm(m["W_h"] @ np.concatenate([x_pm, r * h_pm]) + m["b_h"])
    a = (1.0 + z) / 2.0
    return (1.0 - a) * h_pm + a * c


def _gru_math_batch(m: dict[str, np.ndarray], x_pm: np.ndarray, h_pm: np.ndarray) -> np.ndarray:
    cat = np.concatenate([x_pm, h_pm], axis=1)
    z = _sign_pm(cat @ m["W_z"].T + m["b_z"])
    r = _sign_pm(cat @ m["W_r"].T + m["b_r"])
    cat2 = np.concatenate([x_pm, r * h_pm], axis=1)
    c = _sign_pm(cat2 @ m["W_h"].T + m["b_h"])
    a = (1.0 + z) / 2.0
    return (1.0 - a) * h_pm + a * c


def quantize_probs(p: Sequence[float] | np.ndarray, prob_bits: int) -> tuple[int, ...]:
    """Round-half-up each probability onto the 0 .. 2^bits - 1 grid."""
    arr = np.asarray(p, dtype=np.float64)
    top = (1 << prob_bits) - 1
    q = np.floor(arr * top + 0.5)
    return tuple(int(v) for v in np.clip(q, 0, top))


def _softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - np.max(logits, axis=-1, keepdims=True))
    return e / np.sum(e, axis=-1, keepdims=True)


def output_probs_direct(w: LayerWeights, h: BitVec, prob_bits: int) -> tuple[int, ...]:
    """Softmax over the output layer, quantized per class."""
    if w.kind != "output":
        raise ValueError("output_probs_direct needs an output layer")
    return quantize_probs(_softmax(w.mats["W"] @ h.check().decode() + w.mats["b"]), prob_bits)


@dataclass
class LookupTable:
    """Dense enumeration of one layer: values[input bit pattern] = output bits."""

    input_width: int
    output_width: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.uint64)
        if self.values.shape != (1 << self.input_width,):
            raise ValueError(
                f"table needs {1 << self.input_width} values, got {self.values.shape}"
            )
        if self.output_width < 64 and np.any(self.values >> np.uint64(self.output_width)):
            raise ValueError(f"table values exceed {self.output_width} bits")

    def __getitem__(self, key: int) -> int:
        return int(self.values[key])

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, LookupTable)
            and self.input_width == other.input_width
            and self.output_width == other.output_width
            and bool(np.array_equal(self.values, other.values))
        )


def pack_fields(fields: Sequence[tuple[int, int]]) -> int:
    """Pack (value, width) fields; the FIRST field lands in the high bits."""
    out = 0
    for value, width in fields:
        out = (out << width) | value
    return out


def unpack_value(value: int, widths: Sequence[int]) -> tuple[int, ...]:
    """Split a packed table value; component 0 comes from the LOW bits."""
    out = []
    for w in widths:
        out.append(value & ((1 << w) - 1))
        value >>= w
    return tuple(out)


def _chunks(total: int, step: int = 1 << 16):
    start = 0
    while start < total:
        yield np.arange(start, min(start + step, total), dtype=np.int64)
        start += step


def compile_layer(
    w: LayerWeights,
    in_width: int,
    out_width: int,
    prob_bits: int = 4,
    cap: int = DEFAULT_COMPILE_CAP,
    initial_step: bool = False,
) -> LookupTable:
    """Enumerate every input bit pattern through the direct computation.

    ``initial_step`` compiles a gru layer keyed on ev only, with the hidden
    state fixed at the all-zero real vector.  Weights are consumed read-only
    and never quantized.
    """
    if (1 << in_width) > cap:
        raise TableTooLargeError(in_width, cap)
    n_in = 1 << in_width
    out = np.zeros(n_in, dtype=np.uint64)
    m = w.mats
    for keys in _chunks(n_in):
        if w.kind == "embedding":
            if m["E"].shape[0] != n_in:
                raise ValueError(
                    f"embedding table has {m['E'].shape[0]} rows, key space is {n_in}"
                )
            pm = m["E"][keys]
        elif w.kind == "fully_connected":
            x = _decode_batch(keys, in_width)
            pm = x @ m["W"].T + m["b"]
        elif w.kind == "rnn":
            x, h = _split_keys(keys, w, in_width, initial_step)
            pm = np.concatenate([x, h], axis=1) @ m["W"].T + m["b"]
        elif w.kind == "gru":
            x, h = _split_keys(keys, w, in_width, initial_step)
            pm = _gru_math_batch(m, x, h)
        elif w.kind == "output":
            h = _decode_batch(keys, in_width)
            p = _softmax(h @ m["W"].T + m["b"])
            top = (1 << prob_bits) - 1
            q = np.clip(np.floor(p * top + 0.5), 0, top).astype(np.uint64)
            shifts = np.arange(q.shape[1], dtype=np.uint64) * np.uint64(prob_bits)
            out[keys] = (q << shifts[None, :]).sum(axis=1)
            continue
        else:  # pragma: no cover
            raise AssertionError(w.kind)
        out[keys] = _encode_batch(pm).astype(np.uint64)
    table = LookupTable(in_width, out_width, out)
    return table


def _split_keys(keys: np.ndarray, w: LayerWeights, in_width: int, initial_step: bool):
    """Key layout for recurrent kinds: (h << ev_width) | ev, or ev alone."""
    if initial_step:
        if in_width != w.x_width:
            raise ValueError("initial-step table is keyed on ev only")
        x = _decode_batch(keys, w.x_width)
        h = np.zeros((keys.size, w.h_width))
    else:
        if in_width != w.x_width + w.h_width:
            raise ValueError(
                f"key width {in_width} != ev {w.x_width} + h {w.h_width}"
            )
        ev_mask = (1 << w.x_width) - 1
        x = _decode_batch(keys & ev_mask, w.x_width)
        h = _decode_batch(keys >> w.x_width, w.h_width)
    return x, h


class TableTooLargeError(ValueError):
    def __init__(self, in_width: int, cap: int):
        super().__init__(
            f"table too large: input width {in_width} needs {1 << in_width} "
            f"entries, above the cap of {cap}"
        )
        self.required = 1 << in_width
        self.cap = cap
