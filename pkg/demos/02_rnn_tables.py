"""Compiling a binarized RNN into exact-match lookup tables.

Activations are ±1 bits, weights stay full precision, so every layer is a
finite function that a dense table realizes exactly. The bundle keeps the
weights alongside the tables so equivalence can be re-proven at any time.
"""

import numpy as np

from matchplane import bundle, oracles, rnn

rng = np.random.default_rng(0)

print("=== One GRU step, directly and through a table ===")
gru = rnn.LayerWeights(
    "gru",
    {k: rng.normal(size=(4, 7)) for k in ("W_z", "W_r", "W_h")}
    | {k: rng.normal(size=4) for k in ("b_z", "b_r", "b_h")},
)
h, ev = rnn.BitVec(4, 0b1010), rnn.BitVec(3, 0b011)
direct = rnn.gru_step_direct(gru, h, ev)
table = rnn.compile_layer(gru, 7, 4)
key = (h.value << 3) | ev.value
print(f"h={h} ev={ev}: direct -> {direct}, table[{key}] -> {rnn.BitVec(4, table[key])}")
print(f"table has 2^7 = {len(table.values)} entries; "
      f"exhaustive equality: {all(table[k] == rnn.gru_step_direct(gru, rnn.BitVec(4, k >> 3), rnn.BitVec(3, k & 7)).value for k in range(128))}")

print()
print("=== A full bundle: embeddings, FC, merged GRU chain, quantized output ===")
weights = bundle.random_weights(
    rng, n_classes=3, ev_width=4, h_width=5,
    len_embed_width=5, ipd_embed_width=5, len_input_bits=8, ipd_input_bits=8,
)
b = bundle.compile_bundle(
    weights, S=8, n_classes=3,
    len_embed_width=5, ipd_embed_width=5, len_input_bits=8, ipd_input_bits=8,
    len_shift=3, ipd_shift=10,
)
for slot, t in sorted(b.tables.items()):
    print(f"  {slot:>12}: {t.input_width:>2} -> {t.output_width:>2} bits, {len(t.values)} entries")

evs = [int(v) for v in rng.integers(0, 16, 8)]
pr = b.forward_window(evs)
print(f"window {evs} -> quantized per-class probabilities {pr} (4-bit each)")
print(f"direct recomputation agrees: {pr == oracles.direct_window_forward(weights, evs, 4, 4)}")

print()
print("=== The embedding path ===")
for length, ipd in [(64, 500), (1500, 200_000)]:
    print(f"length={length}, ipd={ipd}us -> ev bits {rnn.BitVec(4, b.embed(length, ipd))}")

print()
print("=== verify: the bundle's own oracle suite ===")
for name, ok, detail in oracles.verify_bundle(b, trials=64):
    print(f"  [{'PASS' if ok else 'FAIL'}] {name}: {detail}")
