"""End to end: synthesize traffic, replay at a load, run the full per-packet
analysis loop, calibrate escalation thresholds, rerun, and hand the
escalated stream to the off-switch pipeline replica.
"""

import numpy as np

from matchplane import bundle, engine, escalate, imis, trace
from matchplane.resources import estimate_resources

rng = np.random.default_rng(1)

print("=== Model: random weights (see the trainer package for a real one) ===")
weights = bundle.random_weights(
    rng, n_classes=2, ev_width=4, h_width=5,
    len_embed_width=6, ipd_embed_width=6, len_input_bits=8, ipd_input_bits=8,
)
b = bundle.compile_bundle(
    weights, S=8, n_classes=2,
    len_embed_width=6, ipd_embed_width=6, len_input_bits=8, ipd_input_bits=8,
    len_shift=3, ipd_shift=10,
)

print("=== Traffic: two classes, replayed at 1000 new flows per second ===")
base = trace.synth_trace(trace.two_class_demo_specs(), 300, seed=7)
t = trace.replay(base, load_fps=1000)
print(f"{len(t)} packets, {t.flow_count()} flows, {t.duration_us() / 1e6:.2f}s span")

print()
print("=== Pass 1: collect confidence records (escalation off) ===")
records = escalate.confidence_trace(b, t)
cal = escalate.calibrate(records, 2, target_escalation_fraction=0.05)
print(f"calibrated T_conf={cal.t_conf_fx}, T_esc={cal.t_esc}, "
      f"replayed escalated fraction {cal.escalated_fraction:.3f}")

print()
print("=== Pass 2: run with calibrated thresholds ===")
b.t_conf_fx, b.t_esc = cal.t_conf_fx, cal.t_esc
result = engine.run_integrated(b, t, engine.EngineConfig(cross_check_argmax=True))
rep = result.report
print(f"counts: {rep.counts}")
print(f"flows:  {rep.flow_counts}")
print(f"macro-F1 over on-switch decisions: {rep.macro_f1:.3f} "
      "(random weights: near chance; the trainer demo reaches >= 0.95)")

print()
print("=== Escalated packets through the off-switch pipeline replica ===")
stream = [imis.EscalatedPacket(r.key, r.time_us, r.seq, r.prefix) for r in result.escalated]
if stream:
    log = imis.run_pipeline(stream, imis.default_classifier(2), imis.ImisConfig(
        batch_size=8, batch_latency_us=2000))
    lat = imis.latency_report(log)
    print(f"released {len(log.releases)} packets in {len(log.batches)} batches; "
          f"end-to-end p50={lat['end_to_end']['p50']}us p99={lat['end_to_end']['p99']}us")
else:
    print("nothing escalated at these thresholds")

print()
print("=== Hardware resource estimate ===")
res = estimate_resources(b)
for slot, info in res.tables.items():
    print(f"  {slot:>12}: {info['entries']:>7} entries x {info['output_width']} bits")
print(f"  stateful bits/flow: {res.total_stateful_bits()} "
      f"({', '.join(f'{k}={v}' for k, v in res.stateful_bits.items())})")
print(f"  argmax TCAM: {res.argmax['tcam_entries']} entries over "
      f"{len(res.argmax['stages'])} stage(s)")
