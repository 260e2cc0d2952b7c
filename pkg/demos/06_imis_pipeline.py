"""The off-switch inference pipeline replica under different loads.

parser -> pool -> analyzer -> buffer with bounded queues on one virtual
clock: higher flow concurrency stretches the pool->analyze wait while
conservation and per-flow ordering hold throughout.
"""

import numpy as np

from matchplane import imis


def stream(rng, n_flows, spread_us):
    pkts = []
    for f in range(n_flows):
        start = int(rng.integers(0, spread_us))
        t = start
        for s in range(int(rng.integers(2, 8))):
            t += int(rng.integers(0, 1500))
            pkts.append((t, f, s + 1))
    pkts.sort()
    return [
        imis.make_packet(
            (f"10.{f >> 8 & 255}.{f & 255}.1", "192.168.0.1", 1024 + f % 60000, 443, 6),
            t, s, bytes([f % 256]),
        )
        for t, f, s in pkts
    ]


clf = imis.default_classifier(4)
cfg = imis.ImisConfig(batch_size=16, batch_latency_us=800)

print(f"{'flows':>7} {'packets':>8} {'batches':>8} {'p50 wait':>9} {'p99 wait':>9} {'p99 e2e':>9}")
for n_flows in (512, 2048, 8192):
    rng = np.random.default_rng(42)
    pkts = stream(rng, n_flows, spread_us=300_000)
    log = imis.run_pipeline(pkts, clf, cfg)
    assert len(log.releases) == len(pkts)  # conservation
    rep = imis.latency_report(log)
    print(f"{n_flows:>7} {len(pkts):>8} {len(log.batches):>8} "
          f"{rep['pool_to_analyze']['p50']:>8}us {rep['pool_to_analyze']['p99']:>8}us "
          f"{rep['end_to_end']['p99']:>8}us")

print()
print("Per-phase breakdown at 8192 flows:")
for phase in imis.PHASES:
    row = imis.latency_report(log)[phase]
    print(f"  {phase:>18}: p50={row['p50']:>6}us p90={row['p90']:>6}us p99={row['p99']:>6}us")

print()
print("Fast path: a flow with a final result releases later packets instantly.")
key = ("10.0.0.1", "10.0.0.2", 1, 2, 6)
pkts = [imis.make_packet(key, i * 50, i + 1) for i in range(5)]
pkts += [imis.make_packet(key, 100_000 + i, 6 + i) for i in range(3)]
log = imis.run_pipeline(pkts, clf, cfg)
for r in log.releases:
    print(f"  pkt {r.seq}: arrival {r.arrival_us:>6}us release {r.release_us:>6}us "
          f"({'waited' if r.waited else 'instant'})")
