"""Hash-indexed flow slots: admission, collision fallback, timeout reuse."""

from matchplane.flows import Admit, Fallback, FlowKey, FlowTable

ft = FlowTable(n_slots=8, timeout_us=256_000, S=4, n_classes=2)

a = FlowKey("10.0.0.1", "10.0.0.2", 1000, 80, 6)
print(f"flow A -> slot {ft.index_of(a)}, TrueID {ft.true_id_of(a):08x}")
res = ft.admit(a, now=0)
print(f"admit A at t=0: fresh={res.fresh}")

# find a second five-tuple that hashes to A's slot with a different TrueID
b = None
for sport in range(1001, 100000):
    cand = FlowKey("10.0.0.1", "10.0.0.2", sport % 65536, 80, 6)
    if ft.index_of(cand) == ft.index_of(a) and ft.true_id_of(cand) != ft.true_id_of(a):
        b = cand
        break
print(f"flow B (sport {b.sport}) collides on slot {ft.index_of(b)}")

res = ft.admit(b, now=50_000)
print(f"admit B at t=50ms while A is live -> {type(res).__name__} "
      "(B uses the per-packet model)")

res = ft.admit(b, now=400_000)
print(f"admit B at t=400ms, A idle past the 256ms timeout -> "
      f"{type(res).__name__}, fresh={res.fresh} (B takes the slot)")

res = ft.admit(a, now=700_000)
print(f"admit A again at t=700ms -> fresh={res.fresh} with zeroed state "
      f"(pktcnt={res.slot.pktcnt}, cpr={res.slot.cpr_state.cpr})")

print()
print("IPD comes from the stored previous timestamp:")
ft2 = FlowTable(n_slots=1024, S=4, n_classes=2)
key = FlowKey("10.9.9.9", "10.0.0.2", 5, 5, 17)
for t in (1_000, 1_250, 3_000):
    r = ft2.admit(key, now=t)
    print(f"  packet at t={t}us: ipd = {ft2.ipd_of(r.slot, t)}us")
