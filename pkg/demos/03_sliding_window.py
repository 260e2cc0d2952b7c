"""The per-flow sliding-window machinery, one packet at a time.

Shows the two parallel counters, the (S-1)-bin ring buffer against a
naive full-history oracle, CPR accumulation with the division-free
confidence check, and the periodic reset that spares the ring.
"""

from matchplane import window
from matchplane.oracles import NaiveWindowOracle

S = 4
print(f"=== Counters and ring for S={S} ===")
c = window.PacketCounters.fresh(S)
rb = window.RingBuffer.fresh(S)
oracle = NaiveWindowOracle(S)
for k in range(1, 11):
    ev = 10 * k
    c = window.advance_counters(c, S)
    want = oracle.push(ev)
    if c.ctr1 < S:
        window.store_ev(rb, c, ev, S)
        print(f"pkt {k:>2}: ctr1={c.ctr1} ctr2={c.ctr2} ring={rb.bins}  (window not full)")
    else:
        got = window.store_and_gather(rb, c, ev, S)
        print(f"pkt {k:>2}: ctr1={c.ctr1} ctr2={c.ctr2} ring={rb.bins}  window={got} "
              f"oracle={'ok' if got == want else 'MISMATCH'}")

print()
print("=== CPR accumulation, confidence, escalation ===")
st = window.CprState.fresh(3)
t_conf = (8, 8, 8)  # 0.5 in the 4-bit fixed-point scale
prs = [(15, 0, 0), (9, 5, 1), (3, 12, 0), (2, 13, 0), (1, 14, 0)]
pktcnt = S - 1
for pr in prs:
    pktcnt += 1
    d, st = window.accumulate_and_decide(
        st, pr, t_conf_fx=t_conf, t_esc=2, prob_bits=4, reset_period=128
    )
    conf = window.quantized_confidence(st.cpr[d.cls], st.wincnt, 4)
    print(f"PR={pr}: CPR={st.cpr} wincnt={st.wincnt} -> class {d.cls}, "
          f"conf {conf}/16 {'AMBIGUOUS' if d.ambiguous else 'confident'}"
          + ("  ** escalation triggered **" if d.escalation_triggered else ""))

print()
print("=== Periodic reset clears CPR + wincnt, keeps esccnt and the ring ===")
before = st
st = window.periodic_reset(st, pktcnt=128, K=128)
print(f"before: cpr={before.cpr} wincnt={before.wincnt} esccnt={before.esccnt} esc={before.esc_flag}")
print(f"after : cpr={st.cpr} wincnt={st.wincnt} esccnt={st.esccnt} esc={st.esc_flag}")
print(f"ring untouched: {rb.bins}")
