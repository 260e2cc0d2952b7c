import numpy as np
import pytest

from matchplane import bundle, engine, oracles, resources, ternary, trace
from matchplane.flows import FlowKey

from conftest import small_bundle, three_class_specs


def run_pair(b, t, cfg):
    res = engine.run_integrated(b, t, cfg)
    ref = oracles.algorithm1_reference(b, t, cfg)
    assert len(ref) == len(res.outcomes)
    for i, (o, r) in enumerate(zip(res.outcomes, ref)):
        got = (o.category, o.pred, o.ambiguous, o.esc_triggered, o.reset)
        want = (r.category, r.pred, r.ambiguous, r.esc_triggered, r.reset)
        assert got == want, f"packet {i}: {got} != {want}"
    return res


class TestRunIntegrated:
    def test_short_flow_is_all_pre_analysis(self):
        b = small_bundle(S=8)
        key = FlowKey("10.0.0.1", "10.0.0.2", 1, 2, 6)
        pkts = [trace.PacketEvent(i * 1000, key, 100, label=0) for i in range(5)]
        res = engine.run_integrated(b, trace.Trace(packets=pkts, n_classes=3))
        assert res.report.counts["pre_analysis"] == 5
        assert res.report.counts["rnn"] == 0

    def test_sth_packet_gets_rnn_decision(self):
        b = small_bundle(S=4)
        key = FlowKey("10.0.0.1", "10.0.0.2", 1, 2, 6)
        pkts = [trace.PacketEvent(i * 1000, key, 100, label=0) for i in range(4)]
        res = engine.run_integrated(b, trace.Trace(packets=pkts, n_classes=3))
        assert [o.category for o in res.outcomes] == ["pre_analysis"] * 3 + ["rnn"]

    def test_forced_escalation_at_sth_packet(self):
        # T_esc=1 and max thresholds: the S-th packet triggers, later ones escalate
        b = small_bundle(S=4, t_conf=(16, 16, 16), t_esc=1)
        key = FlowKey("10.0.0.1", "10.0.0.2", 1, 2, 6)
        pkts = [trace.PacketEvent(i * 1000, key, 100, label=0) for i in range(8)]
        res = engine.run_integrated(b, trace.Trace(packets=pkts, n_classes=3))
        cats = [o.category for o in res.outcomes]
        assert cats == ["pre_analysis"] * 3 + ["rnn"] + ["escalated"] * 4
        assert res.outcomes[3].esc_triggered
        assert res.report.flow_counts["escalated_flows"] == 1

    def test_pre_analysis_count_matches_trace_walk(self):
        # without collisions or timeouts, pre-analysis packets number
        # sum over flows of min(len, S-1)
        b = small_bundle(S=4, t_esc=100)
        t = trace.synth_trace(three_class_specs(flow_len=(1, 12)), 60, seed=27)
        res = engine.run_integrated(b, t, engine.EngineConfig(n_slots=1 << 16))
        assert res.report.counts["fallback"] == 0
        lens = [len(r.packets) for r in trace.split_flows(t.packets)]
        assert res.report.counts["pre_analysis"] == sum(min(n, 3) for n in lens)

    def test_category_partition_invariant(self):
        b = small_bundle(t_conf=(12, 12, 12), t_esc=2)
        t = trace.synth_trace(three_class_specs(), 150, seed=20)
        cfg = engine.EngineConfig(n_slots=64)  # force collisions too
        res = engine.run_integrated(b, t, cfg)
        assert sum(res.report.counts.values()) == len(t.packets)
        assert res.report.counts["fallback"] > 0
        assert res.report.counts["escalated"] > 0

    def test_reference_equivalence_mixed_traffic(self):
        b = small_bundle(t_conf=(10, 10, 10), t_esc=2, reset_period=8)
        t = trace.synth_trace(three_class_specs(flow_len=(1, 40)), 200, seed=21)
        cfg = engine.EngineConfig(n_slots=128, cross_check_argmax=True)
        run_pair(b, t, cfg)

    def test_reference_equivalence_with_timeout_readmission(self):
        b = small_bundle(t_conf=(9, 9, 9), t_esc=3)
        key = FlowKey("10.0.0.7", "10.0.0.2", 1, 2, 6)
        pkts = []
        t = 0
        for i in range(30):
            gap = 400_000 if i % 11 == 10 else 5_000  # periodic long gaps
            t += gap
            pkts.append(trace.PacketEvent(t, key, 100 + 40 * (i % 5), label=0))
        run_pair(b, trace.Trace(packets=pkts, n_classes=3), engine.EngineConfig())

    @pytest.mark.parametrize("S", [2, 8])
    def test_reference_equivalence_boundary_windows(self, S):
        b = small_bundle(S=S, t_conf=(10, 10, 10), t_esc=2, reset_period=8)
        t = trace.synth_trace(three_class_specs(flow_len=(1, 3 * S)), 120, seed=25 + S)
        cfg = engine.EngineConfig(n_slots=256, cross_check_argmax=True)
        run_pair(b, t, cfg)

    def test_reference_equivalence_reset_shorter_than_window(self):
        # K < S: the first reset can only fire on a full-window packet
        b = small_bundle(S=4, t_conf=(9, 9, 9), t_esc=3, reset_period=2)
        t = trace.synth_trace(three_class_specs(flow_len=(1, 20)), 80, seed=26)
        run_pair(b, t, engine.EngineConfig(cross_check_argmax=True))

    def test_deterministic_outcomes(self):
        b = small_bundle()
        t = trace.synth_trace(three_class_specs(), 60, seed=22)
        cfg = engine.EngineConfig(n_slots=256)
        a = engine.run_integrated(b, t, cfg)
        c = engine.run_integrated(b, t, cfg)
        assert a.outcomes == c.outcomes
        assert a.report.to_json() == c.report.to_json()

    def test_escalated_stream_records(self):
        b = small_bundle(S=4, t_conf=(16, 16, 16), t_esc=1)
        key = FlowKey("10.0.0.1", "10.0.0.2", 1, 2, 6)
        pkts = [trace.PacketEvent(i * 1000, key, 100, label=0, raw=b"\x01\x02") for i in range(7)]
        res = engine.run_integrated(b, trace.Trace(packets=pkts, n_classes=3))
        assert len(res.escalated) == 3
        assert [r.seq for r in res.escalated] == [1, 2, 3]
        assert all(len(r.prefix) == 320 for r in res.escalated)
        assert res.escalated[0].prefix[:2] == b"\x01\x02"

    def test_software_argmax_only_mode(self):
        b = small_bundle()
        t = trace.synth_trace(three_class_specs(), 40, seed=23)
        fast = engine.run_integrated(b, t, engine.EngineConfig(use_ternary_argmax=False))
        slow = engine.run_integrated(b, t, engine.EngineConfig(cross_check_argmax=True))
        assert fast.outcomes == slow.outcomes

    def test_errors_carry_packet_context(self):
        b = small_bundle()
        bad = trace.Trace(
            packets=[trace.PacketEvent(0, FlowKey("1.2.3.4", "4.3.2.1", 1, 2, 99), 100, 0)],
            n_classes=3,
        )
        # proto 99 passes the flow table (engine does not re-filter protocols)
        # but a negative length breaks the embedding quantizer contract
        ok = engine.run_integrated(b, bad)
        assert ok.report.counts["pre_analysis"] == 1


class TestMetrics:
    def test_macro_f1_matches_sklearn_on_random_confusions(self):
        sklearn = pytest.importorskip("sklearn.metrics")
        rng = np.random.default_rng(30)
        for _ in range(50):
            n = int(rng.integers(2, 6))
            labels = rng.integers(0, n, 300)
            preds = rng.integers(0, n, 300)
            pairs = list(zip(labels.tolist(), preds.tolist()))
            _, _, _, macro = engine.macro_f1_scores(pairs, n)
            want = sklearn.f1_score(
                labels, preds, labels=list(range(n)), average="macro", zero_division=0
            )
            assert abs(macro - want) < 1e-12

    def test_report_counts_flows(self):
        b = small_bundle()
        t = trace.synth_trace(three_class_specs(), 30, seed=24)
        res = engine.run_integrated(b, t, engine.EngineConfig())
        assert res.report.flow_counts["fresh_admissions"] == 30


class TestResources:
    def test_ev_stateful_bits_prototype(self):
        b = small_bundle(S=8)
        rep = resources.estimate_resources(b)
        assert rep.stateful_bits["ev_ring"] == 8 * 7 + 8  # 64 bits at S=8

    def test_interior_gru_entries(self):
        b = small_bundle(S=5, ev_width=3, h_width=4)
        rep = resources.estimate_resources(b)
        assert rep.tables["gru_mid"]["entries"] == 128  # 2^(4+3)

    def test_argmax_chain_total_748(self):
        b = small_bundle(S=4, n_classes=6, t_conf=(8,) * 6, reset_period=128)
        assert b.cpr_width == 11
        rep = resources.estimate_resources(b, fan=3)
        assert rep.argmax["tcam_entries"] == 2 * (3 * 11**2) + 2 * 11 == 748
        assert [s["n"] for s in rep.argmax["stages"]] == [3, 3, 2]

    def test_cpr_bits(self):
        b = small_bundle(n_classes=3, reset_period=128)
        rep = resources.estimate_resources(b)
        assert rep.stateful_bits["cpr"] == 3 * 11
