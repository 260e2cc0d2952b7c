import math

import numpy as np
import pytest

from matchplane import trace
from matchplane.flows import FlowKey

from conftest import three_class_specs


def key(sport=1000, proto=6):
    return FlowKey("10.0.0.1", "10.0.0.2", sport, 80, proto)


class TestSplitFlows:
    def test_gap_over_256ms_starts_new_record(self):
        pkts = [
            trace.PacketEvent(0, key(), 100),
            trace.PacketEvent(100_000, key(), 100),
            trace.PacketEvent(400_001, key(), 100),  # 300ms gap
        ]
        records = trace.split_flows(pkts)
        assert len(records) == 2
        assert [len(r.packets) for r in records] == [2, 1]

    def test_gap_at_exactly_256ms_does_not_split(self):
        pkts = [
            trace.PacketEvent(0, key(), 100),
            trace.PacketEvent(256_000, key(), 100),
        ]
        assert len(trace.split_flows(pkts)) == 1

    def test_non_tcp_udp_dropped(self):
        pkts = [
            trace.PacketEvent(0, key(proto=6), 100),
            trace.PacketEvent(1, key(sport=2, proto=1), 100),  # ICMP
            trace.PacketEvent(2, key(sport=3, proto=17), 100),
        ]
        records = trace.split_flows(pkts)
        assert sum(len(r.packets) for r in records) == 2

    def test_packet_count_conserved_after_drops(self):
        rng = np.random.default_rng(1)
        pkts = []
        t = 0
        for i in range(500):
            t += int(rng.integers(0, 400_000))
            pkts.append(trace.PacketEvent(t, key(sport=int(rng.integers(1, 6))), 100))
        records = trace.split_flows(pkts)
        assert sum(len(r.packets) for r in records) == len(pkts)


class TestSynth:
    def test_deterministic(self):
        specs = three_class_specs()
        a = trace.synth_trace(specs, 30, seed=5)
        b = trace.synth_trace(specs, 30, seed=5)
        assert a.packets == b.packets

    def test_seed_changes_trace(self):
        specs = three_class_specs()
        a = trace.synth_trace(specs, 30, seed=5)
        b = trace.synth_trace(specs, 30, seed=6)
        assert a.packets != b.packets

    def test_labels_follow_specs(self):
        specs = three_class_specs()
        t = trace.synth_trace(specs, 30, seed=5)
        assert t.n_classes == 3
        assert {p.label for p in t.packets} == {0, 1, 2}

    def test_length_means_within_3_sigma(self):
        specs = three_class_specs(flow_len=(20, 40))
        t = trace.synth_trace(specs, 60, seed=7)
        for cls, spec in enumerate(specs):
            lens = [p.length for p in t.packets if p.label == cls]
            sem = spec.length_std / math.sqrt(len(lens))
            assert abs(np.mean(lens) - spec.length_mean) <= 3 * sem + 1.0

    def test_degenerate_specs_flagged(self):
        s = trace.ClassSpec(100, 10, 1000, 100)
        t = trace.synth_trace([s, s], 10, seed=1)
        assert t.degenerate_classes

    def test_needs_two_classes(self):
        with pytest.raises(ValueError):
            trace.synth_trace([trace.ClassSpec(100, 10, 1000, 100)], 10, seed=1)


class TestReplay:
    def test_release_window_matches_load(self):
        specs = three_class_specs()
        base = trace.synth_trace(specs, 100, seed=2)
        out = trace.replay(base, load_fps=2000, total_flows=2000)
        records = trace.split_flows(out.packets)
        assert len(records) == 2000
        starts = sorted(r.packets[0].time_us for r in records)
        # 2000 flows at 2000/s -> released across one second
        assert starts[0] == 0
        assert math.isclose(starts[-1], 1e6 * (2000 - 1) / 2000, rel_tol=0.01)
        # achieved load within 1%
        window_s = (starts[-1] - starts[0]) / 1e6 + 1 / 2000
        assert math.isclose(len(starts) / window_s, 2000, rel_tol=0.01)

    def test_uniform_spacing(self):
        specs = three_class_specs()
        base = trace.synth_trace(specs, 10, seed=2)
        out = trace.replay(base, load_fps=100, total_flows=10)
        starts = sorted(r.packets[0].time_us for r in trace.split_flows(out.packets))
        gaps = {b - a for a, b in zip(starts, starts[1:])}
        assert gaps == {10_000}

    def test_infinite_load_starts_all_at_zero(self):
        specs = three_class_specs()
        base = trace.synth_trace(specs, 20, seed=3)
        out = trace.replay(base, load_fps=math.inf)
        starts = {r.packets[0].time_us for r in trace.split_flows(out.packets)}
        assert starts == {0}

    def test_intra_flow_ipds_preserved(self):
        specs = three_class_specs()
        base = trace.synth_trace(specs, 10, seed=4)
        out = trace.replay(base, load_fps=10)
        base_records = trace.split_flows(base.packets)
        out_records = trace.split_flows(out.packets)
        base_by_key = {r.key: r for r in base_records}
        for rec in out_records:
            orig = base_by_key[rec.key]
            want = [p.time_us - orig.packets[0].time_us for p in orig.packets]
            got = [p.time_us - rec.packets[0].time_us for p in rec.packets]
            assert got == want

    def test_loop_remaps_ports(self):
        specs = three_class_specs()
        base = trace.synth_trace(specs, 5, seed=5)
        out = trace.replay(base, load_fps=1000, total_flows=12)
        assert len(trace.split_flows(out.packets)) == 12

    def test_rejects_bad_load(self):
        specs = three_class_specs()
        base = trace.synth_trace(specs, 5, seed=5)
        with pytest.raises(ValueError):
            trace.replay(base, load_fps=0)


class TestIO:
    def test_text_roundtrip(self, tmp_path):
        specs = three_class_specs()
        t = trace.synth_trace(specs, 20, seed=8)
        p = tmp_path / "t.txt"
        trace.save_trace(t, str(p))
        again = trace.load_trace(str(p))
        assert again.packets == t.packets
        assert again.n_classes == 3

    def test_unlabeled_column_optional(self, tmp_path):
        p = tmp_path / "t.txt"
        p.write_text("# matchplane-trace v1\n100 10.0.0.1 10.0.0.2 5 80 6 200\n")
        t = trace.load_trace(str(p))
        assert t.packets[0].label is None

    def test_malformed_lines_counted_and_skipped(self, tmp_path):
        p = tmp_path / "t.txt"
        p.write_text(
            "100 10.0.0.1 10.0.0.2 5 80 6 200 0\n"
            "garbage line\n"
            "101 10.0.0.1 10.0.0.2 x 80 6 200 0\n"
            "102 10.0.0.1 10.0.0.2 5 80 6 201 0\n"
        )
        t = trace.load_trace(str(p))
        assert len(t.packets) == 2
        assert t.skipped_records == 2

    def test_binary_roundtrip(self, tmp_path):
        specs = three_class_specs()
        t = trace.synth_trace(specs, 20, seed=9)
        p = tmp_path / "t.bin"
        trace.save_trace_binary(t, str(p))
        again = trace.load_trace_binary(str(p))
        assert again.packets == t.packets

    def test_nondecreasing_timestamps_enforced(self):
        with pytest.raises(ValueError):
            trace.Trace(packets=[
                trace.PacketEvent(5, key(), 10),
                trace.PacketEvent(4, key(), 10),
            ])
