import numpy as np
import pytest

from matchtrain import data
from matchtrain.config import TrainConfig

from conftest import toy_flows, write_trace


def flow_of(n_pkts, label=0, start=0, ipd=1000, key=None):
    key = key or ("10.0.0.1", "10.0.0.2", 1, 2, 6)
    pkts = [data.Packet(start + i * ipd, key, 100 + i, label) for i in range(n_pkts)]
    return data.Flow(key=key, packets=pkts)


def test_flow_of_length_10_gives_3_segments_at_s8():
    cfg = TrainConfig(window_size=8, n_classes=2)
    ds = data.slice_segments([flow_of(10), flow_of(9, label=1, key=("1.1.1.1", "2.2.2.2", 3, 4, 6))], cfg)
    assert int((ds.labels == 0).sum()) == 3  # 10 - 8 + 1


def test_flow_of_length_s_gives_one_segment():
    cfg = TrainConfig(window_size=8, n_classes=2)
    ds = data.slice_segments([flow_of(8)], cfg)
    assert len(ds) == 1


def test_shorter_flows_skipped():
    cfg = TrainConfig(window_size=8, n_classes=2)
    ds = data.slice_segments([flow_of(7)], cfg)
    assert len(ds) == 0


def test_total_segments_matches_counting_oracle():
    cfg = TrainConfig(window_size=5, n_classes=2)
    rng = np.random.default_rng(3)
    lengths = [int(v) for v in rng.integers(1, 20, 50)]
    flows = [
        flow_of(n, label=i % 2, key=(f"10.0.0.{i}", "10.0.0.2", i, 2, 6))
        for i, n in enumerate(lengths)
    ]
    ds = data.slice_segments(flows, cfg)
    assert len(ds) == data.segment_count_oracle(lengths, 5)


def test_ipds_are_per_flow_not_per_segment():
    cfg = TrainConfig(
        window_size=3, n_classes=2, ipd_shift=0, ipd_input_bits=12, len_shift=0, len_input_bits=10
    )
    f = flow_of(5, ipd=100)
    ds = data.slice_segments([f], cfg)
    # first segment starts at the flow head: ipd keys (0, 100, 100)
    assert ds.ipd_keys[0].tolist() == [0, 100, 100]
    # later segments keep the true per-flow ipd of their first packet
    assert ds.ipd_keys[1].tolist() == [100, 100, 100]


def test_quantizers_clamp_and_shift():
    cfg = TrainConfig(len_shift=3, len_input_bits=6, ipd_shift=10, ipd_input_bits=6, n_classes=2)
    assert cfg.len_key(0) == 0
    assert cfg.len_key(64) == 8
    assert cfg.len_key(10**6) == 63
    assert cfg.ipd_key(1 << 10) == 1
    assert cfg.ipd_key(-5) == 0


def test_unlabeled_flow_rejected():
    cfg = TrainConfig(window_size=3, n_classes=2)
    f = flow_of(5)
    f.packets = [data.Packet(p.time_us, p.key, p.length, None) for p in f.packets]
    with pytest.raises(ValueError):
        data.slice_segments([f], cfg)


def test_trace_roundtrip_through_files(tmp_path, toy_trace):
    packets = data.read_trace(toy_trace)
    assert packets
    flows = data.split_flows(packets)
    assert len(flows) == 40
    assert {f.label for f in flows} == {0, 1}


def test_split_respects_gap_rule(tmp_path):
    key = ("10.0.0.1", "10.0.0.2", 1, 2, 6)
    flows = [(key, [(0, 100), (100_000, 100), (400_001, 100)], 0),
             (("1.1.1.1", "2.2.2.2", 3, 4, 6), [(5, 100)], 1)]
    path = tmp_path / "t.txt"
    write_trace(str(path), flows)
    got = data.split_flows(data.read_trace(str(path)))
    assert sorted(len(f.packets) for f in got) == [1, 1, 2]
