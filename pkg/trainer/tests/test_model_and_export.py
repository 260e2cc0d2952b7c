import json

import numpy as np
import pytest
import torch

from matchtrain import data
from matchtrain.config import TrainConfig
from matchtrain.export import (
    _decode,
    _gru_batch,
    enumerate_tables,
    export_bundle,
    extract_weights,
)
from matchtrain.model import BinaryWindowModel
from matchtrain.train import train_binary_rnn

from conftest import load_segments, small_cfg, toy_trace  # noqa: F401


def numpy_window_probs(w, len_keys, ipd_keys, cfg):
    h = np.zeros((1, cfg.h_width))
    for lk, ik in zip(len_keys, ipd_keys):
        le = np.where(w["len_embed"]["E"][lk][None, :] >= 0, 1.0, -1.0)
        ie = np.where(w["ipd_embed"]["E"][ik][None, :] >= 0, 1.0, -1.0)
        x = np.concatenate([le, ie], axis=1)
        ev = np.where(x @ w["fc"]["W"].T + w["fc"]["b"] >= 0, 1.0, -1.0)
        h = _gru_batch(w["gru"], ev, h)
    logits = h @ w["output"]["W"].T + w["output"]["b"]
    e = np.exp(logits - logits.max())
    return (e / e.sum())[0]


def test_torch_forward_matches_export_semantics():
    torch.manual_seed(2)
    cfg = TrainConfig(window_size=6, n_classes=3, ev_width=4, h_width=5)
    m = BinaryWindowModel(cfg).double()
    w = extract_weights(m)
    rng = np.random.default_rng(0)
    for _ in range(100):
        lk = rng.integers(0, 1 << cfg.len_input_bits, cfg.window_size)
        ik = rng.integers(0, 1 << cfg.ipd_input_bits, cfg.window_size)
        with torch.no_grad():
            p_t = m.probabilities(
                torch.from_numpy(lk[None, :]), torch.from_numpy(ik[None, :])
            ).numpy()[0]
        p_n = numpy_window_probs(w, lk, ik, cfg)
        assert np.allclose(p_t, p_n, atol=1e-12)


def test_table_enumeration_matches_scalar_recomputation():
    torch.manual_seed(3)
    cfg = TrainConfig(
        window_size=5, n_classes=2, ev_width=3, h_width=4,
        len_embed_width=4, ipd_embed_width=4, len_input_bits=6, ipd_input_bits=6,
    )
    m = BinaryWindowModel(cfg)
    w = extract_weights(m)
    tables = enumerate_tables(w, cfg)
    assert set(tables) == {"len_embed", "ipd_embed", "fc", "gru_first", "gru_mid", "output_last"}

    # spot scalar checks against the batch enumeration
    t = tables["gru_mid"]
    for key in range(0, 1 << 7, 7):
        ev = _decode(np.array([key & 7]), 3)
        h = _decode(np.array([key >> 3]), 4)
        want = int(
            ((_gru_batch(w["gru"], ev, h) >= 0).astype(int)[0]
             * (1 << np.arange(4))).sum()
        )
        assert int(t["values"][key]) == want

    t = tables["len_embed"]
    for key in range(1 << 6):
        want = int(((w["len_embed"]["E"][key] >= 0).astype(int) * (1 << np.arange(4))).sum())
        assert int(t["values"][key]) == want


def test_interior_table_size_with_h9_ev6():
    cfg = TrainConfig(window_size=8, n_classes=2, ev_width=6, h_width=9,
                      len_embed_width=4, ipd_embed_width=4,
                      len_input_bits=6, ipd_input_bits=6)
    torch.manual_seed(4)
    m = BinaryWindowModel(cfg)
    tables = enumerate_tables(extract_weights(m), cfg)
    assert len(tables["gru_mid"]["values"]) == 1 << 15  # 2^(9+6)


def test_s2_export_has_single_merged_table():
    cfg = TrainConfig(window_size=2, n_classes=2, ev_width=3, h_width=4,
                      len_embed_width=4, ipd_embed_width=4,
                      len_input_bits=6, ipd_input_bits=6)
    torch.manual_seed(5)
    tables = enumerate_tables(extract_weights(BinaryWindowModel(cfg)), cfg)
    assert "output_first" in tables and "gru_first" not in tables


def test_training_is_seed_deterministic(toy_trace, small_cfg):
    ds = load_segments(toy_trace, small_cfg)
    m1, r1 = train_binary_rnn(small_cfg, ds)
    m2, r2 = train_binary_rnn(small_cfg, ds)
    for p1, p2 in zip(m1.parameters(), m2.parameters()):
        assert torch.equal(p1, p2)
    assert r1.epochs == r2.epochs


def test_reexport_is_byte_identical(tmp_path, toy_trace, small_cfg):
    ds = load_segments(toy_trace, small_cfg)
    paths = []
    for i in range(2):
        model, _ = train_binary_rnn(small_cfg, ds)
        p = tmp_path / f"b{i}.json"
        export_bundle(model, small_cfg, str(p))
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_divergence_detected():
    cfg = TrainConfig(window_size=4, n_classes=2, ev_width=3, h_width=4,
                      len_embed_width=4, ipd_embed_width=4,
                      len_input_bits=6, ipd_input_bits=6,
                      learning_rate=float("inf"), epochs=3, optimizer="SGD", loss="CE")
    rng = np.random.default_rng(0)
    ds = data.SegmentDataset(
        rng.integers(0, 64, (64, 4)), rng.integers(0, 64, (64, 4)),
        rng.integers(0, 2, 64),
    )
    with pytest.raises(RuntimeError):
        # an infinite step poisons the weights with NaN; the loss guard
        # must abort instead of training on garbage
        train_binary_rnn(cfg, ds)


def test_single_class_data_rejected():
    cfg = TrainConfig(window_size=4, n_classes=2, ev_width=3, h_width=4,
                      len_embed_width=4, ipd_embed_width=4,
                      len_input_bits=6, ipd_input_bits=6)
    rng = np.random.default_rng(0)
    ds = data.SegmentDataset(
        rng.integers(0, 64, (32, 4)), rng.integers(0, 64, (32, 4)), np.zeros(32, dtype=np.int64)
    )
    with pytest.raises(ValueError):
        train_binary_rnn(cfg, ds)


def test_bundle_document_shape(tmp_path, toy_trace, small_cfg):
    ds = load_segments(toy_trace, small_cfg)
    model, _ = train_binary_rnn(small_cfg, ds)
    p = tmp_path / "b.json"
    export_bundle(model, small_cfg, str(p), t_conf_fx=[8, 8], t_esc=3)
    doc = json.loads(p.read_text())
    assert doc["format"] == "matchplane-bundle" and doc["version"] == 1
    assert doc["thresholds"] == {"t_conf_fx": [8, 8], "t_esc": 3}
    assert set(doc["weights"]) == {"len_embed", "ipd_embed", "fc", "gru", "output"}
    for slot, t in doc["tables"].items():
        digits = max(1, (t["output_width"] + 3) // 4)
        assert len(t["values_hex"]) == digits * (1 << t["input_width"]), slot
