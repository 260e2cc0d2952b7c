"""Secondary acceptance: the trainer's exit criteria, one line printed each.

The engine is exercised only through its CLI and file formats.
"""

import json
import time

import numpy as np
import pytest
import torch

from matchtrain import data, forest
from matchtrain.config import TrainConfig
from matchtrain.export import export_bundle
from matchtrain.losses import ce_loss, l1_loss
from matchtrain.ste import hardtanh_surrogate, sign_ste
from matchtrain.train import train_binary_rnn

from conftest import run_primary, write_trace


def report(name, t0, detail=""):
    print(f"[PASS] {name} ({time.monotonic() - t0:.2f}s) {detail}")


def test_end_to_end_learning_sanity(tmp_path):
    """Separable 2-class trace -> train -> export -> engine replay >= 0.95."""
    t0 = time.monotonic()
    raw = tmp_path / "raw.txt"
    replayed = tmp_path / "t.txt"
    run_primary(["synth", "--flows", "400", "--seed", "11", "-o", str(raw)])
    run_primary(["replay", "-i", str(raw), "--load", "1000", "-o", str(replayed)])

    packets = data.read_trace(str(replayed))
    flows = data.split_flows(packets)
    cfg = TrainConfig(
        window_size=8, n_classes=2, ev_width=4, h_width=5,
        len_embed_width=6, ipd_embed_width=6,
        len_input_bits=8, len_shift=3, ipd_input_bits=8, ipd_shift=10,
        loss="L1", lam=0.8, gamma=0.0, epochs=12, seed=0,
    )
    segments = data.slice_segments(flows, cfg)
    model, train_report = train_binary_rnn(cfg, segments)

    feats, labels = data.packet_features(packets)
    tree = forest.train_fallback_tree(feats, labels, 2, seed=0)

    bundle_path = tmp_path / "trained.json"
    export_bundle(model, cfg, str(bundle_path), fallback_tree=tree)

    report_path = tmp_path / "report.json"
    run_primary([
        "run", "--bundle", str(bundle_path), "--trace", str(replayed),
        "--report", str(report_path),
    ])
    doc = json.loads(report_path.read_text())
    assert doc["macro_f1"] >= 0.95
    assert time.monotonic() - t0 < 300  # the 5-minute CPU budget
    report(
        "end-to-end learning sanity: engine replay macro-F1 >= 0.95",
        t0,
        f"(val_acc={train_report.val_accuracy:.3f}, macro_f1={doc['macro_f1']:.4f}, "
        f"counts={doc['counts']})",
    )


def test_loss_identity_and_ste_gradient():
    t0 = time.monotonic()
    gen = torch.Generator().manual_seed(7)
    worst = 0.0
    for _ in range(100):
        logits = torch.randn(32, 4, generator=gen, dtype=torch.float64)
        p = torch.softmax(logits, dim=1)
        y = torch.randint(0, 4, (32,), generator=gen)
        worst = max(worst, (l1_loss(p, y, 0.0, 0.0) - ce_loss(p, y)).abs().max().item())
    assert worst < 1e-7

    checked = 0
    fd_worst = 0.0
    for _ in range(20):
        W = torch.randn(5, 3, generator=gen, dtype=torch.float64)
        b = torch.randn(5, generator=gen, dtype=torch.float64)
        x = torch.randn(3, generator=gen, dtype=torch.float64)
        pre = W @ x + b
        if (pre.abs() - 1.0).abs().min() < 1e-3 or pre.abs().min() < 1e-3:
            continue
        Wg = W.clone().requires_grad_(True)
        sign_ste(Wg @ x + b).sum().backward()
        eps = 1e-6
        for i in range(5):
            for j in range(3):
                d = torch.zeros_like(W)
                d[i, j] = eps
                fd = (
                    hardtanh_surrogate((W + d) @ x + b).sum()
                    - hardtanh_surrogate((W - d) @ x + b).sum()
                ).item() / (2 * eps)
                fd_worst = max(fd_worst, abs(fd - Wg.grad[i, j].item()))
                checked += 1
    assert checked > 0
    assert fd_worst < 1e-6
    report(
        "loss identity L1(0,0)=CE and STE-vs-surrogate finite differences",
        t0,
        f"(max loss gap {worst:.2e}, max grad gap {fd_worst:.2e} over {checked} partials)",
    )


def test_cross_component_bundle_roundtrip(tmp_path):
    """Exported bundle passes the engine's verify; forest predictions agree
    packet-for-packet across the two implementations."""
    t0 = time.monotonic()
    # a small trained bundle
    flows = []
    rng = np.random.default_rng(13)
    for i in range(60):
        label = i % 2
        key = (f"10.1.{i >> 8}.{i & 255}", "192.168.0.1", 2000 + i, 443, 6 if label == 0 else 17)
        t = i * 500
        pkts = []
        for _ in range(12):
            t += int(rng.integers(500, 2500) if label == 0 else rng.integers(25_000, 60_000))
            pkts.append((t, int(rng.integers(80, 180) if label == 0 else rng.integers(900, 1400))))
        flows.append((key, pkts, label))
    trace_path = tmp_path / "train.txt"
    write_trace(str(trace_path), flows)

    packets = data.read_trace(str(trace_path))
    cfg = TrainConfig(
        window_size=4, n_classes=2, ev_width=3, h_width=4,
        len_embed_width=4, ipd_embed_width=4, len_input_bits=6, ipd_input_bits=6,
        epochs=5, seed=3,
    )
    segments = data.slice_segments(data.split_flows(packets), cfg)
    model, _ = train_binary_rnn(cfg, segments)
    feats, labels = data.packet_features(packets)
    tree = forest.train_fallback_tree(feats, labels, 2, seed=3)
    bundle_path = tmp_path / "b.json"
    export_bundle(model, cfg, str(bundle_path), fallback_tree=tree)

    # (a) the engine's verify command: recompile equality and oracles
    proc = run_primary(["verify", "--bundle", str(bundle_path), "--trials", "256"])
    assert "[FAIL]" not in proc.stdout
    assert "tables bit-identical to recompilation" in proc.stdout

    # (b) forest predictions on 10^4 packets: single-packet flows are
    # classified by the engine's per-packet path (pre-analysis/fallback),
    # so the decision dump exposes its tree inference directly
    rng = np.random.default_rng(14)
    n = 10_000
    probe = []
    lengths = rng.integers(40, 1501, n)
    protos = rng.choice([6, 17], n)
    for i in range(n):
        key = (
            f"10.{(i >> 16) & 255}.{(i >> 8) & 255}.{i & 255}",
            "192.168.9.9", 1024 + (i % 60000), 443, int(protos[i]),
        )
        probe.append((key, [(i * 10, int(lengths[i]))], 0))
    probe_path = tmp_path / "probe.txt"
    write_trace(str(probe_path), probe)
    decisions_path = tmp_path / "decisions.txt"
    run_primary([
        "run", "--bundle", str(bundle_path), "--trace", str(probe_path),
        "--decisions", str(decisions_path),
    ])
    engine_pred = {}
    for line in decisions_path.read_text().splitlines():
        if line.startswith("#"):
            continue
        idx, category, pred, _ = line.split()
        assert category in ("pre_analysis", "fallback")
        engine_pred[int(idx)] = int(pred)
    assert len(engine_pred) == n
    mismatches = 0
    for i, (key, pkts, _) in enumerate(probe):
        mine = forest.infer(tree, {"length": pkts[0][1], "protocol": key[4]})
        if mine != engine_pred[i]:
            mismatches += 1
    assert mismatches == 0
    report(
        "cross-component round-trip: verify green, forest identical on 1e4 packets",
        t0,
        f"(0 mismatches / {n})",
    )
