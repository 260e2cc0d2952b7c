"""Trainer CLI: fit the window model + per-packet forest, export a bundle."""

from __future__ import annotations

import argparse
import json
import sys

from . import data, forest
from .config import TrainConfig
from .export import export_bundle
from .train import train_binary_rnn


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="matchtrain", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)
    t = sub.add_parser("train", help="train on a labeled trace and export a bundle")
    t.add_argument("--trace", required=True, help="labeled trace (engine text format)")
    t.add_argument("--out", required=True, help="bundle output path")
    t.add_argument("--window", type=int, default=8)
    t.add_argument("--ev-width", type=int, default=4)
    t.add_argument("--h-width", type=int, default=5)
    t.add_argument("--len-embed-width", type=int, default=6)
    t.add_argument("--ipd-embed-width", type=int, default=6)
    t.add_argument("--len-input-bits", type=int, default=8)
    t.add_argument("--len-shift", type=int, default=3)
    t.add_argument("--ipd-input-bits", type=int, default=8)
    t.add_argument("--ipd-shift", type=int, default=10)
    t.add_argument("--loss", choices=("CE", "L1", "L2"), default="L1")
    t.add_argument("--lam", type=float, default=0.8)
    t.add_argument("--gamma", type=float, default=0.0)
    t.add_argument("--optimizer", default="AdamW")
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--epochs", type=int, default=20)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--no-tree", action="store_true", help="skip the fallback forest")
    t.add_argument("--report", help="write the training report JSON here")
    args = ap.parse_args(argv)

    packets = data.read_trace(args.trace)
    flows = data.split_flows(packets)
    labels = {f.label for f in flows}
    if None in labels:
        print("error: trace must be fully labeled", file=sys.stderr)
        return 2
    n_classes = max(labels) + 1

    cfg = TrainConfig(
        window_size=args.window,
        n_classes=n_classes,
        ev_width=args.ev_width,
        h_width=args.h_width,
        len_embed_width=args.len_embed_width,
        ipd_embed_width=args.ipd_embed_width,
        len_input_bits=args.len_input_bits,
        len_shift=args.len_shift,
        ipd_input_bits=args.ipd_input_bits,
        ipd_shift=args.ipd_shift,
        loss=args.loss,
        lam=args.lam,
        gamma=args.gamma,
        optimizer=args.optimizer,
        learning_rate=args.lr,
        epochs=args.epochs,
        seed=args.seed,
    )
    segments = data.slice_segments(flows, cfg)
    print(
        f"{len(flows)} flows, {len(segments)} segments of {cfg.window_size} packets, "
        f"{n_classes} classes",
        file=sys.stderr,
    )
    model, report = train_binary_rnn(cfg, segments)
    print(f"validation accuracy: {report.val_accuracy:.4f}", file=sys.stderr)

    tree = None
    if not args.no_tree:
        feats, ys = data.packet_features(packets)
        tree = forest.train_fallback_tree(feats, ys, n_classes, seed=cfg.seed)

    export_bundle(model, cfg, args.out, fallback_tree=tree)
    print(f"wrote bundle to {args.out}", file=sys.stderr)
    if args.report:
        with open(args.report, "w") as fp:
            json.dump(report.to_json(), fp, indent=1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
