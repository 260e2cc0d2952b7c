"""Training loop: seed-deterministic, single-threaded CPU."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .config import TrainConfig
from .data import SegmentDataset
from .losses import loss_fn
from .model import BinaryWindowModel


@dataclass
class TrainReport:
    epochs: list[dict] = field(default_factory=list)
    val_accuracy: float = 0.0
    train_segments: int = 0
    val_segments: int = 0

    def to_json(self) -> dict:
        return {
            "val_accuracy": self.val_accuracy,
            "train_segments": self.train_segments,
            "val_segments": self.val_segments,
            "epochs": self.epochs,
        }


def _split(ds: SegmentDataset, val_fraction: float, rng: np.random.Generator):
    n = len(ds)
    idx = rng.permutation(n)
    n_val = max(1, int(n * val_fraction)) if n > 1 else 0
    val, train = idx[:n_val], idx[n_val:]
    return train, val


def train_binary_rnn(cfg: TrainConfig, ds: SegmentDataset) -> tuple[BinaryWindowModel, TrainReport]:
    """Fit the window model on sliced segments; returns (model, report).

    Deterministic for a fixed config and dataset: fixed torch seed, one
    thread, full-batch order from a seeded permutation per epoch.
    """
    if len(ds) == 0:
        raise ValueError("no segments to train on (all flows shorter than S?)")
    classes = np.unique(ds.labels)
    if classes.size < 2:
        raise ValueError("need at least two classes present in the segments")

    torch.manual_seed(cfg.seed)
    n_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        model = BinaryWindowModel(cfg)
        opt_cls = {"AdamW": torch.optim.AdamW, "Adam": torch.optim.Adam, "SGD": torch.optim.SGD}[
            cfg.optimizer
        ]
        opt = opt_cls(model.parameters(), lr=cfg.learning_rate)

        rng = np.random.default_rng(cfg.seed)
        train_idx, val_idx = _split(ds, cfg.val_fraction, rng)
        lk = torch.from_numpy(ds.len_keys)
        ik = torch.from_numpy(ds.ipd_keys)
        y = torch.from_numpy(ds.labels)

        report = TrainReport(train_segments=len(train_idx), val_segments=len(val_idx))
        for epoch in range(cfg.epochs):
            model.train()
            order = rng.permutation(train_idx)
            total = 0.0
            for start in range(0, len(order), cfg.batch_size):
                batch = torch.from_numpy(order[start : start + cfg.batch_size])
                p = model.probabilities(lk[batch], ik[batch])
                loss = loss_fn(cfg.loss, p, y[batch], cfg.lam, cfg.gamma).mean()
                if not torch.isfinite(loss):
                    raise RuntimeError(
                        f"training diverged: loss {loss.item()} at epoch {epoch}"
                    )
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += loss.item() * len(batch)
            val_acc = _accuracy(model, lk, ik, y, val_idx)
            report.epochs.append(
                {"epoch": epoch, "loss": total / max(len(order), 1), "val_accuracy": val_acc}
            )
        report.val_accuracy = report.epochs[-1]["val_accuracy"] if report.epochs else 0.0
        return model, report
    finally:
        torch.set_num_threads(n_threads)


@torch.no_grad()
def _accuracy(model, lk, ik, y, idx) -> float:
    if len(idx) == 0:
        return 0.0
    model.eval()
    sel = torch.from_numpy(np.asarray(idx))
    pred = model.forward(lk[sel], ik[sel]).argmax(dim=1)
    return float((pred == y[sel]).float().mean())
