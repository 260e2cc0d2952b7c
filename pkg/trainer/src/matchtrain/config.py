from __future__ import annotations

import math
from dataclasses import dataclass

LOSSES = ("CE", "L1", "L2")


@dataclass
class TrainConfig:
    window_size: int = 8
    n_classes: int = 2
    ev_width: int = 4
    h_width: int = 5
    len_embed_width: int = 6
    ipd_embed_width: int = 6
    len_input_bits: int = 8
    len_shift: int = 3
    ipd_input_bits: int = 8
    ipd_shift: int = 10
    prob_bits: int = 4
    reset_period: int = 128
    loss: str = "L1"
    lam: float = 0.8
    gamma: float = 0.0
    optimizer: str = "AdamW"
    learning_rate: float = 0.01
    epochs: int = 20
    batch_size: int = 256
    seed: int = 0
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.window_size < 2:
            raise ValueError("window size must be >= 2")
        if self.n_classes < 2:
            raise ValueError("need >= 2 classes")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if not (math.isfinite(self.lam) and math.isfinite(self.gamma)):
            raise ValueError("lambda and gamma must be finite")
        if self.lam < 0 or self.gamma < 0:
            raise ValueError("lambda and gamma must be >= 0")
        if self.optimizer not in ("AdamW", "Adam", "SGD"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def len_key(self, length: int) -> int:
        return min(max(int(length), 0) >> self.len_shift, (1 << self.len_input_bits) - 1)

    def ipd_key(self, ipd_us: int) -> int:
        return min(max(int(ipd_us), 0) >> self.ipd_shift, (1 << self.ipd_input_bits) - 1)
