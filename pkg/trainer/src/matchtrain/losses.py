"""Training losses over softmax probabilities.

CE is the plain cross entropy -log(p_y).  The first variant adds an
explicit push *down* on every wrong class, focal-style modulated; the
second only pushes down the strongest wrong class (the one the cumulative
argmax aggregation actually competes with):

    L1 = -(1-p_y)^g log(p_y) - lam * sum_{i != y} p_i^g log(1 - p_i)
    L2 = -(1-p_y)^g log(p_y) - lam * p_f^g log(1 - p_f),  p_f = max_{i != y} p_i

With lam = 0 and g = 0 both reduce to CE term by term.
"""

from __future__ import annotations

import torch

EPS = 1e-12


def _log(x):
    return torch.log(torch.clamp(x, min=EPS))


def ce_loss(p: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    p_y = p.gather(1, y[:, None]).squeeze(1)
    return -_log(p_y)


def l1_loss(p: torch.Tensor, y: torch.Tensor, lam: float, gamma: float) -> torch.Tensor:
    p_y = p.gather(1, y[:, None]).squeeze(1)
    focal = (1.0 - p_y) ** gamma
    wrong_mask = torch.ones_like(p).scatter_(1, y[:, None], 0.0)
    push_down = (p**gamma) * _log(1.0 - p) * wrong_mask
    return -focal * _log(p_y) - lam * push_down.sum(dim=1)


def l2_loss(p: torch.Tensor, y: torch.Tensor, lam: float, gamma: float) -> torch.Tensor:
    p_y = p.gather(1, y[:, None]).squeeze(1)
    focal = (1.0 - p_y) ** gamma
    masked = p.masked_fill(
        torch.zeros_like(p, dtype=torch.bool).scatter_(1, y[:, None], True), float("-inf")
    )
    p_false = masked.max(dim=1).values
    return -focal * _log(p_y) - lam * (p_false**gamma) * _log(1.0 - p_false)


def loss_fn(name: str, p, y, lam: float, gamma: float) -> torch.Tensor:
    if name == "CE":
        return ce_loss(p, y)
    if name == "L1":
        return l1_loss(p, y, lam, gamma)
    if name == "L2":
        return l2_loss(p, y, lam, gamma)
    raise ValueError(f"unknown loss {name!r}")
