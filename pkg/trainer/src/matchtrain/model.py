"""The binarized window model, matching the deployed table semantics.

Length and IPD pass through learned embedding rows, sign-binarized; an FC
layer compresses them into the embedding vector; one GRU cell (shared
across time steps) with sign gates and a hard update selector runs S
steps from the zero state; a linear output layer produces class logits.
All binarizations use the STE so gradients flow.
"""

from __future__ import annotations

import torch
from torch import nn

from .config import TrainConfig
from .ste import sign_ste


class BinaryGruCell(nn.Module):
    def __init__(self, ev_width: int, h_width: int):
        super().__init__()
        self.ev_width = ev_width
        self.h_width = h_width
        n_in = ev_width + h_width
        self.w_z = nn.Linear(n_in, h_width)
        self.w_r = nn.Linear(n_in, h_width)
        self.w_h = nn.Linear(n_in, h_width)

    def forward(self, x, h):
        cat = torch.cat([x, h], dim=1)
        z = sign_ste(self.w_z(cat))
        r = sign_ste(self.w_r(cat))
        c = sign_ste(self.w_h(torch.cat([x, r * h], dim=1)))
        a = (1.0 + z) / 2.0
        # re-binarize: identity on ±1 selections, maps a kept zero-state
        # component to +1 exactly like the deployed tables
        return sign_ste((1.0 - a) * h + a * c)


class BinaryWindowModel(nn.Module):
    def __init__(self, cfg: TrainConfig):
        super().__init__()
        self.cfg = cfg
        self.len_embed = nn.Embedding(1 << cfg.len_input_bits, cfg.len_embed_width)
        self.ipd_embed = nn.Embedding(1 << cfg.ipd_input_bits, cfg.ipd_embed_width)
        self.fc = nn.Linear(cfg.len_embed_width + cfg.ipd_embed_width, cfg.ev_width)
        self.cell = BinaryGruCell(cfg.ev_width, cfg.h_width)
        self.out = nn.Linear(cfg.h_width, cfg.n_classes)

    def embed(self, len_keys, ipd_keys):
        """(B,) keys -> (B, ev_width) ±1 embedding vectors."""
        le = sign_ste(self.len_embed(len_keys))
        ie = sign_ste(self.ipd_embed(ipd_keys))
        return sign_ste(self.fc(torch.cat([le, ie], dim=1)))

    def forward(self, len_keys, ipd_keys):
        """(B, S) keys -> (B, n_classes) logits."""
        B, S = len_keys.shape
        h = torch.zeros(B, self.cfg.h_width, device=len_keys.device)
        for t in range(S):
            ev = self.embed(len_keys[:, t], ipd_keys[:, t])
            h = self.cell(ev, h)
        return self.out(h)

    def probabilities(self, len_keys, ipd_keys):
        return torch.softmax(self.forward(len_keys, ipd_keys), dim=1)
