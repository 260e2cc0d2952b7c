"""Sign binarization with a straight-through estimator.

Forward: sign(x) with sign(0) = +1 (the deployed convention).
Backward: the incoming gradient passes through clipped to |x| <= 1,
i.e. the gradient of hardtanh at the same point.
"""

from __future__ import annotations

import torch


class SignSTE(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x):
        ctx.save_for_backward(x)
        return torch.where(x >= 0, 1.0, -1.0).to(x.dtype)

    @staticmethod
    def backward(ctx, grad_out):
        (x,) = ctx.saved_tensors
        return grad_out * (x.abs() <= 1.0).to(grad_out.dtype)


def sign_ste(x: torch.Tensor) -> torch.Tensor:
    return SignSTE.apply(x)


def hardtanh_surrogate(x: torch.Tensor) -> torch.Tensor:
    """The surrogate whose exact gradient the STE backward copies."""
    return torch.clamp(x, -1.0, 1.0)
