"""W-AdaIN cross-branch fusion and the confidence fusion head."""
from __future__ import annotations

import torch
import torch.nn as nn

from .core import ParameterError

STD_EPS = 1e-5


class AttnMap(nn.Module):
    """Spatial self-attention collapsed to a single h x w map.

    Query/key are 1x1 projections to ``C // reduction`` channels, the value is a
    1x1 projection to one channel; rows of the position-position energy are
    softmax-normalised.
    """

    def __init__(self, channels: int, reduction: int = 8):
        super().__init__()
        inner = max(1, channels // reduction)
        self.query = nn.Conv2d(channels, inner, 1)
        self.key = nn.Conv2d(channels, inner, 1)
        self.value = nn.Conv2d(channels, 1, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, _, h, w = x.shape
        q = self.query(x).flatten(2)  # B x C' x N
        k = self.key(x).flatten(2)
        v = self.value(x).flatten(2)  # B x 1 x N
        attn = torch.softmax(torch.bmm(q.transpose(1, 2), k), dim=-1)  # B x N x N
        out = torch.bmm(attn, v.transpose(1, 2))  # B x N x 1
        return out.view(b, h, w)


def channel_stats(x: torch.Tensor):
    """Per-sample, per-channel spatial mean and population std of a B x C x h x w map."""
    mu = x.mean(dim=(2, 3), keepdim=True)
    var = ((x - mu) ** 2).mean(dim=(2, 3), keepdim=True)
    # clamp keeps sqrt differentiable on constant channels
    return mu, var.clamp_min(1e-20).sqrt()


def wadain(z: torch.Tensor, f_r: torch.Tensor, attn_z: torch.Tensor, attn_f: torch.Tensor,
           eps: float = STD_EPS) -> torch.Tensor:
    """Combine depth statistics of ``z`` with normalised content ``f_r``.

    ``attn_z`` and ``attn_f`` are the B x h x w attention maps of ``z`` and ``f_r``.
    """
    if z.shape != f_r.shape:
        raise ParameterError(f"W-AdaIN inputs differ in shape: {tuple(z.shape)} vs {tuple(f_r.shape)}")
    mu_z, sd_z = channel_stats(z)
    mu_f, sd_f = channel_stats(f_r)
    y_s = sd_z * (f_r - mu_f) / (sd_f + eps)
    return y_s * attn_z.unsqueeze(1) + mu_z * attn_f.unsqueeze(1)


class WAdaIN(nn.Module):
    def __init__(self, channels: int, reduction: int = 8, eps: float = STD_EPS):
        super().__init__()
        self.attn_z = AttnMap(channels, reduction)
        self.attn_f = AttnMap(channels, reduction)
        self.eps = eps

    def forward(self, z: torch.Tensor, f_r: torch.Tensor) -> torch.Tensor:
        if z.shape != f_r.shape:
            raise ParameterError(f"W-AdaIN inputs differ in shape: {tuple(z.shape)} vs {tuple(f_r.shape)}")
        return wadain(z, f_r, self.attn_z(z), self.attn_f(f_r), self.eps)


def confidence_fuse(d_l: torch.Tensor, c_l: torch.Tensor, d_f: torch.Tensor, c_f: torch.Tensor) -> torch.Tensor:
    """Per-pixel softmax blend of the two branch depths by their confidence logits."""
    w_l = torch.sigmoid(c_l - c_f)
    out = d_f + w_l * (d_l - d_f)
    # rounding can leave the blend one ulp outside its endpoints
    return torch.minimum(torch.maximum(out, torch.minimum(d_l, d_f)), torch.maximum(d_l, d_f))
