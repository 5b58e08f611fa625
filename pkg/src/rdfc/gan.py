"""RGB-depth fusion CycleGAN: generators, patch critics and Wasserstein/cycle losses."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .fusion import WAdaIN
from .mcn import masked_l1
from .nets import RESNET18_WIDTHS, EncoderDecoder, PatchDiscriminator, init_normal_, pad_to_multiple, unpad


@dataclass
class GanOutput:
    d_f: torch.Tensor  # B x 1 x H x W
    c_f: torch.Tensor  # B x 1 x H x W


class DepthGenerator(nn.Module):
    """G: encodes RGB only and absorbs MCN latents through W-AdaIN at strides 32/16/8/4."""

    def __init__(self, widths=RESNET18_WIDTHS, depth_scale: float = 10.0, attn_reduction: int = 8):
        super().__init__()
        self.depth_scale = depth_scale
        w0, w1, w2, w3 = widths
        fusers = nn.ModuleList([WAdaIN(c, attn_reduction) for c in (w3, w2, w1, w0)])
        self.net = EncoderDecoder(3, 2, widths, fusers=fusers)
        init_normal_(self)

    def forward(self, rgb: torch.Tensor, latents: Sequence[torch.Tensor]) -> GanOutput:
        x, size = pad_to_multiple(rgb, 32)
        head, _ = self.net(x, latents)
        head = unpad(head, size)
        return GanOutput(F.softplus(head[:, :1]) * self.depth_scale, head[:, 1:2])


class RgbGenerator(nn.Module):
    """G_r: depth to RGB through a ResNet-18 encoder-decoder with sigmoid output."""

    def __init__(self, widths=RESNET18_WIDTHS, depth_scale: float = 10.0):
        super().__init__()
        self.depth_scale = depth_scale
        self.net = EncoderDecoder(1, 3, widths)
        init_normal_(self)

    def forward(self, d: torch.Tensor) -> torch.Tensor:
        x, size = pad_to_multiple(d / self.depth_scale, 32)
        head, _ = self.net(x)
        return torch.sigmoid(unpad(head, size))


class DepthCritic(nn.Module):
    """D(d | r): patch critic on the channel concatenation of depth and its RGB condition."""

    def __init__(self, base: int = 64, n_blocks: int = 3, depth_scale: float = 10.0):
        super().__init__()
        self.depth_scale = depth_scale
        self.net = PatchDiscriminator(4, base, n_blocks)
        init_normal_(self)

    def forward(self, d: torch.Tensor, cond_rgb: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([d / self.depth_scale, cond_rgb], 1))


class RgbCritic(nn.Module):
    """D_r(r): unconditional patch critic on RGB."""

    def __init__(self, base: int = 64, n_blocks: int = 3):
        super().__init__()
        self.net = PatchDiscriminator(3, base, n_blocks)
        init_normal_(self)

    def forward(self, rgb: torch.Tensor) -> torch.Tensor:
        return self.net(rgb)


def critic_score(scores: torch.Tensor, reduction: str = "mean") -> torch.Tensor:
    """Reduce a patch score map over patches and batch."""
    return scores.mean() if reduction == "mean" else scores.flatten(1).sum(1).mean()


def gan_losses(fake_d, real_d, fake_r, real_r, reduction: str = "mean"):
    """Wasserstein losses ``(L_D, L_G, L_Dr, L_Gr)`` from raw critic score maps.

    Gradient routing is the caller's job: critic losses must see detached
    generator outputs, generator losses must not update critics.
    """
    sf_d = critic_score(fake_d, reduction)
    sr_d = critic_score(real_d, reduction)
    sf_r = critic_score(fake_r, reduction)
    sr_r = critic_score(real_r, reduction)
    return sf_d - sr_d, -sf_d, sf_r - sr_r, -sf_r


def cycle_loss(rgb, rgb_rec, d_gt, d_rec) -> torch.Tensor:
    """``mean|G_r(G(.)) - r|`` plus L1 of the depth round trip over valid gt pixels."""
    return (rgb_rec - rgb).abs().mean() + masked_l1(d_rec, d_gt)


def rdfc_branch_loss(l_d, l_g, l_dr, l_gr, l_cycle):
    return l_d + l_g + l_dr + l_gr + l_cycle


@torch.no_grad()
def clip_weights_(module: nn.Module, c: float = 0.01) -> None:
    for p in module.parameters():
        p.clamp_(-c, c)


def gradient_penalty(critic, real: torch.Tensor, fake: torch.Tensor, *cond, generator=None) -> torch.Tensor:
    """WGAN-GP penalty ``E[(||grad critic(x_hat)|| - 1)^2]`` on random interpolates."""
    eps = torch.rand(real.shape[0], 1, 1, 1, generator=generator, dtype=real.dtype)
    x_hat = (eps * real + (1 - eps) * fake).requires_grad_(True)
    out = critic(x_hat, *cond).sum()
    (g,) = torch.autograd.grad(out, x_hat, create_graph=True)
    return ((g.flatten(1).norm(dim=1) - 1) ** 2).mean()
