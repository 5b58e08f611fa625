"""Manhattan-constraint branch: normal generator, Manhattan losses, depth encoder-decoder.

Tensors are NCHW. Normals are B x 3 x H x W in the gravity-aligned frame
(x right, y forward, z up); plane codes are B x H x W with the values of
``core.OTHER/FLOOR/CEILING/WALL``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import CEILING, FLOOR, WALL
from .nets import RESNET18_WIDTHS, EncoderDecoder, UNet, pad_to_multiple, unpad

log = logging.getLogger(__name__)

NORM_EPS = 1e-8


def _masked_mean(x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Per-sample mean of ``x`` over ``mask`` (B x H x W); empty samples give 0."""
    m = mask.to(x.dtype)
    num = (x * m).flatten(1).sum(1)
    cnt = m.flatten(1).sum(1)
    return torch.where(cnt > 0, num / cnt.clamp_min(1), torch.zeros_like(num))


def cosine_normal_loss(n: torch.Tensor, n_star: torch.Tensor, eps: float = NORM_EPS) -> torch.Tensor:
    """Negative mean cosine similarity over pixels with a defined (non-zero) target normal."""
    dot = (n * n_star).sum(1)
    norm_p = n.norm(dim=1)
    norm_t = n_star.norm(dim=1)
    cos = dot / (norm_p * norm_t + eps)
    return -_masked_mean(cos, norm_t > 0).mean()


def plane_orientation_losses(n: torch.Tensor, codes: torch.Tensor, eps: float = NORM_EPS):
    """Floor normals up, ceiling normals down, wall normals horizontal.

    Returns ``(L_floor, L_ceiling, L_wall)``; a class absent from a sample
    contributes 0 for that sample.
    """
    cz = n[:, 2] / (n.norm(dim=1) + eps)
    l_floor = -_masked_mean(cz, codes == FLOOR).mean()
    l_ceiling = _masked_mean(cz, codes == CEILING).mean()
    l_wall = _masked_mean(cz.abs(), codes == WALL).mean()
    return l_floor, l_ceiling, l_wall


def mnm_loss(n: torch.Tensor, n_star: torch.Tensor, codes: torch.Tensor) -> torch.Tensor:
    l_floor, l_ceiling, l_wall = plane_orientation_losses(n, codes)
    return cosine_normal_loss(n, n_star) + l_floor + l_ceiling + l_wall


def wma_loss(n: torch.Tensor, codes: torch.Tensor, pair_budget: int = 1_000_000, seed: int = 0,
             eps: float = NORM_EPS) -> torch.Tensor:
    """Pairwise orthogonality/parallelism loss that does not need a gravity-aligned camera.

    Walls are pushed orthogonal to floors and ceilings (mean ``|cos|`` over all
    wall x (floor u ceiling) pairs), floors anti-parallel to ceilings (mean
    ``cos`` over floor x ceiling pairs). The first term is subsampled to
    ``pair_budget`` seeded random pairs when the full product is larger. The
    second term factorises into a dot product of mean unit normals and is
    always exact.
    """
    gen = torch.Generator().manual_seed(int(seed))
    u = n / (n.norm(dim=1, keepdim=True) + eps)
    totals = []
    for b in range(n.shape[0]):
        ub = u[b].flatten(1).T  # N x 3
        cb = codes[b].flatten()
        walls = ub[cb == WALL]
        floors = ub[cb == FLOOR]
        ceils = ub[cb == CEILING]
        horiz = torch.cat([floors, ceils], 0)
        zero = u.new_zeros(())
        if len(walls) and len(horiz):
            n_pairs = len(walls) * len(horiz)
            if n_pairs <= pair_budget:
                term1 = (walls @ horiz.T).abs().mean()
            else:
                i = torch.randint(len(walls), (pair_budget,), generator=gen)
                j = torch.randint(len(horiz), (pair_budget,), generator=gen)
                term1 = (walls[i] * horiz[j]).sum(1).abs().mean()
        else:
            term1 = zero
        term2 = floors.mean(0) @ ceils.mean(0) if len(floors) and len(ceils) else zero
        totals.append(term1 + term2)
    return torch.stack(totals).mean()


def masked_l1(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean ``|pred - target|`` over pixels where ``target > 0``; 0 if there are none."""
    mask = target > 0
    if not bool(mask.any()):
        log.warning("no valid supervision pixels; L1 term set to 0")
        return pred.sum() * 0.0
    return (pred - target).abs()[mask].mean()


def mcn_branch_loss(d_l: torch.Tensor, d_sup: torch.Tensor, mnm: torch.Tensor, lambda_l: float = 0.5) -> torch.Tensor:
    return mnm + lambda_l * masked_l1(d_l, d_sup)


def manhattan_term(n, n_star, codes, mode: str = "per_class", pair_budget: int = 1_000_000, seed: int = 0):
    """Normal-module loss with either the per-class plane terms or the pairwise variant."""
    if mode == "per_class":
        return mnm_loss(n, n_star, codes)
    if mode == "wma":
        return cosine_normal_loss(n, n_star) + wma_loss(n, codes, pair_budget, seed)
    raise ValueError(f"unknown manhattan_loss mode {mode!r}")


class NormalGenerator(nn.Module):
    """U-Net predicting unit normals from RGB (+ raw depth when ``modality='rgbd'``)."""

    def __init__(self, modality: str = "rgbd", base: int = 16, depth_scale: float = 10.0):
        super().__init__()
        if modality not in ("rgb", "rgbd"):
            raise ValueError("modality must be 'rgb' or 'rgbd'")
        self.modality = modality
        self.depth_scale = depth_scale
        self.net = UNet(4 if modality == "rgbd" else 3, 3, base=base)

    def forward(self, rgb: torch.Tensor, d_raw: torch.Tensor) -> torch.Tensor:
        x = rgb if self.modality == "rgb" else torch.cat([rgb, d_raw / self.depth_scale], 1)
        return F.normalize(self.net(x), dim=1, eps=1e-12)


@dataclass
class McnOutput:
    d_l: torch.Tensor  # B x 1 x H x W
    c_l: torch.Tensor  # B x 1 x H x W
    latents: List[torch.Tensor]  # strides 32, 16, 8, 4 of the padded input


class MCN(nn.Module):
    """Depth encoder-decoder on (normals, raw depth); outputs local depth and confidence."""

    def __init__(self, widths=RESNET18_WIDTHS, depth_scale: float = 10.0):
        super().__init__()
        self.depth_scale = depth_scale
        self.net = EncoderDecoder(4, 2, widths)

    def forward(self, d_raw: torch.Tensor, n: torch.Tensor) -> McnOutput:
        x, size = pad_to_multiple(torch.cat([n, d_raw / self.depth_scale], 1), 32)
        head, stages = self.net(x)
        head = unpad(head, size)
        return McnOutput(F.softplus(head[:, :1]) * self.depth_scale, head[:, 1:2], stages)
