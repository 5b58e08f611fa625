"""Full two-branch model and conversions between records and tensors."""
from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from .config import TrainConfig
from .fusion import confidence_fuse
from .gan import DepthCritic, DepthGenerator, RgbCritic, RgbGenerator
from .mcn import MCN, NormalGenerator


class RDFCModel(nn.Module):
    def __init__(self, cfg: TrainConfig = TrainConfig()):
        super().__init__()
        s = cfg.depth_scale
        self.normal_gen = NormalGenerator(cfg.normal_modality, depth_scale=s)
        self.mcn = MCN(depth_scale=s)
        self.G = DepthGenerator(depth_scale=s)
        self.Gr = RgbGenerator(depth_scale=s)
        self.D = DepthCritic(depth_scale=s)
        self.Dr = RgbCritic()

    def critic_parameters(self):
        return list(self.D.parameters()) + list(self.Dr.parameters())

    def generator_modules(self):
        return [self.normal_gen, self.mcn, self.G, self.Gr]

    def forward(self, rgb: torch.Tensor, d_raw: torch.Tensor) -> dict:
        n = self.normal_gen(rgb, d_raw)
        m = self.mcn(d_raw, n)
        g = self.G(rgb, m.latents)
        d_pred = confidence_fuse(m.d_l, m.c_l, g.d_f, g.c_f)
        return {"n": n, "d_l": m.d_l, "c_l": m.c_l, "latents": m.latents,
                "d_f": g.d_f, "c_f": g.c_f, "d_pred": d_pred}


def build_model(cfg: TrainConfig) -> RDFCModel:
    torch.manual_seed(cfg.seed)
    return RDFCModel(cfg)


def build_optimizers(model: RDFCModel, cfg: TrainConfig) -> dict:
    """AdamW for the MCN encoder-decoder; Adam for everything else, critics separate."""
    betas = (cfg.beta1, cfg.beta2)
    mcn_params = list(model.mcn.parameters())
    other = list(model.G.parameters()) + list(model.Gr.parameters())
    if cfg.normal_group == "mcn":
        mcn_params += list(model.normal_gen.parameters())
    else:
        other += list(model.normal_gen.parameters())
    return {
        "mcn": torch.optim.AdamW(mcn_params, lr=cfg.lr_mcn, betas=betas, weight_decay=cfg.weight_decay_mcn),
        "gen": torch.optim.Adam(other, lr=cfg.lr_other, betas=betas),
        "critic": torch.optim.Adam(model.critic_parameters(), lr=cfg.lr_other, betas=betas),
    }


def to_tensor_depth(maps: Sequence[np.ndarray]) -> torch.Tensor:
    return torch.from_numpy(np.stack([np.asarray(m, dtype=np.float32) for m in maps]))[:, None]


def to_tensor_rgb(images: Sequence[np.ndarray]) -> torch.Tensor:
    return torch.from_numpy(np.stack([np.asarray(a, dtype=np.float32) for a in images])).permute(0, 3, 1, 2).contiguous()


def to_tensor_normals(maps: Sequence[np.ndarray]) -> torch.Tensor:
    return to_tensor_rgb(maps)
