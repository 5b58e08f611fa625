"""Network building blocks shared by both branches."""
from __future__ import annotations

import math
from typing import Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import ParameterError

RESNET18_WIDTHS = (64, 128, 256, 512)


def init_normal_(module: nn.Module, std: float = 0.02) -> nn.Module:
    """Weights ~ N(0, std^2), biases 0; norm-layer scales ~ N(1, std^2)."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            nn.init.normal_(m.weight, 0.0, std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, (nn.BatchNorm2d, nn.GroupNorm, nn.InstanceNorm2d)) and m.weight is not None:
            nn.init.normal_(m.weight, 1.0, std)
            nn.init.zeros_(m.bias)
    return module


def pad_to_multiple(x: torch.Tensor, multiple: int = 32):
    """Reflection-pad H and W up to a multiple; returns the padded tensor and the original size."""
    h, w = x.shape[-2:]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return x, (h, w)
    mode = "reflect" if ph < h and pw < w else "replicate"
    return F.pad(x, (0, pw, 0, ph), mode=mode), (h, w)


def unpad(x: torch.Tensor, size) -> torch.Tensor:
    return x[..., : size[0], : size[1]]


class BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.down = None
        if stride != 1 or cin != cout:
            self.down = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout))

    def forward(self, x):
        idt = x if self.down is None else self.down(x)
        out = F.relu(self.bn1(self.conv1(x)))
        return F.relu(self.bn2(self.conv2(out)) + idt)


class ResNet18Encoder(nn.Module):
    """ResNet-18 trunk; returns features at strides 2, 4, 8, 16, 32."""

    def __init__(self, in_ch: int, widths: Sequence[int] = RESNET18_WIDTHS):
        super().__init__()
        w0 = widths[0]
        self.stem = nn.Sequential(nn.Conv2d(in_ch, w0, 7, 2, 3, bias=False), nn.BatchNorm2d(w0), nn.ReLU(inplace=True))
        self.pool = nn.MaxPool2d(3, 2, 1)
        layers = []
        cin = w0
        for i, c in enumerate(widths):
            stride = 1 if i == 0 else 2
            layers.append(nn.Sequential(BasicBlock(cin, c, stride), BasicBlock(c, c)))
            cin = c
        self.layers = nn.ModuleList(layers)

    def forward(self, x):
        s = self.stem(x)
        feats = [s]
        x = self.pool(s)
        for layer in self.layers:
            x = layer(x)
            feats.append(x)
        return feats


class UpBlock(nn.Module):
    def __init__(self, cin: int, cskip: int, cout: int, n_convs: int = 2):
        super().__init__()
        layers = []
        c = cin + cskip
        for _ in range(n_convs):
            layers += [nn.Conv2d(c, cout, 3, 1, 1, bias=False), nn.BatchNorm2d(cout), nn.ReLU(inplace=True)]
            c = cout
        self.body = nn.Sequential(*layers)

    def forward(self, x, skip: Optional[torch.Tensor] = None):
        size = skip.shape[-2:] if skip is not None else (x.shape[-2] * 2, x.shape[-1] * 2)
        x = F.interpolate(x, size=size, mode="bilinear", align_corners=False)
        if skip is not None:
            x = torch.cat([x, skip], dim=1)
        return self.body(x)


class EncoderDecoder(nn.Module):
    """ResNet-18 encoder with a skip-connected upsampling decoder.

    ``forward`` returns ``(head, stages)`` where ``stages`` are the features at
    strides 32, 16, 8 and 4 (deepest first). When ``fusers`` is given, each of
    those stage features is replaced by ``fusers[k](latents[k], feature)``
    before decoding continues.
    """

    def __init__(self, in_ch: int, out_ch: int, widths: Sequence[int] = RESNET18_WIDTHS, fusers=None):
        super().__init__()
        w0, w1, w2, w3 = widths
        self.encoder = ResNet18Encoder(in_ch, widths)
        self.up16 = UpBlock(w3, w2, w2)
        self.up8 = UpBlock(w2, w1, w1)
        self.up4 = UpBlock(w1, w0, w0)
        # the two full-resolution-side stages are kept thin; they dominate the cost
        self.up2 = UpBlock(w0, w0, w0 // 2, n_convs=1)
        self.up1 = UpBlock(w0 // 2, 0, w0 // 4, n_convs=1)
        self.head = nn.Conv2d(w0 // 4, out_ch, 3, 1, 1)
        self.fusers = fusers

    def forward(self, x, latents: Optional[Sequence[torch.Tensor]] = None):
        s2, s4, s8, s16, s32 = self.encoder(x)
        stages = []

        def fuse(k, feat):
            if self.fusers is None:
                return feat
            if latents is None or latents[k].shape != feat.shape:
                got = None if latents is None else tuple(latents[k].shape)
                raise ParameterError(f"latent {k} shape {got} does not match stage shape {tuple(feat.shape)}")
            return self.fusers[k](latents[k], feat)

        y = fuse(0, s32)
        stages.append(y)
        y = fuse(1, self.up16(y, s16))
        stages.append(y)
        y = fuse(2, self.up8(y, s8))
        stages.append(y)
        y = fuse(3, self.up4(y, s4))
        stages.append(y)
        y = self.up2(y, s2)
        y = self.up1(y)
        return self.head(y), stages


class UNet(nn.Module):
    """Small U-Net used as the normal generator."""

    def __init__(self, in_ch: int, out_ch: int, base: int = 32, depth: int = 4):
        super().__init__()
        chans = [base * 2**i for i in range(depth)]
        self.down = nn.ModuleList()
        cin = in_ch
        for c in chans:
            self.down.append(self._block(cin, c))
            cin = c
        self.up = nn.ModuleList()
        for c in reversed(chans[:-1]):
            self.up.append(self._block(cin + c, c))
            cin = c
        self.head = nn.Conv2d(cin, out_ch, 1)
        self.multiple = 2 ** (depth - 1)

    @staticmethod
    def _block(cin, cout):
        return nn.Sequential(
            nn.Conv2d(cin, cout, 3, 1, 1, bias=False), nn.BatchNorm2d(cout), nn.ReLU(inplace=True),
            nn.Conv2d(cout, cout, 3, 1, 1, bias=False), nn.BatchNorm2d(cout), nn.ReLU(inplace=True),
        )

    def forward(self, x):
        x, size = pad_to_multiple(x, self.multiple)
        skips = []
        for i, blk in enumerate(self.down):
            x = blk(x if i == 0 else F.max_pool2d(x, 2))
            skips.append(x)
        for blk, skip in zip(self.up, reversed(skips[:-1])):
            x = F.interpolate(x, size=skip.shape[-2:], mode="bilinear", align_corners=False)
            x = blk(torch.cat([x, skip], dim=1))
        return unpad(self.head(x), size)


class PatchDiscriminator(nn.Module):
    """PatchGAN critic: ``n_blocks`` stride-2 4x4 convs, then a 1-channel 3x3 score conv.

    No output nonlinearity and no batch norm, as suits a Wasserstein critic.
    """

    def __init__(self, in_ch: int, base: int = 64, n_blocks: int = 3):
        super().__init__()
        layers = [nn.Conv2d(in_ch, base, 4, 2, 1), nn.LeakyReLU(0.2, inplace=True)]
        c = base
        for _ in range(n_blocks - 1):
            layers += [nn.Conv2d(c, c * 2, 4, 2, 1), nn.InstanceNorm2d(c * 2), nn.LeakyReLU(0.2, inplace=True)]
            c *= 2
        layers.append(nn.Conv2d(c, 1, 3, 1, 1))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


def patch_grid(size: int, n_blocks: int = 3) -> int:
    """Score-map side length for an input side of ``size`` pixels."""
    for _ in range(n_blocks):
        size = math.floor((size + 2 - 4) / 2) + 1
    return size
