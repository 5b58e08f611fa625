"""Pseudo depth maps: seeded masks that mimic indoor sensor dropouts."""
from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from . import kernels
from .core import DepthMap, ParameterError, RgbImage, SampleRecord, SegMask, save_depth_png

METHODS = ("highlight", "black", "graphseg", "semantic", "semantic_xor")


@dataclass(frozen=True)
class PseudoConfig:
    include_prob: float = 0.5
    highlight_threshold: float = 0.95
    highlight_min_size: int = 4
    highlight_dilation: int = 2
    black_max_value: int = 5  # 8-bit units, inclusive
    seg_scale: float = 100.0
    seg_sigma: float = 0.8
    seg_min_size: int = 20
    small_block_fraction: float = 0.01
    block_prob: float = 0.3
    semantic_labels: tuple = (5,)
    seg_noise_prob: float = 0.5


@dataclass
class MaskSet:
    highlight: np.ndarray
    black: np.ndarray
    graphseg: np.ndarray
    semantic: np.ndarray
    semantic_xor: np.ndarray
    applied: dict = field(default_factory=dict)

    def union(self) -> np.ndarray:
        out = np.zeros_like(self.highlight)
        for m in METHODS:
            if self.applied.get(m):
                out |= getattr(self, m)
        return out


_SQUARE = np.ones((3, 3), dtype=bool)


def highlight_mask(rgb: RgbImage, threshold: float = 0.95, min_size: int = 4, dilation: int = 2) -> np.ndarray:
    """Bright-spot detector: max(R,G,B) above ``threshold``, 8-connected blobs of at
    least ``min_size`` pixels, grown by a square of radius ``dilation``."""
    lum = rgb.data.max(axis=-1)
    bright = lum > threshold
    labels, n = ndimage.label(bright, structure=_SQUARE)
    if n == 0:
        return np.zeros(lum.shape, dtype=bool)
    sizes = np.bincount(labels.ravel())
    keep = sizes >= min_size
    keep[0] = False
    mask = keep[labels]
    if dilation > 0 and mask.any():
        mask = ndimage.binary_dilation(mask, structure=np.ones((2 * dilation + 1,) * 2, dtype=bool))
    return mask


def black_mask(rgb: RgbImage, max_value: int = 5) -> np.ndarray:
    """Pixels whose three 8-bit channels all lie in ``[0, max_value]``."""
    return np.all(rgb.to_uint8() <= max_value, axis=-1)


def graph_segment(rgb: RgbImage, scale: float = 100.0, sigma: float = 0.8, min_size: int = 20) -> np.ndarray:
    """Felzenszwalb-Huttenlocher segmentation on an 8-connected pixel grid.

    Colors are compared in 8-bit units after Gaussian smoothing. Returns an
    H x W integer label map.
    """
    img = rgb.data.astype(np.float64) * 255.0
    if sigma > 0:
        img = np.stack([ndimage.gaussian_filter(img[..., c], sigma, mode="nearest") for c in range(3)], axis=-1)
    h, w = img.shape[:2]
    idx = np.arange(h * w, dtype=np.int64).reshape(h, w)
    pairs = [
        (idx[:, :-1], idx[:, 1:], img[:, :-1], img[:, 1:]),
        (idx[:-1, :], idx[1:, :], img[:-1, :], img[1:, :]),
        (idx[:-1, :-1], idx[1:, 1:], img[:-1, :-1], img[1:, 1:]),
        (idx[1:, :-1], idx[:-1, 1:], img[1:, :-1], img[:-1, 1:]),
    ]
    a = np.concatenate([p[0].ravel() for p in pairs])
    b = np.concatenate([p[1].ravel() for p in pairs])
    wt = np.concatenate([np.sqrt(np.sum((p[2] - p[3]) ** 2, axis=-1)).ravel() for p in pairs])
    order = np.argsort(wt, kind="stable")
    labels = kernels.segment_graph(
        np.ascontiguousarray(a[order]), np.ascontiguousarray(b[order]),
        np.ascontiguousarray(wt[order]), h * w, float(scale), int(min_size),
    )
    return np.asarray(labels).reshape(h, w)


def graph_seg_mask(rgb: RgbImage, seed: int, cfg: PseudoConfig = PseudoConfig()) -> np.ndarray:
    labels = graph_segment(rgb, cfg.seg_scale, cfg.seg_sigma, cfg.seg_min_size)
    sizes = np.bincount(labels.ravel())
    small = sizes < cfg.small_block_fraction * labels.size
    rng = np.random.default_rng(seed)
    picked = small & (rng.random(sizes.size) < cfg.block_prob)
    return picked[labels]


def semantic_mask(seg: SegMask, candidate_labels, seed: int) -> np.ndarray:
    """Mask the eroded interiors of one or two candidate object instances."""
    cand = np.isin(seg.data, list(candidate_labels))
    out = np.zeros(seg.shape, dtype=bool)
    if not cand.any():
        return out
    instances = []
    for lab in sorted(set(np.unique(seg.data[cand]).tolist())):
        comp, n = ndimage.label(seg.data == lab)
        instances += [comp == i for i in range(1, n + 1)]
    rng = np.random.default_rng(seed)
    k = min(int(rng.integers(1, 3)), len(instances))
    for i in rng.choice(len(instances), size=k, replace=False):
        out |= ndimage.binary_erosion(instances[i], structure=_SQUARE, border_value=0)
    return out


def semantic_xor_mask(seg_pred: SegMask, seg_gt: SegMask) -> np.ndarray:
    if seg_pred.shape != seg_gt.shape:
        raise ParameterError(f"segmentation shapes differ: {seg_pred.shape} vs {seg_gt.shape}")
    return seg_pred.data != seg_gt.data


def perturb_segmentation(seg: SegMask, seed: int, prob: float = 0.5) -> SegMask:
    """Stand-in segmenter: swap labels near class boundaries with probability ``prob``."""
    d = seg.data
    hi = ndimage.maximum_filter(d, size=3, mode="nearest")
    lo = ndimage.minimum_filter(d, size=3, mode="nearest")
    boundary = hi != lo
    alt = np.where(hi != d, hi, lo)
    flip = boundary & (np.random.default_rng(seed).random(d.shape) < prob)
    return SegMask(np.where(flip, alt, d), seg.plane_classes)


def make_pseudo_depth(s: SampleRecord, seg_pred: Optional[SegMask], seed: int,
                      cfg: PseudoConfig = PseudoConfig()) -> tuple:
    """Corrupt ``s.raw_depth`` with the union of a random subset of the five masks.

    Each method is included independently with probability ``cfg.include_prob``.
    Masks of excluded methods are left empty. Semantic methods need ``s.seg``
    (and ``seg_pred`` for the XOR method); without them they contribute nothing.
    """
    rng = np.random.default_rng(seed)
    draws = rng.random(len(METHODS))
    sub_seeds = rng.integers(0, 2**31 - 1, size=len(METHODS))
    applied = {m: bool(p < cfg.include_prob) for m, p in zip(METHODS, draws)}
    empty = np.zeros(s.shape, dtype=bool)
    masks = dict.fromkeys(METHODS, empty)
    if applied["highlight"]:
        masks["highlight"] = highlight_mask(s.rgb, cfg.highlight_threshold, cfg.highlight_min_size, cfg.highlight_dilation)
    if applied["black"]:
        masks["black"] = black_mask(s.rgb, cfg.black_max_value)
    if applied["graphseg"]:
        masks["graphseg"] = graph_seg_mask(s.rgb, int(sub_seeds[2]), cfg)
    if applied["semantic"] and s.seg is not None:
        masks["semantic"] = semantic_mask(s.seg, cfg.semantic_labels, int(sub_seeds[3]))
    if applied["semantic_xor"] and s.seg is not None and seg_pred is not None:
        masks["semantic_xor"] = semantic_xor_mask(seg_pred, s.seg)
    ms = MaskSet(applied=applied, **masks)
    out = np.where(ms.union(), 0.0, s.raw_depth.data).astype(np.float32)
    return DepthMap(out), ms


def sample_seed(seed: int, *keys) -> int:
    """Stable 31-bit seed derived from a base seed and arbitrary keys."""
    h = zlib.crc32(repr((int(seed),) + tuple(keys)).encode())
    return int(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, h]).generate_state(1)[0] & 0x7FFFFFFF)


def pseudo_for_record(s: SampleRecord, seed: int, cfg: PseudoConfig = PseudoConfig()) -> tuple:
    """Pseudo depth with the default stand-in segmenter for the XOR method."""
    seg_pred = perturb_segmentation(s.seg, sample_seed(seed, "segpred"), cfg.seg_noise_prob) if s.seg is not None else None
    return make_pseudo_depth(s, seg_pred, seed, cfg)


def write_pseudo_dataset(manifest, seed: int, out_dir, cfg: PseudoConfig = PseudoConfig()) -> list:
    """Write ``<id>.png`` pseudo depth plus ``<id>.json`` sidecar for every sample."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for rec in manifest:
        s = sample_seed(seed, rec.id)
        depth, ms = pseudo_for_record(rec, s, cfg)
        save_depth_png(out_dir / f"{rec.id}.png", depth)
        params = asdict(cfg)
        params["semantic_labels"] = list(cfg.semantic_labels)
        sidecar = {
            "id": rec.id,
            "seed": s,
            "applied": ms.applied,
            "masked_pixels": {m: int(getattr(ms, m).sum()) for m in METHODS},
            "params": params,
        }
        (out_dir / f"{rec.id}.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
        written.append(rec.id)
    return written
