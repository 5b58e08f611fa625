import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from rdfc import kernels
from rdfc.core import RgbImage, SegMask
from rdfc.data import load_dataset, synth_dataset, write_dataset
from rdfc.pseudo import (
    METHODS,
    PseudoConfig,
    black_mask,
    graph_seg_mask,
    graph_segment,
    highlight_mask,
    make_pseudo_depth,
    perturb_segmentation,
    pseudo_for_record,
    semantic_mask,
    semantic_xor_mask,
    write_pseudo_dataset,
)

CLASSES = {0: "other", 1: "floor", 2: "wall", 5: "other"}


# --- highlight / black --------------------------------------------------------

def test_highlight_black_and_gray_images():
    assert not highlight_mask(RgbImage(np.zeros((20, 20, 3)))).any()
    assert not highlight_mask(RgbImage(np.full((20, 20, 3), 0.5))).any()


def test_highlight_white_block_is_dilated():
    img = np.full((30, 30, 3), 0.5)
    img[10:15, 12:17] = 1.0
    m = highlight_mask(RgbImage(img), threshold=0.95, dilation=2)
    oracle = np.zeros((30, 30), bool)
    # square dilation of radius 2 grows the block by 2 on every side
    oracle[8:17, 10:19] = True
    assert np.array_equal(m, oracle)


def test_highlight_drops_tiny_spots():
    img = np.full((20, 20, 3), 0.5)
    img[5, 5] = 1.0
    img[10:12, 10] = 1.0
    assert not highlight_mask(RgbImage(img), min_size=4).any()


def test_black_mask_boundaries():
    px = np.array([[[0, 0, 0], [6, 0, 0], [5, 5, 5], [0, 0, 6]]], np.uint8)
    assert black_mask(RgbImage.from_uint8(px)).tolist() == [[True, False, True, False]]


def test_black_mask_gradient_image():
    g = np.tile(np.arange(256, dtype=np.uint8), (4, 1))
    img = np.stack([g, g, g], -1)
    m = black_mask(RgbImage.from_uint8(img))
    assert np.array_equal(m, np.tile(np.arange(256) <= 5, (4, 1)))


# --- graph segmentation -------------------------------------------------------

def test_backends_agree_on_scenes():
    if kernels.c_segment_graph is None:
        pytest.skip("compiled kernel not built")
    from rdfc.pseudo import graph_segment as gs

    for r in synth_dataset(3, 9):
        h, w = r.shape
        img = r.rgb.data.astype(np.float64) * 255
        idx = np.arange(h * w).reshape(h, w)
        a = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
        b = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
        wt = np.concatenate([np.linalg.norm(img[:, :-1] - img[:, 1:], axis=-1).ravel(),
                             np.linalg.norm(img[:-1, :] - img[1:, :], axis=-1).ravel()])
        o = np.argsort(wt, kind="stable")
        args = (a[o].astype(np.int64), b[o].astype(np.int64), wt[o], h * w, 100.0, 20)
        assert np.array_equal(np.asarray(kernels.c_segment_graph(*args)), kernels.py_segment_graph(*args))
        assert gs(r.rgb).shape == (h, w)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 12), st.integers(2, 12), st.floats(0.0, 500.0), st.integers(1, 8))
def test_backends_agree_random_graphs(seed, h, w, k, min_size):
    if kernels.c_segment_graph is None:
        return
    rng = np.random.default_rng(seed)
    n = h * w
    m = int(rng.integers(0, 4 * n))
    a = rng.integers(0, n, m).astype(np.int64)
    b = rng.integers(0, n, m).astype(np.int64)
    # coarse weights force ties, exercising ordering
    wt = np.sort(rng.integers(0, 20, m).astype(np.float64))
    args = (a, b, wt, n, k, min_size)
    assert np.array_equal(np.asarray(kernels.c_segment_graph(*args)), kernels.py_segment_graph(*args))


def test_segments_connected_and_large_enough():
    r = synth_dataset(1, 3)[0]
    lab = graph_segment(r.rgb, min_size=20)
    for s in np.unique(lab):
        comp, n = ndimage.label(lab == s, structure=np.ones((3, 3)))
        assert n == 1
        assert (lab == s).sum() >= 20


def test_graph_seg_mask_cases():
    uniform = RgbImage(np.full((24, 32, 3), 0.4))
    assert not graph_seg_mask(uniform, 0).any()
    r = synth_dataset(1, 3)[0]
    assert not graph_seg_mask(r.rgb, 0, PseudoConfig(block_prob=0.0)).any()
    assert np.array_equal(graph_seg_mask(r.rgb, 5), graph_seg_mask(r.rgb, 5))


def test_graph_seg_mask_selects_only_small_segments():
    rng = np.random.default_rng(0)
    img = np.full((60, 80, 3), 0.5)
    for _ in range(12):
        y, x = rng.integers(0, 55), rng.integers(0, 75)
        img[y:y + 5, x:x + 5] = rng.random(3)
    rgb = RgbImage(img)
    cfg = PseudoConfig(block_prob=1.0, seg_min_size=5)
    m = graph_seg_mask(rgb, 0, cfg)
    lab = graph_segment(rgb, cfg.seg_scale, cfg.seg_sigma, cfg.seg_min_size)
    sizes = np.bincount(lab.ravel())
    small = sizes < 0.01 * lab.size
    assert np.array_equal(m, small[lab])


# --- semantic -----------------------------------------------------------------

def _erosion_oracle(inst):
    h, w = inst.shape
    out = np.zeros_like(inst)
    for y in range(h):
        for x in range(w):
            ok = True
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    yy, xx = y + dy, x + dx
                    if not (0 <= yy < h and 0 <= xx < w and inst[yy, xx]):
                        ok = False
            out[y, x] = ok
    return out


def test_semantic_mask_single_instance_erosion():
    seg = np.zeros((12, 14), int)
    seg[2:9, 3:11] = 5
    seg[4, 3] = 0  # notch, so the interior is not a plain rectangle
    seg[0:3, 10:14] = 5  # touches the border, merges with the block
    m = semantic_mask(SegMask(seg, CLASSES), (5,), seed=0)
    assert np.array_equal(m, _erosion_oracle(seg == 5))


def test_semantic_mask_vacuous_and_tiny():
    seg = np.zeros((8, 8), int)
    assert not semantic_mask(SegMask(seg, CLASSES), (5,), 0).any()
    seg[4, 4] = 5
    assert not semantic_mask(SegMask(seg, CLASSES), (5,), 0).any()


def test_semantic_mask_picks_one_or_two_instances():
    seg = np.zeros((20, 40), int)
    for x0 in (1, 11, 21, 31):
        seg[5:15, x0:x0 + 8] = 5
    counts = set()
    for s in range(40):
        m = semantic_mask(SegMask(seg, CLASSES), (5,), s)
        counts.add(ndimage.label(m)[1])
    assert counts == {1, 2}


def test_semantic_xor_cases():
    a = np.array([[0, 1], [2, 5]])
    sa = SegMask(a, CLASSES)
    assert not semantic_xor_mask(sa, sa).any()
    b = np.array([[1, 0], [5, 2]])
    assert semantic_xor_mask(SegMask(b, CLASSES), sa).all()
    c = a.copy()
    c[0, 0] = 2
    c[1, 1] = 1
    assert semantic_xor_mask(SegMask(c, CLASSES), sa).sum() == 2


def test_perturb_changes_only_boundaries():
    seg = np.zeros((10, 10), int)
    seg[:, 5:] = 2
    p = perturb_segmentation(SegMask(seg, CLASSES), 0, prob=1.0).data
    diff = p != seg
    assert diff.any() and np.all(np.isin(np.nonzero(diff)[1], [4, 5]))


# --- pseudo depth ---------------------------------------------------------------

def _record():
    return synth_dataset(1, 11)[0]


def test_zero_methods_returns_raw():
    r = _record()
    d, ms = make_pseudo_depth(r, None, 0, PseudoConfig(include_prob=0.0))
    assert not any(ms.applied.values())
    assert np.array_equal(d.data, r.raw_depth.data)


def test_all_methods_mask_union():
    r = _record()
    seg_pred = perturb_segmentation(r.seg, 1)
    d, ms = make_pseudo_depth(r, seg_pred, 3, PseudoConfig(include_prob=1.0))
    assert all(ms.applied.values())
    u = ms.highlight | ms.black | ms.graphseg | ms.semantic | ms.semantic_xor
    assert np.array_equal(d.data == 0, u | (r.raw_depth.data == 0))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_pseudo_valid_subset(seed):
    r = _record()
    d, _ = pseudo_for_record(r, seed)
    valid = d.data > 0
    assert not (valid & ~(r.raw_depth.data > 0)).any()
    assert np.array_equal(d.data[valid], r.raw_depth.data[valid])


def test_pseudo_deterministic():
    r = _record()
    a, ma = pseudo_for_record(r, 42)
    b, mb = pseudo_for_record(r, 42)
    assert np.array_equal(a.data, b.data) and ma.applied == mb.applied


def test_write_pseudo_dataset(tmp_path):
    write_dataset(tmp_path / "ds", synth_dataset(2, 1))
    ids = write_pseudo_dataset(load_dataset(tmp_path / "ds"), 7, tmp_path / "out")
    assert len(ids) == 2
    side = json.loads((tmp_path / "out" / f"{ids[0]}.json").read_text())
    assert set(side["applied"]) == set(METHODS) and side["params"]["include_prob"] == 0.5
    assert (tmp_path / "out" / f"{ids[0]}.png").exists()
