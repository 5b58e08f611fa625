import json

import numpy as np
import pytest
import torch

from rdfc.config import ConfigError, TrainConfig, format_config, full_scale_config, parse_config
from rdfc.core import DepthMap, load_depth_png, save_depth_png, save_rgb_png
from rdfc.data import synth_dataset
from rdfc.model import build_model, build_optimizers
from rdfc.training import (
    TrainingDivergedError,
    critic_step,
    evaluate,
    generator_step,
    lr_multiplier,
    load_checkpoint,
    make_batch,
    make_checkpoint,
    overall_loss,
    complete,
    save_checkpoint,
    setting_input,
    train,
    training_input,
)
import rdfc.training as training

TINY = dict(synthetic_n=4, batch_size=4, max_steps=0, epochs=2, checkpoint_every=1)


@pytest.fixture(scope="module")
def recs():
    return synth_dataset(4, seed=0)


@pytest.fixture(scope="module")
def trained(recs):
    return train(TrainConfig(**TINY), recs)


# --- config -------------------------------------------------------------------

def test_defaults():
    c = TrainConfig()
    assert (c.lambda_l, c.lambda_pred, c.lr_mcn, c.weight_decay_mcn, c.lr_other) == (0.5, 5.0, 0.002, 0.01, 0.004)
    assert (c.beta1, c.beta2, c.epochs, c.clip_value, c.n_sample) == (0.5, 0.999, 150, 0.01, 500)


@pytest.mark.parametrize("bad", [dict(lr_mcn=0), dict(beta1=1.0), dict(lambda_pred=-1), dict(setting="D"),
                                 dict(lipschitz="none"), dict(setting="B", n_sample=0)])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        TrainConfig(**bad)


def test_config_text_roundtrip():
    c = TrainConfig(seed=3, setting="B", semantic_labels=(5, 7), pseudo_depth=False, depth_scale=8.0)
    assert parse_config(format_config(c)) == c
    assert all(line.startswith("# ") for line in format_config(c).splitlines()[::2])


def test_config_parse_errors():
    with pytest.raises(ConfigError, match="unknown"):
        parse_config("learning_rate = 3\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("seed = 1\nseed = 2\n")
    with pytest.raises(ConfigError):
        parse_config("seed 1\n")
    with pytest.raises(ConfigError):
        parse_config("pseudo_depth = maybe\n")
    assert parse_config("# comment\nseed = 4  # trailing\n").seed == 4
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"nope": 1})


def test_paper_profile():
    c = full_scale_config("/data/nyu")
    assert (c.crop_width, c.crop_height, c.resize_width, c.max_steps) == (304, 228, 320, 0)


# --- losses and schedule ---------------------------------------------------------

def test_lr_schedule_closed_form():
    assert [lr_multiplier(e) for e in (0, 50, 100, 125, 150)] == [1.0, 1.0, 1.0, 0.5, 0.0]
    for e in range(151):
        assert lr_multiplier(e) == 1 - (max(e, 100) - 100) / 50


def test_overall_loss_examples():
    d = torch.full((1, 1, 2, 2), 2.0)
    assert overall_loss(0.0, 0.0, d, d).item() == 0
    assert overall_loss(1.0, 2.0, d + 0.1, d, 5.0).item() == pytest.approx(3.5, abs=1e-5)


# --- inputs -------------------------------------------------------------------------

def test_setting_inputs(recs):
    r = recs[0]
    assert setting_input(r, "A", 0) is r.raw_depth
    b = setting_input(r, "B", 0).data
    assert (b > 0).sum() == min(500, (r.raw_depth.data > 0).sum())
    c = setting_input(r, "C", 0).data
    assert np.array_equal(c[c > 0], r.gt_depth.data[c > 0])
    from dataclasses import replace

    with pytest.raises(ConfigError):
        setting_input(replace(r, gt_depth=None), "C", 0)


def test_training_input_fresh_per_epoch(recs):
    cfg = TrainConfig()
    r = max(recs, key=lambda x: len(np.unique(x.seg.data)))
    a = training_input(r, cfg, 0)
    assert np.array_equal(a.data, training_input(r, cfg, 0).data)
    assert any(not np.array_equal(a.data, training_input(r, cfg, e).data) for e in range(1, 6))
    sparse = training_input(recs[0], TrainConfig(setting="B", n_sample=50), 0).data
    assert (sparse > 0).sum() == 50


# --- gradient routing ------------------------------------------------------------

def test_gradient_routing(recs):
    cfg = TrainConfig()
    model = build_model(cfg)
    opts = build_optimizers(model, cfg)
    batch = make_batch(recs[:2], [training_input(r, cfg, 0) for r in recs[:2]], cfg)
    out = model(batch["rgb"], batch["d_in"])
    rgb_fake = model.Gr(batch["d_sup"])
    critic_ids = {id(p) for p in model.critic_parameters()}
    snap = lambda: {n: p.detach().clone() for n, p in model.named_parameters()}  # noqa: E731

    before = snap()
    critic_step(model, opts["critic"], cfg, batch["rgb"], out["d_f"].detach(), batch["d_sup"], rgb_fake.detach())
    after = snap()
    for n, p in model.named_parameters():
        changed = not torch.equal(before[n], after[n])
        if id(p) not in critic_ids:
            assert not changed, n
    assert any(not torch.equal(before[n], after[n]) for n, p in model.named_parameters() if id(p) in critic_ids)
    assert all(p.abs().max() <= cfg.clip_value for p in model.critic_parameters())

    generator_step(model, opts, batch, out, rgb_fake, cfg)
    final = snap()
    for n, p in model.named_parameters():
        if id(p) in critic_ids:
            assert torch.equal(after[n], final[n]), n
    assert not torch.equal(after["G.net.head.weight"], final["G.net.head.weight"])


# --- training, checkpoints, determinism ---------------------------------------------

def test_train_history_finite(trained):
    assert trained["step"] == 2 and trained["epoch"] == 2
    assert all(np.isfinite(v) for h in trained["history"] for v in h.values())


def test_resume_matches_uninterrupted(recs, trained, tmp_path):
    cfg = TrainConfig(**TINY)
    half = train(cfg, recs, out_dir=tmp_path, stop_after_epochs=1)
    assert half["epoch"] == 1
    resumed = train(cfg, recs, resume=load_checkpoint(tmp_path / "last.pt"))
    assert resumed["history"] == trained["history"]
    for k, v in trained["model"].items():
        assert torch.equal(v, resumed["model"][k]), k


def test_checkpoint_roundtrip(trained, tmp_path):
    save_checkpoint(trained, tmp_path / "c.pt")
    back = load_checkpoint(tmp_path / "c.pt")
    for k, v in trained["model"].items():
        assert torch.equal(v, back["model"][k])
    assert back["config"] == trained["config"] and back["history"] == trained["history"]
    bad = dict(trained, format_version=99)
    torch.save(bad, tmp_path / "bad.pt")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad.pt")


def test_divergence_dumps_batch(recs, tmp_path, monkeypatch):
    monkeypatch.setattr(training, "train_step", lambda *a, **k: {"L_D": float("nan")})
    with pytest.raises(TrainingDivergedError) as e:
        train(TrainConfig(**TINY), recs, out_dir=tmp_path)
    assert sorted(e.value.batch_ids) == sorted(r.id for r in recs)
    assert json.loads(e.value.dump_path.read_text())["batch_ids"] == e.value.batch_ids


@pytest.mark.parametrize("setting", ["A", "B", "C"])
def test_evaluate_stable_json(trained, recs, tmp_path, setting):
    s1, _ = evaluate(trained, recs, setting, seed=1, out_dir=tmp_path / "a", plots=False)
    s2, _ = evaluate(trained, recs, setting, seed=1, out_dir=tmp_path / "b", plots=setting == "A")
    f = f"report_{setting}.json"
    assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    doc = json.loads((tmp_path / "a" / f).read_text())
    assert set(doc) == {"setting", "seed", "n_sample", "summary", "samples"}
    assert set(doc["summary"]) >= {"rmse", "rel", "delta", "cd", "cd_1e-4", "f1", "precision", "recall"}
    if setting == "A":
        assert len(list((tmp_path / "b" / "errors_A").glob("*.png"))) == len(recs)


def test_evaluate_setting_c_without_gt(trained, recs):
    from dataclasses import replace

    with pytest.raises(ConfigError):
        evaluate(trained, [replace(recs[0], gt_depth=None)], "C", plots=False)


def test_complete_outputs(trained, recs, tmp_path):
    r = recs[1]
    save_rgb_png(tmp_path / "rgb.png", r.rgb)
    raw = r.raw_depth.data.copy()
    raw[10:20, 10:30] = 0
    save_depth_png(tmp_path / "raw.png", DepthMap(raw))
    complete(trained, tmp_path / "rgb.png", tmp_path / "raw.png", tmp_path / "o1.png", side_outputs=True)
    complete(trained, tmp_path / "rgb.png", tmp_path / "raw.png", tmp_path / "o2.png")
    assert (tmp_path / "o1.png").read_bytes() == (tmp_path / "o2.png").read_bytes()
    d = load_depth_png(tmp_path / "o1.png").data
    assert (d > 0).all()
    lo = load_depth_png(tmp_path / "o1_local.png").data
    fu = load_depth_png(tmp_path / "o1_fused.png").data
    assert np.all(d >= np.minimum(lo, fu)) and np.all(d <= np.maximum(lo, fu))
    assert np.load(tmp_path / "o1_confidence.npy").shape == (2,) + d.shape


def test_complete_size_mismatch(trained, recs, tmp_path):
    save_rgb_png(tmp_path / "rgb.png", recs[0].rgb)
    save_depth_png(tmp_path / "raw.png", DepthMap(np.ones((10, 10))))
    with pytest.raises(OSError):
        complete(trained, tmp_path / "rgb.png", tmp_path / "raw.png", tmp_path / "o.png")
    with pytest.raises(OSError):
        complete(trained, tmp_path / "missing.png", tmp_path / "raw.png", tmp_path / "o.png")


def test_checkpoint_contents(recs):
    cfg = TrainConfig(**TINY)
    m = build_model(cfg)
    ck = make_checkpoint(m, build_optimizers(m, cfg), cfg, 0, 0, [])
    assert set(ck) == {"format_version", "model", "optimizers", "epoch", "step", "rng", "config", "history"}
