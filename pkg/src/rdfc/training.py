"""Training loop, checkpoints, evaluation settings A/B/C and inference."""
from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .config import ConfigError, TrainConfig
from .core import DepthMap, MalformedFileError, SampleRecord, load_depth_png, load_rgb_png, save_depth_png
from .data import load_dataset, preprocess, sample_sparse, synth_dataset
from .gan import clip_weights_, critic_score, cycle_loss, gan_losses, gradient_penalty, rdfc_branch_loss
from .mcn import manhattan_term, masked_l1, mcn_branch_loss
from .metrics import evaluate_many
from .model import RDFCModel, build_model, build_optimizers, to_tensor_depth, to_tensor_normals, to_tensor_rgb
from .pseudo import PseudoConfig, pseudo_for_record, sample_seed

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
SETTINGS = ("A", "B", "C")


class TrainingDivergedError(RuntimeError):
    def __init__(self, msg, batch_ids, dump_path=None):
        super().__init__(msg)
        self.batch_ids = list(batch_ids)
        self.dump_path = dump_path


def lr_multiplier(epoch: int, start: int = 100, length: int = 50) -> float:
    """Linear decay to zero over ``length`` epochs after ``start``."""
    return 1.0 - (max(epoch, start) - start) / length


def overall_loss(l_mcn, l_rdfc, d_pred, d_sup, lambda_pred: float = 5.0):
    return l_mcn + l_rdfc + lambda_pred * masked_l1(d_pred, d_sup)


# --- data --------------------------------------------------------------------

def load_training_records(cfg: TrainConfig) -> list:
    if cfg.data_root:
        recs = load_dataset(cfg.data_root, cfg.data_split).records()
    else:
        recs = synth_dataset(cfg.synthetic_n, seed=cfg.seed, image_size=(cfg.image_width, cfg.image_height))
    return [prepare_record(r, cfg, sample_seed(cfg.seed, "crop", r.id)) for r in recs]


def prepare_record(r: SampleRecord, cfg: TrainConfig, seed: int = 0) -> SampleRecord:
    if not cfg.crop_width:
        return r
    h, w = r.shape
    resize = (cfg.resize_width or w, cfg.resize_height or h)
    return preprocess(r, resize, (cfg.crop_width, cfg.crop_height), cfg.crop_mode, seed)


def supervision_map(r: SampleRecord, cfg: TrainConfig) -> DepthMap:
    if cfg.supervision == "raw" or r.gt_depth is None:
        if cfg.supervision == "gt":
            raise ConfigError(f"sample {r.id} has no ground truth but supervision = gt")
        return r.raw_depth
    return r.gt_depth


def training_input(r: SampleRecord, cfg: TrainConfig, epoch: int) -> DepthMap:
    """Network input for one sample in one epoch; fresh corruption every epoch."""
    s = sample_seed(cfg.seed, "input", epoch, r.id)
    if cfg.setting == "A":
        if not cfg.pseudo_depth:
            return r.raw_depth
        pcfg = PseudoConfig(include_prob=cfg.pseudo_include_prob, semantic_labels=tuple(cfg.semantic_labels))
        return pseudo_for_record(r, s, pcfg)[0]
    return sample_sparse(r.raw_depth, cfg.n_sample, s)


def setting_input(r: SampleRecord, setting: str, seed: int, n_sample: int = 500) -> DepthMap:
    """Evaluation input: A raw, B sparse sample of raw, C sparse sample of gt."""
    if setting == "A":
        return r.raw_depth
    s = sample_seed(seed, "eval", r.id)
    if setting == "B":
        return sample_sparse(r.raw_depth, n_sample, s)
    if setting == "C":
        if r.gt_depth is None:
            raise ConfigError(f"setting C needs ground truth, sample {r.id} has none")
        return sample_sparse(r.gt_depth, n_sample, s)
    raise ConfigError(f"unknown setting {setting!r}")


def make_batch(records: Sequence[SampleRecord], inputs: Sequence[DepthMap], cfg: TrainConfig) -> dict:
    h, w = records[0].shape
    zeros3 = np.zeros((h, w, 3), np.float32)
    return {
        "ids": [r.id for r in records],
        "rgb": to_tensor_rgb([r.rgb.data for r in records]),
        "d_in": to_tensor_depth([d.data for d in inputs]),
        "d_sup": to_tensor_depth([supervision_map(r, cfg).data for r in records]),
        "n_star": to_tensor_normals([r.gt_normals.data if r.gt_normals is not None else zeros3 for r in records]),
        "codes": torch.from_numpy(np.stack([
            r.seg.plane_codes() if r.seg is not None else np.zeros((h, w), np.int64) for r in records])),
    }


# --- one optimisation step ---------------------------------------------------

def _set_requires_grad(params, flag: bool):
    for p in params:
        p.requires_grad_(flag)


def critic_step(model: RDFCModel, opt, cfg: TrainConfig, rgb, d_fake, d_real, rgb_fake) -> dict:
    """One update of D and D_r on detached generator outputs."""
    _set_requires_grad(model.critic_parameters(), True)
    opt.zero_grad(set_to_none=True)
    l_d, _, l_dr, _ = gan_losses(model.D(d_fake, rgb), model.D(d_real, rgb),
                                 model.Dr(rgb_fake), model.Dr(rgb), cfg.critic_reduction)
    loss = l_d + l_dr
    if cfg.lipschitz == "gp":
        loss = loss + cfg.gp_weight * (gradient_penalty(model.D, d_real, d_fake, rgb)
                                       + gradient_penalty(lambda x: model.Dr(x), rgb, rgb_fake))
    loss.backward()
    opt.step()
    if cfg.lipschitz == "clip":
        clip_weights_(model.D, cfg.clip_value)
        clip_weights_(model.Dr, cfg.clip_value)
    return {"L_D": l_d.item(), "L_Dr": l_dr.item()}


def generator_step(model: RDFCModel, opts: dict, batch: dict, out: dict, rgb_fake, cfg: TrainConfig,
                   step_seed: int = 0) -> dict:
    """One update of every non-critic parameter; critics are frozen throughout."""
    rgb, d_sup = batch["rgb"], batch["d_sup"]
    _set_requires_grad(model.critic_parameters(), False)
    l_g = -critic_score(model.D(out["d_f"], rgb), cfg.critic_reduction)
    l_gr = -critic_score(model.Dr(rgb_fake), cfg.critic_reduction)
    with torch.no_grad():
        latents_gt = model.mcn(d_sup, out["n"].detach()).latents
    d_rec = model.G(rgb_fake, latents_gt).d_f
    l_cycle = cycle_loss(rgb, model.Gr(out["d_f"]), d_sup, d_rec)
    mnm = manhattan_term(out["n"], batch["n_star"], batch["codes"], cfg.manhattan_loss,
                         cfg.wma_pair_budget, step_seed)
    l_mcn = mcn_branch_loss(out["d_l"], d_sup, mnm, cfg.lambda_l)
    l_pred = masked_l1(out["d_pred"], d_sup)
    # critic losses are constants here; the generator objective is the rest of the overall loss
    loss = l_mcn + l_g + l_gr + l_cycle + cfg.lambda_pred * l_pred
    for o in (opts["mcn"], opts["gen"]):
        o.zero_grad(set_to_none=True)
    loss.backward()
    opts["mcn"].step()
    opts["gen"].step()
    _set_requires_grad(model.critic_parameters(), True)
    return {
        "L_G": l_g.item(), "L_Gr": l_gr.item(), "L_cycle": l_cycle.item(), "L_MNM": mnm.item(),
        "L_MCN": l_mcn.item(), "L1_pred": l_pred.item(),
    }


def train_step(model: RDFCModel, opts: dict, batch: dict, cfg: TrainConfig, step_seed: int = 0) -> dict:
    """Forward both branches, ``n_critic`` critic updates, then one generator update."""
    out = model(batch["rgb"], batch["d_in"])
    rgb_fake = model.Gr(batch["d_sup"])
    stats = {}
    for _ in range(cfg.n_critic):
        stats.update(critic_step(model, opts["critic"], cfg, batch["rgb"], out["d_f"].detach(),
                                 batch["d_sup"], rgb_fake.detach()))
    stats.update(generator_step(model, opts, batch, out, rgb_fake, cfg, step_seed))
    stats["L_RDFC"] = rdfc_branch_loss(stats["L_D"], stats["L_G"], stats["L_Dr"], stats["L_Gr"], stats["L_cycle"])
    stats["L_overall"] = stats["L_MCN"] + stats["L_RDFC"] + cfg.lambda_pred * stats["L1_pred"]
    return stats


# --- checkpoints -------------------------------------------------------------

def make_checkpoint(model, opts, cfg, epoch, step, history) -> dict:
    return {
        "format_version": CHECKPOINT_VERSION,
        "model": {k: v.clone() for k, v in model.state_dict().items()},
        "optimizers": {k: o.state_dict() for k, o in opts.items()},
        "epoch": epoch,  # next epoch to run
        "step": step,
        "rng": {"torch": torch.get_rng_state().clone()},
        "config": cfg.to_dict(),
        "history": list(history),
    }


def save_checkpoint(ckpt: dict, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(ckpt, path)


def load_checkpoint(path) -> dict:
    ckpt = torch.load(path, map_location="cpu", weights_only=True)
    version = ckpt.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version!r}")
    return ckpt


def model_from_checkpoint(ckpt: dict) -> RDFCModel:
    cfg = TrainConfig.from_dict(ckpt["config"])
    model = RDFCModel(cfg)
    model.load_state_dict(ckpt["model"])
    model.eval()
    return model


# --- training loop -----------------------------------------------------------

def train(cfg: TrainConfig, data=None, resume: Optional[dict] = None, out_dir=None,
          stop_after_epochs: Optional[int] = None) -> dict:
    """Train and return the final checkpoint dict.

    ``data`` is a manifest or a list of SampleRecords; by default it is loaded
    from the config. ``stop_after_epochs`` ends the run early (used to test
    resumption). Checkpoints go to ``out_dir`` when given.
    """
    records = load_training_records(cfg) if data is None else [
        prepare_record(r, cfg, sample_seed(cfg.seed, "crop", r.id)) for r in data]
    if not records:
        raise ConfigError("no training samples")
    out_dir = Path(out_dir) if out_dir is not None else None

    model = build_model(cfg)
    model.train()
    opts = build_optimizers(model, cfg)
    epoch, step, history = 0, 0, []
    if resume is not None:
        model.load_state_dict(resume["model"])
        for k, o in opts.items():
            o.load_state_dict(resume["optimizers"][k])
        epoch, step, history = resume["epoch"], resume["step"], list(resume["history"])
        torch.set_rng_state(resume["rng"]["torch"])

    base_lrs = {"mcn": cfg.lr_mcn, "gen": cfg.lr_other, "critic": cfg.lr_other}
    n = len(records)
    epochs_run = 0
    done = cfg.max_steps and step >= cfg.max_steps
    while epoch < cfg.epochs and not done:
        mult = lr_multiplier(epoch, cfg.decay_start_epoch, cfg.decay_epochs)
        for k, o in opts.items():
            for g in o.param_groups:
                g["lr"] = base_lrs[k] * mult
        torch.manual_seed(sample_seed(cfg.seed, "torch", epoch))
        order = np.random.default_rng(sample_seed(cfg.seed, "order", epoch)).permutation(n)
        for b0 in range(0, n, cfg.batch_size):
            recs = [records[i] for i in order[b0:b0 + cfg.batch_size]]
            batch = make_batch(recs, [training_input(r, cfg, epoch) for r in recs], cfg)
            stats = train_step(model, opts, batch, cfg, step_seed=sample_seed(cfg.seed, "step", step))
            stats.update(epoch=epoch, step=step)
            if not all(math.isfinite(v) for v in stats.values()):
                dump = None
                if out_dir is not None:
                    out_dir.mkdir(parents=True, exist_ok=True)
                    dump = out_dir / f"diverged_step{step}.json"
                    dump.write_text(json.dumps({"batch_ids": batch["ids"], "stats": stats}, indent=2))
                raise TrainingDivergedError(f"non-finite loss at step {step}, batch {batch['ids']}",
                                            batch["ids"], dump)
            history.append(stats)
            step += 1
            if cfg.max_steps and step >= cfg.max_steps:
                done = True
                break
        epoch += 1
        epochs_run += 1
        if out_dir is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            save_checkpoint(make_checkpoint(model, opts, cfg, epoch, step, history), out_dir / "last.pt")
        if stop_after_epochs is not None and epochs_run >= stop_after_epochs:
            break
    ckpt = make_checkpoint(model, opts, cfg, epoch, step, history)
    if out_dir is not None:
        save_checkpoint(ckpt, out_dir / "last.pt")
    return ckpt


# --- inference and evaluation ------------------------------------------------

@torch.no_grad()
def predict(model: RDFCModel, rgb: np.ndarray, depth: np.ndarray) -> dict:
    """Run the model on one H x W sample; returns numpy maps."""
    model.eval()
    out = model(to_tensor_rgb([rgb]), to_tensor_depth([depth]))
    return {k: out[k][0, 0].numpy().copy() for k in ("d_pred", "d_l", "d_f", "c_l", "c_f")}


def evaluate(ckpt: dict, data, setting: str = "A", seed: int = 0, n_sample: int = 500,
             out_dir=None, plots: bool = True) -> tuple:
    """Dataset-level report for one evaluation setting plus per-sample reports."""
    if setting not in SETTINGS:
        raise ConfigError(f"setting must be one of {SETTINGS}")
    model = model_from_checkpoint(ckpt)
    records = list(data)
    preds = {}
    triples = []
    for r in records:
        if r.gt_depth is None:
            raise ConfigError(f"sample {r.id} has no ground truth to evaluate against")
        d_in = setting_input(r, setting, seed, n_sample)
        p = predict(model, r.rgb.data, d_in.data)
        preds[r.id] = p
        triples.append((r.id, DepthMap(np.maximum(p["d_pred"], 0.0)), r.gt_depth))
    K = records[0].intrinsics
    summary, per_sample = evaluate_many(triples, K)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        doc = {"setting": setting, "seed": seed, "n_sample": n_sample,
               "summary": summary.to_json(), "samples": {k: v.to_json() for k, v in per_sample.items()}}
        (out_dir / f"report_{setting}.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
        if plots:
            _plot_errors(out_dir / f"errors_{setting}", records, preds)
    return summary, per_sample


def _plot_errors(folder: Path, records, preds) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    folder.mkdir(parents=True, exist_ok=True)
    for r in records:
        gt = r.gt_depth.data
        err = np.where(gt > 0, np.abs(preds[r.id]["d_pred"] - gt), np.nan)
        fig, ax = plt.subplots(1, 3, figsize=(9, 2.6))
        ax[0].imshow(r.rgb.data)
        ax[1].imshow(preds[r.id]["d_pred"], cmap="viridis")
        im = ax[2].imshow(err, cmap="magma")
        fig.colorbar(im, ax=ax[2], fraction=0.046)
        for a, t in zip(ax, ("rgb", "prediction", "|error| (m)")):
            a.set_title(t)
            a.axis("off")
        fig.tight_layout()
        fig.savefig(folder / f"{r.id}.png", dpi=80)
        plt.close(fig)


def complete(ckpt: dict, rgb_path, depth_path, out_path, side_outputs: bool = False) -> DepthMap:
    """Complete one raw depth PNG and write the dense result as a 16-bit PNG."""
    try:
        rgb = load_rgb_png(rgb_path)
        raw = load_depth_png(depth_path)
    except MalformedFileError as e:
        raise OSError(str(e)) from e
    if rgb.shape != raw.shape:
        raise OSError(f"rgb {rgb.shape} and depth {raw.shape} differ in size")
    model = model_from_checkpoint(ckpt)
    p = predict(model, rgb.data, raw.data)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    # at least 1 mm so every pixel stays valid after 16-bit encoding
    dense = lambda a: DepthMap(np.maximum(a, 0.001))  # noqa: E731
    d_pred = dense(p["d_pred"])
    save_depth_png(out_path, d_pred)
    if side_outputs:
        stem = out_path.with_suffix("")
        save_depth_png(f"{stem}_local.png", dense(p["d_l"]))
        save_depth_png(f"{stem}_fused.png", dense(p["d_f"]))
        np.save(f"{stem}_confidence.npy", np.stack([p["c_l"], p["c_f"]]))
    return d_pred
