"""Command-line entry point: ``rdfc <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, TrainConfig, load_config


def _records_for(cfg: TrainConfig, root: str, split: str, seed_offset: int = 0):
    from .data import load_dataset, synth_dataset

    if root:
        return load_dataset(root, split).records()
    return synth_dataset(cfg.synthetic_n, cfg.seed + seed_offset, (cfg.image_width, cfg.image_height))


def cmd_train(a) -> int:
    from .training import load_checkpoint, train

    cfg = load_config(a.config)
    out = Path(a.out or cfg.out_dir)
    resume = load_checkpoint(a.resume) if a.resume else None
    ckpt = train(cfg, resume=resume, out_dir=out)
    last = ckpt["history"][-1] if ckpt["history"] else {}
    print(json.dumps({"checkpoint": str(out / "last.pt"), "epoch": ckpt["epoch"], "step": ckpt["step"],
                      "last": last}, indent=2))
    return 0


def cmd_evaluate(a) -> int:
    from .training import evaluate, load_checkpoint, prepare_record

    ckpt = load_checkpoint(a.ckpt)
    cfg = TrainConfig.from_dict(ckpt["config"])
    records = [prepare_record(r, cfg) for r in _records_for(cfg, a.root, a.split, a.synthetic_offset)]
    out = Path(a.out) if a.out else Path(a.ckpt).parent / "eval"
    summary, _ = evaluate(ckpt, records, a.setting, a.seed, a.n_sample, out_dir=out, plots=not a.no_plots)
    print(json.dumps(summary.to_json(), indent=2, sort_keys=True))
    return 0


def cmd_complete(a) -> int:
    from .training import complete, load_checkpoint

    complete(load_checkpoint(a.ckpt), a.rgb, a.depth, a.out, side_outputs=a.side_outputs)
    print(a.out)
    return 0


def cmd_synth_data(a) -> int:
    from .data import synth_dataset, write_dataset

    recs = synth_dataset(a.n, a.seed, (a.width, a.height))
    write_dataset(a.out, recs, a.split)
    print(f"wrote {len(recs)} scenes to {a.out}")
    return 0


def cmd_pseudo_gen(a) -> int:
    from .data import load_dataset
    from .pseudo import PseudoConfig, write_pseudo_dataset

    cfg = PseudoConfig(include_prob=a.include_prob) if a.include_prob is not None else PseudoConfig()
    written = write_pseudo_dataset(load_dataset(a.root, a.split), a.seed, a.out, cfg)
    print(f"wrote {len(written)} pseudo depth maps to {a.out}")
    return 0


def cmd_metrics(a) -> int:
    from .metrics import evaluate_dirs

    doc = evaluate_dirs(a.pred, a.gt, a.intrinsics, a.out)
    print(json.dumps(doc["summary"], indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rdfc", description="RGB-D depth completion with Manhattan constraints.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train from a key = value config file")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default=None, help="override out_dir")
    s.add_argument("--resume", default=None, help="checkpoint to resume from")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="evaluate a checkpoint under setting A, B or C")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--setting", choices=("A", "B", "C"), required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--root", default="", help="dataset root; empty uses synthetic scenes")
    s.add_argument("--split", default="test")
    s.add_argument("--n-sample", type=int, default=500)
    s.add_argument("--synthetic-offset", type=int, default=0,
                   help="seed offset of the synthetic evaluation scenes")
    s.add_argument("--out", default=None)
    s.add_argument("--no-plots", action="store_true")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("complete", help="complete one raw depth image")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--rgb", required=True)
    s.add_argument("--depth", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--side-outputs", action="store_true", help="also write d_l, d_f and confidences")
    s.set_defaults(func=cmd_complete)

    s = sub.add_parser("synth-data", help="render synthetic Manhattan scenes as a dataset")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--width", type=int, default=64)
    s.add_argument("--height", type=int, default=48)
    s.add_argument("--split", default="train")
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("pseudo-gen", help="write pseudo depth maps for a dataset")
    s.add_argument("--root", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--split", default="train")
    s.add_argument("--include-prob", type=float, default=None)
    s.set_defaults(func=cmd_pseudo_gen)

    s = sub.add_parser("metrics", help="score predicted depth PNGs against ground truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--intrinsics", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_metrics)
    return p


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return a.func(a)
    except (ConfigError, FileNotFoundError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
