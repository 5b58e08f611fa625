"""Training configuration and its flat ``key = value`` file format."""
from __future__ import annotations

from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


def _opt(default, doc, choices=None):
    return field(default=default, metadata={"doc": doc, "choices": choices})


@dataclass(frozen=True)
class TrainConfig:
    seed: int = _opt(0, "base seed for initialisation, data order and pseudo depth")
    setting: str = _opt("A", "training regime: A pseudo depth from raw, B/C sparse samples of raw", ("A", "B", "C"))
    n_sample: int = _opt(500, "valid pixels kept by sparse sampling in settings B/C")
    supervision: str = _opt("auto", "L1/real-depth target: gt, raw, or auto (gt when present)", ("auto", "gt", "raw"))
    pseudo_depth: bool = _opt(True, "corrupt raw input with pseudo-depth masks in setting A")
    pseudo_include_prob: float = _opt(0.5, "per-method inclusion probability for pseudo depth")
    semantic_labels: tuple = _opt((5,), "segmentation labels eligible for semantic masking")

    lambda_l: float = _opt(0.5, "weight of the local-depth L1 term")
    lambda_pred: float = _opt(5.0, "weight of the final-prediction L1 term")
    manhattan_loss: str = _opt("per_class", "plane loss: per_class (gravity-aligned) or wma (pairwise)", ("per_class", "wma"))
    wma_pair_budget: int = _opt(200_000, "max wall x horizontal pairs per sample for the wma loss")
    normal_modality: str = _opt("rgbd", "normal generator input: rgb or rgbd", ("rgb", "rgbd"))
    normal_group: str = _opt("other", "optimizer group of the normal generator: other or mcn", ("other", "mcn"))
    depth_scale: float = _opt(10.0, "meters mapped to unit network input/output")

    lr_mcn: float = _opt(0.002, "initial AdamW learning rate of the MCN encoder-decoder")
    weight_decay_mcn: float = _opt(0.01, "AdamW weight decay of the MCN encoder-decoder")
    lr_other: float = _opt(0.004, "initial Adam learning rate of all other modules")
    beta1: float = _opt(0.5, "first-moment decay of every optimizer")
    beta2: float = _opt(0.999, "second-moment decay of every optimizer")
    epochs: int = _opt(150, "number of epochs")
    decay_start_epoch: int = _opt(100, "epoch after which the learning rate decays linearly")
    decay_epochs: int = _opt(50, "epochs over which the learning rate reaches zero")
    max_steps: int = _opt(2000, "stop after this many generator steps (0 = no limit)")
    batch_size: int = _opt(4, "samples per step")

    lipschitz: str = _opt("clip", "critic Lipschitz constraint: clip or gp", ("clip", "gp"))
    clip_value: float = _opt(0.01, "critic weight-clipping bound")
    gp_weight: float = _opt(10.0, "gradient-penalty weight when lipschitz = gp")
    n_critic: int = _opt(1, "critic updates per generator update")
    critic_reduction: str = _opt("mean", "critic score reduction over patches: mean or sum", ("mean", "sum"))

    data_root: str = _opt("", "dataset root; empty means generate synthetic scenes")
    data_split: str = _opt("train", "dataset split used for training", ("train", "test"))
    synthetic_n: int = _opt(64, "number of synthetic scenes when data_root is empty")
    image_width: int = _opt(64, "synthetic scene width")
    image_height: int = _opt(48, "synthetic scene height")
    resize_width: int = _opt(0, "resize width before cropping (0 = keep)")
    resize_height: int = _opt(0, "resize height before cropping (0 = keep)")
    crop_width: int = _opt(0, "crop width (0 = no crop)")
    crop_height: int = _opt(0, "crop height (0 = no crop)")
    crop_mode: str = _opt("center", "crop window: center or random", ("center", "random"))
    out_dir: str = _opt("runs/default", "directory for checkpoints and logs")
    checkpoint_every: int = _opt(1, "save a checkpoint every this many epochs (0 = only at the end)")

    def __post_init__(self):
        for f in fields(self):
            choices = f.metadata.get("choices")
            if choices and getattr(self, f.name) not in choices:
                raise ConfigError(f"{f.name} must be one of {choices}, got {getattr(self, f.name)!r}")
        if min(self.lr_mcn, self.lr_other) <= 0:
            raise ConfigError("learning rates must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("betas must lie in (0, 1)")
        if min(self.lambda_l, self.lambda_pred) < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.setting in ("B", "C") and self.n_sample <= 0:
            raise ConfigError("n_sample must be positive for settings B/C")
        if self.batch_size < 1 or self.epochs < 1 or self.decay_epochs < 1:
            raise ConfigError("batch_size, epochs and decay_epochs must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["semantic_labels"] = list(self.semantic_labels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "semantic_labels" in d:
            d["semantic_labels"] = tuple(int(v) for v in d["semantic_labels"])
        return cls(**d)


def _parse_value(f, text: str):
    default = f.default if f.default is not MISSING else None
    if isinstance(default, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{f.name}: expected a boolean, got {text!r}")
    try:
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{f.name}: cannot parse {text!r}") from None
    return text


def parse_config(text: str) -> TrainConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are rejected."""
    by_name = {f.name: f for f in fields(TrainConfig)}
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in by_name:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        values[key] = _parse_value(by_name[key], val)
    return TrainConfig(**values)


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text())


def format_config(cfg: TrainConfig) -> str:
    """Render a config file with every key and its documentation."""
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = " ".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"# {f.metadata['doc']}")
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


def full_scale_config(data_root: str, **overrides) -> TrainConfig:
    """Full-scale profile: 304x228 crops of 320x240 frames, no step cap."""
    base = dict(data_root=data_root, max_steps=0, resize_width=320, resize_height=240,
                crop_width=304, crop_height=228)
    base.update(overrides)
    return TrainConfig(**base)
