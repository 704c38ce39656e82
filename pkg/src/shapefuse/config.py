"""Plain-text configuration: `key = value` lines, namespaced keys.

Unknown keys are hard errors so typos cannot silently fall back to
defaults. Defaults follow the desk-scale values documented on each module;
training defaults depend on the phase (pretraining runs a flat learning
rate, fine-tuning starts at 0.01 and drops to 0.001 after epoch 10 with
backbones frozen for the first 10 epochs).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .errors import ConfigError

ABLATION_VARIANTS = (
    "full",
    "point_only",
    "view_only",
    "direct_concat",
    "no_view_branch",
    "no_object_branch",
)


@dataclass
class DataConfig:
    classes: int = 5
    per_class: int = 40
    points: int = 1024
    views: int = 12
    resolution: int = 32
    jitter: float = 0.01
    scale_min: float = 0.8
    scale_max: float = 1.2
    surface_samples: int = 8192
    render_samples: int = 32768
    seed: int = 7


@dataclass
class ModelConfig:
    point_widths: tuple = (64, 64, 128)
    point_k: int = 10
    point_dim: int = 1024
    view_widths: tuple = (16, 32, 64)
    conv_bias: bool = True
    agg_dim: int = 512
    heads: int = 4
    mlp_hidden: int = 128
    blocks: int = 1
    fuse_hidden: int = 1024
    desc_dim: int = 512
    share_cmam_imam: bool = False
    ablate: str = "full"


@dataclass
class TrainConfig:
    phase: str = "finetune"
    epochs: int = 30
    batch_size: int = 16
    lr_schedule: tuple = ((0, 0.01), (10, 0.001))
    momentum: float = 0.9
    weight_decay: float = 1e-5
    freeze_backbones_until: int = 10
    seed: int = 7
    arcface_m: float = 0.5
    arcface_s: float = 64.0

    def lr_at(self, epoch: int) -> float:
        lr = self.lr_schedule[0][1]
        for threshold, value in self.lr_schedule:
            if epoch >= threshold:
                lr = value
        return lr


@dataclass
class Config:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


_PRETRAIN_DEFAULTS = dict(
    epochs=10, lr_schedule=((0, 0.01),), weight_decay=1e-3, freeze_backbones_until=0
)


def _parse_int_list(text: str) -> tuple:
    return tuple(int(tok) for tok in text.split(",") if tok.strip())


def _parse_schedule(text: str) -> tuple:
    """Parse "0:0.01,10:0.001" into ((0, 0.01), (10, 0.001))."""
    pairs = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        epoch_s, _, lr_s = tok.partition(":")
        pairs.append((int(epoch_s), float(lr_s)))
    if not pairs:
        raise ConfigError(f"empty lr schedule '{text}'")
    thresholds = [e for e, _ in pairs]
    if thresholds != sorted(set(thresholds)):
        raise ConfigError(f"lr schedule thresholds must strictly increase: '{text}'")
    return tuple(pairs)


def _parse_flat_lr(text: str) -> tuple:
    """`train.lr` is shorthand for a single-rate schedule."""
    return ((0, float(text)),)


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"bad boolean '{text}'")


# key -> (section attr, field name, parser)
_KEYS = {
    "data.classes": ("data", "classes", int),
    "data.per_class": ("data", "per_class", int),
    "data.points": ("data", "points", int),
    "data.views": ("data", "views", int),
    "data.resolution": ("data", "resolution", int),
    "data.jitter": ("data", "jitter", float),
    "data.scale_min": ("data", "scale_min", float),
    "data.scale_max": ("data", "scale_max", float),
    "data.surface_samples": ("data", "surface_samples", int),
    "data.render_samples": ("data", "render_samples", int),
    "data.seed": ("data", "seed", int),
    "model.point_widths": ("model", "point_widths", _parse_int_list),
    "model.point_k": ("model", "point_k", int),
    "model.point_dim": ("model", "point_dim", int),
    "model.view_widths": ("model", "view_widths", _parse_int_list),
    "model.conv_bias": ("model", "conv_bias", _parse_bool),
    "model.agg_dim": ("model", "agg_dim", int),
    "model.heads": ("model", "heads", int),
    "model.mlp_hidden": ("model", "mlp_hidden", int),
    "model.blocks": ("model", "blocks", int),
    "model.fuse_hidden": ("model", "fuse_hidden", int),
    "model.desc_dim": ("model", "desc_dim", int),
    "model.share_cmam_imam": ("model", "share_cmam_imam", _parse_bool),
    "model.ablate": ("model", "ablate", str),
    "train.epochs": ("train", "epochs", int),
    "train.batch": ("train", "batch_size", int),
    "train.lr": ("train", "lr_schedule", _parse_flat_lr),
    "train.lr_schedule": ("train", "lr_schedule", _parse_schedule),
    "train.momentum": ("train", "momentum", float),
    "train.weight_decay": ("train", "weight_decay", float),
    "train.freeze_until": ("train", "freeze_backbones_until", int),
    "train.seed": ("train", "seed", int),
    "train.arcface_m": ("train", "arcface_m", float),
    "train.arcface_s": ("train", "arcface_s", float),
}


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Parse config text into a {key: raw string} dict, rejecting unknown keys."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, _, value = body.partition("=")
        key = key.strip()
        if key not in _KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown config key '{key}'")
        raw[key] = value.strip()
    return raw


def load_config(path: str | None = None, overrides: dict | None = None, phase: str | None = None) -> Config:
    """Build a Config from defaults + optional file + optional overrides.

    `phase`, when given as a pretrain phase, swaps in the pretraining
    defaults for any train.* key the file does not set explicitly.
    """
    cfg = Config()
    if phase is not None:
        if phase not in ("pretrain_point", "pretrain_view", "finetune"):
            raise ConfigError(f"unknown phase '{phase}'")
        cfg.train = replace(cfg.train, phase=phase)
        if phase.startswith("pretrain"):
            cfg.train = replace(cfg.train, **_PRETRAIN_DEFAULTS)
    raw: dict[str, str] = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            raw.update(parse_config_text(fh.read(), source=path))
    for key, value in (overrides or {}).items():
        if key not in _KEYS:
            raise ConfigError(f"unknown config key '{key}'")
        raw[key] = str(value)
    for key, value in raw.items():
        section, attr, parser = _KEYS[key]
        try:
            parsed = parser(value)
        except (ValueError, TypeError):
            raise ConfigError(f"bad value for {key}: '{value}'") from None
        setattr(getattr(cfg, section), attr, parsed)
    _validate(cfg)
    return cfg


def _validate(cfg: Config) -> None:
    if cfg.train.epochs < 0:
        raise ConfigError("train.epochs must be >= 0")
    if cfg.train.batch_size < 1:
        raise ConfigError("train.batch must be >= 1")
    if cfg.model.agg_dim % cfg.model.heads != 0:
        raise ConfigError(
            f"model.heads ({cfg.model.heads}) must divide model.agg_dim ({cfg.model.agg_dim})"
        )
    if cfg.model.ablate not in ABLATION_VARIANTS:
        raise ConfigError(f"unknown ablation variant '{cfg.model.ablate}'")
    if not (0.0 <= cfg.train.arcface_m < 1.5707963267948966):
        raise ConfigError("train.arcface_m must lie in [0, pi/2)")
    if cfg.train.arcface_s <= 0:
        raise ConfigError("train.arcface_s must be positive")
    if cfg.data.views < 1 or 360 % cfg.data.views != 0:
        raise ConfigError("data.views must divide 360")


def dump_config(cfg: Config) -> str:
    """Serialize a Config back to the key = value syntax (round-trippable)."""
    lines = []
    for key, (section, attr, parser) in _KEYS.items():
        if parser is _parse_flat_lr:
            continue  # alias of train.lr_schedule; one serialization suffices
        value = getattr(getattr(cfg, section), attr)
        if parser is _parse_int_list:
            text = ",".join(str(v) for v in value)
        elif parser is _parse_schedule:
            text = ",".join(f"{e}:{lr}" for e, lr in value)
        elif parser is _parse_bool:
            text = "true" if value else "false"
        else:
            text = str(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"
