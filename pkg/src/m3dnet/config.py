"""Configuration tree with dotted keys.

Every leaf is addressable as ``section.field`` (``mfm.heads``, ``train.lr``).
Config files are plain ``key = value`` lines; ``#`` starts a comment and
tuple-valued keys take comma-separated values. Precedence when merging is
defaults < file < explicit overrides.
"""
from __future__ import annotations

import dataclasses
import difflib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, get_args, get_origin, get_type_hints

from .errors import ConfigError

CONFIG_ENV_VAR = "M3D_CONFIG"


@dataclass
class ReconConfig:
    image_size: int = 64
    width: int = 16
    lambda_f: float = 0.5
    lambda_p: float = 1.0
    max_rotation_deg: float = 60.0
    max_translation: float = 0.1
    fov_deg: float = 10.0
    perceptual: str = "random"  # "random" | "vgg16"
    perceptual_weights: str = ""
    perceptual_width: int = 16
    seed: int = 0

    def validate(self) -> None:
        if self.image_size <= 0 or self.image_size % 16:
            raise ConfigError(f"recon.image_size must be a positive multiple of 16, got {self.image_size}")
        if self.width < 1:
            raise ConfigError("recon.width must be >= 1")
        if self.lambda_f < 0 or self.lambda_p < 0:
            raise ConfigError("recon.lambda_f and recon.lambda_p must be >= 0")
        if self.perceptual not in ("random", "vgg16"):
            raise ConfigError(f"recon.perceptual must be 'random' or 'vgg16', got {self.perceptual!r}")
        if not 0 < self.fov_deg < 180:
            raise ConfigError("recon.fov_deg must be in (0, 180)")


@dataclass
class PFMConfig:
    kernel_sizes: tuple[int, ...] = (1, 3, 5, 7)
    reduction_ratio: int = 8
    stem_width: int = 16
    fusion_width: int = 16
    allow_resample: bool = True
    input_mode: str = "stem"  # "stem" | "direct"
    enabled: bool = True

    def validate(self) -> None:
        if not self.kernel_sizes:
            raise ConfigError("pfm.kernel_sizes must not be empty")
        if any(k < 1 or k % 2 == 0 for k in self.kernel_sizes):
            raise ConfigError(f"pfm.kernel_sizes must all be odd and positive, got {self.kernel_sizes}")
        if len(set(self.kernel_sizes)) != len(self.kernel_sizes):
            raise ConfigError("pfm.kernel_sizes must not repeat")
        if self.reduction_ratio < 1:
            raise ConfigError("pfm.reduction_ratio must be >= 1")
        if self.input_mode not in ("stem", "direct"):
            raise ConfigError("pfm.input_mode must be 'stem' or 'direct'")
        if self.stem_width < 1 or self.fusion_width < 1:
            raise ConfigError("pfm widths must be >= 1")


@dataclass
class BackboneConfig:
    family: str = "efficientnet"  # "efficientnet" | "xception"
    tier: str = "tiny"  # "tiny" | "small" | "b4-class"
    output_dim: int = 64
    pretrained: bool = False
    weights_path: str = ""

    def validate(self) -> None:
        if self.family not in ("efficientnet", "xception"):
            raise ConfigError(f"backbone.family must be 'efficientnet' or 'xception', got {self.family!r}")
        if self.tier not in ("tiny", "small", "b4-class"):
            raise ConfigError(f"backbone.tier must be tiny, small or b4-class, got {self.tier!r}")
        if self.output_dim < 1:
            raise ConfigError("backbone.output_dim must be >= 1")


@dataclass
class AttentionConfig:
    heads: int = 4
    width: int = 256
    dropout: float = 0.0
    attention_enabled: bool = True
    norm_eps: float = 1e-6

    def validate(self) -> None:
        if self.heads < 1 or self.width < 1:
            raise ConfigError("mfm.heads and mfm.width must be >= 1")
        if self.width % self.heads:
            raise ConfigError(f"mfm.width ({self.width}) must be divisible by mfm.heads ({self.heads})")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("mfm.dropout must be in [0, 1)")


@dataclass
class TrainConfig:
    phase: str = "detect"  # "pretrain" | "detect"
    batch_size: int = 64
    lr: float = 2e-4
    weight_decay: float = 1e-5
    amsgrad: bool = True
    epochs: int = 50
    checkpoint_every: int = 5
    seed: int = 0
    pretrain_epochs: int = 50
    pretrain_lr: float = 2e-4
    pretrain_batch_size: int = 64
    log_every: int = 1

    def validate(self) -> None:
        if self.phase not in ("pretrain", "detect"):
            raise ConfigError(f"train.phase must be 'pretrain' or 'detect', got {self.phase!r}")
        for name in ("batch_size", "epochs", "checkpoint_every", "pretrain_epochs",
                     "pretrain_batch_size", "log_every"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"train.{name} must be positive")
        if self.lr <= 0 or self.pretrain_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.weight_decay < 0:
            raise ConfigError("train.weight_decay must be >= 0")
        epochs = self.pretrain_epochs if self.phase == "pretrain" else self.epochs
        if self.checkpoint_every > epochs:
            raise ConfigError(f"train.checkpoint_every ({self.checkpoint_every}) exceeds epochs ({epochs})")


@dataclass
class AugmentConfig:
    enabled: bool = True
    flip_prob: float = 0.5
    rotate_max_deg: float = 10.0
    blur_prob: float = 0.1
    brightness_delta: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        for name in ("flip_prob", "blur_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"augment.{name} must be in [0, 1], got {p}")
        if self.rotate_max_deg < 0 or self.brightness_delta < 0:
            raise ConfigError("augment magnitudes must be >= 0")


@dataclass
class Config:
    recon: ReconConfig = field(default_factory=ReconConfig)
    pfm: PFMConfig = field(default_factory=PFMConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    mfm: AttentionConfig = field(default_factory=AttentionConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def validate(self) -> "Config":
        for f in dataclasses.fields(self):
            getattr(self, f.name).validate()
        return self

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def flat(self) -> dict[str, Any]:
        return {key: self.get(key) for key in schema()}

    def get(self, key: str) -> Any:
        section, name = _split_key(key)
        return getattr(getattr(self, section), name)

    def with_overrides(self, overrides: dict[str, Any]) -> "Config":
        """Return a copy with dotted-key overrides applied (strings are parsed)."""
        out = Config.from_dict(self.to_dict())
        for key, raw in overrides.items():
            section, name = _split_key(key)
            kind = schema()[key]
            value = parse_value(kind, raw, key) if isinstance(raw, str) else _coerce(kind, raw, key)
            setattr(getattr(out, section), name, value)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Config":
        cfg = cls()
        for section, values in data.items():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section {section!r}")
            for name, raw in values.items():
                key = f"{section}.{name}"
                if key not in schema():
                    raise ConfigError(f"unknown config key {key!r}{_suggest(key)}")
                setattr(getattr(cfg, section), name, _coerce(schema()[key], raw, key))
        return cfg

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


_SECTIONS = {f.name: f.type for f in dataclasses.fields(Config)}
_SECTION_CLASSES = {
    "recon": ReconConfig, "pfm": PFMConfig, "backbone": BackboneConfig,
    "mfm": AttentionConfig, "train": TrainConfig, "augment": AugmentConfig,
}


def schema() -> dict[str, Any]:
    """Map every dotted key to its declared type."""
    out: dict[str, Any] = {}
    for section, klass in _SECTION_CLASSES.items():
        hints = get_type_hints(klass)
        for f in dataclasses.fields(klass):
            out[f"{section}.{f.name}"] = hints[f.name]
    return out


def describe_schema() -> str:
    """Human-readable listing of every key, its type and default (``--help-config``)."""
    defaults = Config().flat()
    lines = ["# m3dnet configuration keys (key = value, one per line)"]
    for key, kind in schema().items():
        default = defaults[key]
        if isinstance(default, tuple):
            default = ",".join(str(v) for v in default)
        lines.append(f"{key} = {default}    # {_type_name(kind)}")
    return "\n".join(lines)


def _type_name(kind: Any) -> str:
    if get_origin(kind) is tuple:
        return f"comma-separated {get_args(kind)[0].__name__}"
    return kind.__name__


def _split_key(key: str) -> tuple[str, str]:
    if key not in schema():
        raise ConfigError(f"unknown config key {key!r}{_suggest(key)}")
    section, name = key.split(".", 1)
    return section, name


def _suggest(key: str) -> str:
    close = difflib.get_close_matches(key, list(schema()), n=1)
    return f" (did you mean {close[0]!r}?)" if close else ""


def parse_value(kind: Any, raw: str, key: str = "") -> Any:
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if get_origin(kind) is tuple:
            inner = get_args(kind)[0]
            return tuple(inner(v.strip()) for v in raw.split(",") if v.strip())
        return kind(raw)
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r} as {_type_name(kind)} for {key}") from None


def _coerce(kind: Any, value: Any, key: str) -> Any:
    if isinstance(value, str) and kind is not str:
        return parse_value(kind, value, key)
    if get_origin(kind) is tuple:
        return tuple(get_args(kind)[0](v) for v in value)
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if kind is not str and not isinstance(value, kind):
        raise ConfigError(f"{key} expects {_type_name(kind)}, got {value!r}")
    return value


def read_config_file(path: str | os.PathLike) -> dict[str, str]:
    """Parse a ``key = value`` file into raw string overrides."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    out: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in schema():
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}{_suggest(key)}")
        out[key] = value
    return out


def write_config_file(cfg: Config, path: str | os.PathLike) -> None:
    lines = []
    for key, value in cfg.flat().items():
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_config(path: str | os.PathLike | None = None,
                overrides: dict[str, Any] | None = None) -> Config:
    """Defaults, then the file at ``path`` (or ``$M3D_CONFIG``), then overrides."""
    if path is None:
        path = os.environ.get(CONFIG_ENV_VAR) or None
    cfg = Config()
    if path is not None:
        cfg = cfg.with_overrides(read_config_file(path))
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg.validate()


def desk_config(overrides: dict[str, Any] | None = None) -> Config:
    """Small CPU-friendly configuration used by tests and demos."""
    base = {
        "recon.image_size": 64, "recon.width": 16, "recon.perceptual_width": 8,
        "pfm.stem_width": 8, "pfm.fusion_width": 16,
        "backbone.tier": "tiny", "backbone.output_dim": 32,
        "mfm.width": 32, "mfm.heads": 4,
        "train.batch_size": 16, "train.epochs": 2, "train.checkpoint_every": 1,
        "train.lr": 1e-3, "train.pretrain_epochs": 2, "train.pretrain_lr": 1e-3,
        "train.pretrain_batch_size": 8,
    }
    base.update(overrides or {})
    return Config().with_overrides(base).validate()
