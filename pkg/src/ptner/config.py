"""Run configuration loaded from TOML (schema in docs/config.md)."""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .corpus import TagSet
from .encoder import EncoderConfig, preset
from .pretrain import STRATEGIES
from .trainer import TrainConfig

PATH_KEYS = ("train", "dev", "test", "lexicon", "pretrain", "init_checkpoint")


class ConfigError(ValueError):
    pass


@dataclass
class Paths:
    train: Path | None = None
    dev: Path | None = None
    test: Path | None = None
    lexicon: Path | None = None
    pretrain: Path | None = None
    init_checkpoint: Path | None = None
    checkpoint_dir: Path = Path("checkpoints")


@dataclass
class PretrainConfig:
    strategy: str = "dynamic"
    mask_rate: float = 0.15
    train: TrainConfig = field(default_factory=lambda: TrainConfig(objective="mlm"))


@dataclass
class RunConfig:
    seed: int = 0
    entity_types: tuple[str, ...] = ("PER", "LOC", "ORG")
    paths: Paths = field(default_factory=Paths)
    encoder_preset: str = "toy"
    encoder_overrides: dict = field(default_factory=dict)
    min_freq: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)

    @property
    def tagset(self) -> TagSet:
        return TagSet(tuple(self.entity_types))

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        overrides = {**self.encoder_overrides, "vocab_size": vocab_size}
        overrides.setdefault("max_position", max(self.train.max_len, self.pretrain.train.max_len))
        return preset(self.encoder_preset, **overrides)

    def validate(self) -> "RunConfig":
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        if self.pretrain.strategy not in STRATEGIES:
            raise ConfigError(f"pretrain.strategy must be one of {STRATEGIES}")
        if self.pretrain.train.objective not in ("mlm", "mlm_nsp"):
            raise ConfigError("pretrain.objective must be 'mlm' or 'mlm_nsp'")
        if self.train.objective != "finetune_ner":
            raise ConfigError("train.objective must be 'finetune_ner'")
        if not 0 < self.pretrain.mask_rate < 1:
            raise ConfigError("pretrain.mask_rate must be in (0, 1)")
        for key in PATH_KEYS:
            p = getattr(self.paths, key)
            if p is not None and not Path(p).exists():
                raise ConfigError(f"paths.{key} does not exist: {p}")
        self.tagset  # raises on a bad type list
        return self


_TRAIN_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)}
_ENCODER_FIELDS = {f.name for f in dataclasses.fields(EncoderConfig)}


def _train_config(section: dict, base: TrainConfig, where: str) -> TrainConfig:
    unknown = set(section) - _TRAIN_FIELDS
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {sorted(unknown)}")
    try:
        return dataclasses.replace(base, **section)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{where}]: {e}") from None


def from_dict(data: dict, base_dir: Path = Path(".")) -> RunConfig:
    data = dict(data)
    cfg = RunConfig()
    cfg.seed = int(data.pop("seed", cfg.seed))
    cfg.min_freq = int(data.pop("min_freq", cfg.min_freq))

    tagset = data.pop("tagset", {})
    if "entity_types" in tagset:
        cfg.entity_types = tuple(tagset["entity_types"])

    paths = data.pop("paths", {})
    unknown = set(paths) - set(PATH_KEYS) - {"checkpoint_dir"}
    if unknown:
        raise ConfigError(f"unknown keys in [paths]: {sorted(unknown)}")
    for key, value in paths.items():
        setattr(cfg.paths, key, base_dir / value)

    enc = dict(data.pop("encoder", {}))
    cfg.encoder_preset = enc.pop("preset", cfg.encoder_preset)
    unknown = set(enc) - _ENCODER_FIELDS
    if unknown:
        raise ConfigError(f"unknown keys in [encoder]: {sorted(unknown)}")
    cfg.encoder_overrides = enc

    cfg.train = _train_config(data.pop("train", {}), cfg.train, "train")

    pre = dict(data.pop("pretrain", {}))
    cfg.pretrain.strategy = pre.pop("strategy", cfg.pretrain.strategy)
    cfg.pretrain.mask_rate = float(pre.pop("mask_rate", cfg.pretrain.mask_rate))
    cfg.pretrain.train = _train_config(pre, cfg.pretrain.train, "pretrain")

    if data:
        raise ConfigError(f"unknown top-level keys: {sorted(data)}")
    return cfg


def load(path) -> RunConfig:
    path = Path(path)
    with open(path, "rb") as f:
        try:
            data = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from None
    return from_dict(data, path.parent)
