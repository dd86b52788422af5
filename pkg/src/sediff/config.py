"""Run configuration: an INI file with typed, closed vocabularies per section.

Every field has a default; unknown sections or keys are rejected by name.
The effective (defaults-resolved) config is written next to every artifact so
a run can be reproduced from the artifact directory alone.

Defaults follow the reference training configuration (lr 2e-4, batch 16); the
shipped desk-scale configs override batch and step counts to fit a CPU budget.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class ScheduleSection:
    num_steps: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.035
    t0: int = 5
    r: float = 0.1
    mode: str = "improved"


@dataclass
class ModelSection:
    blocks: int = 8
    channels: int = 32
    encoding: str = "class"          # none | class | latent
    num_classes: int = 4
    latent_dim: int = 64
    temb_dim: int = 128
    init_seed: int = 1234


@dataclass
class DataSection:
    root: str = "corpus"
    train_count: int = 240
    val_count: int = 24
    test_count: int = 24
    duration_s: float = 0.7
    seed: int = 2024


@dataclass
class TrainSection:
    lr: float = 2e-4
    batch: int = 16
    pretrain_steps: int = 13000
    finetune_steps: int = 7000
    crop_frames: int = 4
    seed: int = 0


@dataclass
class EnhancerSection:
    channels: int = 32
    layers: int = 4
    lr: float = 1e-3
    steps: int = 1500
    batch: int = 8
    crop_frames: int = 24
    seed: int = 0


@dataclass
class ClassifierSection:
    hidden: int = 64
    lr: float = 1e-2
    epochs: int = 300
    seed: int = 0


@dataclass
class EvalSection:
    split: str = "test"
    seed: int = 0
    limit: int = 0                   # 0 = whole split


_SECTION_TYPES = {
    "schedule": ScheduleSection,
    "model": ModelSection,
    "data": DataSection,
    "train": TrainSection,
    "enhancer": EnhancerSection,
    "classifier": ClassifierSection,
    "eval": EvalSection,
}

_ALLOWED = {
    ("schedule", "mode"): ("none", "original", "improved"),
    ("model", "encoding"): ("none", "class", "latent"),
    ("eval", "split"): ("train", "val", "test"),
}


@dataclass
class RunConfig:
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    model: ModelSection = field(default_factory=ModelSection)
    data: DataSection = field(default_factory=DataSection)
    train: TrainSection = field(default_factory=TrainSection)
    enhancer: EnhancerSection = field(default_factory=EnhancerSection)
    classifier: ClassifierSection = field(default_factory=ClassifierSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def validate(self) -> None:
        from .schedule import ScheduleConfig, ScheduleError

        try:
            ScheduleConfig(
                num_steps=self.schedule.num_steps,
                beta_start=self.schedule.beta_start,
                beta_end=self.schedule.beta_end,
                t0=self.schedule.t0,
                r=self.schedule.r,
            ).validate()
        except ScheduleError as err:
            raise ConfigError(f"schedule: {err}") from err
        for key_pair, allowed in _ALLOWED.items():
            section, key = key_pair
            value = getattr(getattr(self, section), key)
            if value not in allowed:
                raise ConfigError(
                    f"{section}.{key}: {value!r} not in {allowed}"
                )
        if self.model.blocks < 1 or self.model.channels < 1:
            raise ConfigError("model: blocks and channels must be positive")
        if self.data.duration_s < 0.5:
            raise ConfigError("data.duration_s: must be >= 0.5")
        for name in ("train_count", "val_count", "test_count"):
            if getattr(self.data, name) < 1:
                raise ConfigError(f"data.{name}: must be >= 1")
        if self.train.lr <= 0 or self.enhancer.lr <= 0 or self.classifier.lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.train.batch < 1 or self.train.crop_frames < 1:
            raise ConfigError("train.batch and train.crop_frames must be >= 1")
        if self.eval.limit < 0:
            raise ConfigError("eval.limit: must be >= 0")

    def schedule_config(self):
        from .schedule import ScheduleConfig

        return ScheduleConfig(
            num_steps=self.schedule.num_steps,
            beta_start=self.schedule.beta_start,
            beta_end=self.schedule.beta_end,
            t0=self.schedule.t0,
            r=self.schedule.r,
        )

    def enc_dim(self) -> int:
        if self.model.encoding == "none":
            return 0
        if self.model.encoding == "class":
            return self.model.num_classes
        return self.model.latent_dim

    def save(self, path) -> None:
        parser = configparser.ConfigParser()
        for section_name, section_cls in _SECTION_TYPES.items():
            section = getattr(self, section_name)
            parser[section_name] = {
                f.name: repr(getattr(section, f.name)).strip("'")
                for f in fields(section_cls)
            }
        with open(path, "w") as fh:
            parser.write(fh)


def _coerce(section: str, key: str, raw: str, target_type: type):
    try:
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        return raw
    except ValueError as err:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} as {target_type.__name__}") from err


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read an INI file (optional) and apply ("section.key" -> value) overrides."""
    config = RunConfig()
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(str(path))
        if not read:
            raise ConfigError(f"cannot read config file {path}")
        for section_name in parser.sections():
            if section_name not in _SECTION_TYPES:
                raise ConfigError(f"unknown config section [{section_name}]")
            section = getattr(config, section_name)
            valid = {f.name: f.type for f in fields(_SECTION_TYPES[section_name])}
            for key, raw in parser[section_name].items():
                if key not in valid:
                    raise ConfigError(f"unknown key {section_name}.{key}")
                current = getattr(section, key)
                setattr(section, key, _coerce(section_name, key, raw, type(current)))
    for dotted, value in (overrides or {}).items():
        section_name, _, key = dotted.partition(".")
        if section_name not in _SECTION_TYPES:
            raise ConfigError(f"unknown config section [{section_name}]")
        section = getattr(config, section_name)
        if not hasattr(section, key):
            raise ConfigError(f"unknown key {dotted}")
        current = getattr(section, key)
        if isinstance(value, str):
            value = _coerce(section_name, key, value, type(current))
        setattr(section, key, value)
    config.validate()
    return config
