"""Run configuration: nested dataclasses stored as versioned YAML."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import SyntheticDataset
from .grid import ConfigError
from .model import ModelConfig, preset

CONFIG_VERSION = 1


@dataclass
class ModelSpec:
    """A preset name plus field overrides."""

    preset: str = "tiny"
    overrides: dict = field(default_factory=dict)


@dataclass
class AblationConfig:
    giim_enabled: bool | None = None
    tcm_enabled: bool | None = None
    swsa_enabled: bool | None = None
    proxy_strategy: str | None = None
    injection: str | None = None
    ratio: list[int] | None = None


@dataclass
class ScheduleConfig:
    kind: str = "cosine"
    T: int = 1000


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 32
    lr: float = 1e-4
    lr_schedule: str = "constant"  # or "cosine" (decays to zero at ``steps``)
    warmup_steps: int = 0  # linear ramp before the schedule proper
    grad_clip: float = 0.0  # max global grad norm; 0 disables
    weight_decay: float = 0.0
    ema_decay: float = 0.999
    cond_dropout: float = 0.1
    seed: int = 0
    dtype: str = "float32"
    checkpoint_every: int = 500
    log_every: int = 1


@dataclass
class SamplerSection:
    steps: int = 50
    guidance_scale: float = 6.0
    seed: int = 0


@dataclass
class DataConfig:
    generator: str = "gaussian-blobs"
    size: int = 8
    num_classes: int = 10
    seed: int = 0
    noise: float = 0.1


@dataclass
class RunConfig:
    version: int = CONFIG_VERSION
    model: ModelSpec = field(default_factory=ModelSpec)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    data: DataConfig = field(default_factory=DataConfig)
    output_dir: str = "runs/default"

    def model_config(self) -> ModelConfig:
        over = dict(self.model.overrides)
        over.update({k: v for k, v in dataclasses.asdict(self.ablation).items() if v is not None})
        return preset(self.model.preset, **over)

    def dataset(self) -> SyntheticDataset:
        cfg = self.model_config()
        d = self.data
        return SyntheticDataset(d.generator, d.size, d.num_classes, d.seed, cfg.in_channels, cfg.frames, d.noise)

    def validate(self) -> None:
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version}; expected {CONFIG_VERSION}")
        cfg = self.model_config()
        if self.schedule.kind != "cosine":
            raise ConfigError(f"unknown noise schedule {self.schedule.kind!r}")
        t = self.train
        if t.steps < 0 or t.batch_size < 1 or t.lr <= 0 or t.checkpoint_every < 1 or t.log_every < 1:
            raise ConfigError("train: steps >= 0, batch_size >= 1, lr > 0, checkpoint_every >= 1, log_every >= 1")
        if t.warmup_steps < 0 or t.grad_clip < 0:
            raise ConfigError("train: warmup_steps and grad_clip must be >= 0")
        if t.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"unknown lr_schedule {t.lr_schedule!r}")
        if t.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {t.dtype!r}")
        if not 0.0 <= t.ema_decay <= 1.0 or not 0.0 <= t.cond_dropout < 1.0:
            raise ConfigError("ema_decay must be in [0, 1] and cond_dropout in [0, 1)")
        if self.data.size != cfg.input_size:
            raise ConfigError(f"data.size {self.data.size} differs from model input_size {cfg.input_size}")
        if cfg.conditioning == "class" and self.dataset().num_classes > cfg.num_classes:
            raise ConfigError(f"dataset has more classes than the model ({self.data.num_classes} > {cfg.num_classes})")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        if not isinstance(d, dict):
            raise ConfigError("config root must be a mapping")
        sections = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(d) - set(sections)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kwargs = {}
        for name, value in d.items():
            typ = _SECTION_TYPES.get(name)
            if typ is None:
                kwargs[name] = value
                continue
            if value is None:
                value = {}
            if name == "model" and isinstance(value, str):
                value = {"preset": value}
            if not isinstance(value, dict):
                raise ConfigError(f"section {name!r} must be a mapping")
            known = {f.name for f in dataclasses.fields(typ)}
            bad = set(value) - known
            if bad:
                raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
            kwargs[name] = typ(**value)
        return cls(**kwargs)


_SECTION_TYPES = {
    "model": ModelSpec,
    "ablation": AblationConfig,
    "schedule": ScheduleConfig,
    "train": TrainConfig,
    "sampler": SamplerSection,
    "data": DataConfig,
}


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def parse_config(text: str) -> RunConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    cfg = RunConfig.from_dict(raw or {})
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(dump_config(cfg))


def memorization_config(output_dir: str = "runs/memorize") -> RunConfig:
    """Settings that drive the tiny model to memorize one image in 5k steps."""
    return RunConfig(
        train=TrainConfig(
            steps=5000,
            batch_size=32,
            lr=4e-3,
            lr_schedule="cosine",
            warmup_steps=200,
            grad_clip=1.0,
            cond_dropout=0.1,
            checkpoint_every=5000,
        ),
        data=DataConfig(generator="single-image-memorization", size=8, num_classes=1, noise=0.0),
        output_dir=output_dir,
    )
