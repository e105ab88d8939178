"""Experiment configuration: TOML sections with flat dotted-key overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

import tomli
import tomli_w

from ..diffusion import PreconditioningSpec, ScheduleSpec
from ..distill import GANConfig
from ..metrics import FeatureMap
from ..models import DiscriminatorSpec, ScoreNetSpec


class ConfigError(ValueError):
    pass


@dataclass
class ModelSection:
    kind: str = "mlp2d"
    width: int = 0  # 0 picks the kind's default (64 for mlp2d, 32 for unet1d)
    depth: int = 3
    time_embed_dim: int = 32
    num_classes: int = 0
    seed: int = 0
    dtype: str = "f32"


@dataclass
class ScheduleSection:
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    rho: float = 7.0
    N: int = 18
    sigma_data: float = 0.5
    epsilon: float = 0.002
    solver: str = "heun"
    sample_steps: int = 32


@dataclass
class GanSection:
    gamma_r1: float = 1e-4
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    adam_beta1: float = 0.0
    adam_beta2: float = 0.99
    batch: int = 256
    total_images: int = 512_000
    ema_halflife_images: int = 20_000
    ema_warmup_ratio: float = 0.05
    disc_kind: str = "projected"
    disc_num_scales: int = 3
    disc_feature_dim: int = 64
    disc_feature_seed: int = 1234
    disc_head_width: int = 64


@dataclass
class DistillSection:
    method: str = "gdd"
    freeze: str = "none"
    cd_weight: float = 0.0
    teacher_steps: list = field(default_factory=lambda: [2, 4, 8])
    sweep_sigmas: list = field(default_factory=lambda: [0.5, 2.0, 8.0, 32.0])
    instance_N: int = 18


@dataclass
class MetricsSection:
    feature: str = "frozen_random"
    feature_seed: int = 0
    out_dim: int = 16
    n: int = 20_000
    heldout_n: int = 20_000
    mode_radius: float = 0.25


@dataclass
class RunSection:
    seed: int = 0
    dataset: str = "ring8"
    data_n: int = 20_000
    train_steps: int = 3000
    train_lr: float = 2e-3
    train_batch: int = 256
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    deterministic: bool = True
    wall_clock: bool = True
    profile_N: int = 64
    profile_batch: int = 16


SECTIONS = {
    "model": ModelSection,
    "schedule": ScheduleSection,
    "gan": GanSection,
    "distill": DistillSection,
    "metrics": MetricsSection,
    "run": RunSection,
}


@dataclass
class ExperimentConfig:
    model: ModelSection = field(default_factory=ModelSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    gan: GanSection = field(default_factory=GanSection)
    distill: DistillSection = field(default_factory=DistillSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    run: RunSection = field(default_factory=RunSection)

    # -------------------------------------------------------- io

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        cfg = cls()
        for sec, body in doc.items():
            if sec not in SECTIONS:
                raise ConfigError(f"unknown config section [{sec}]")
            if not isinstance(body, dict):
                raise ConfigError(f"[{sec}] must be a table")
            for key, val in body.items():
                cfg.set(f"{sec}.{key}", val)
        return cfg

    @classmethod
    def from_toml(cls, text: str) -> "ExperimentConfig":
        try:
            doc = tomli.loads(text)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML: {exc}") from exc
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_toml(fh.read())

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    # -------------------------------------------------------- dotted keys

    def get(self, key: str):
        sec, name = _split(key)
        return getattr(getattr(self, sec), name)

    def set(self, key: str, value) -> None:
        sec, name = _split(key)
        section = getattr(self, sec)
        kinds = {f.name: f for f in fields(section)}
        if name not in kinds:
            raise ConfigError(f"unknown config key {key!r}")
        current = getattr(section, name)
        setattr(section, name, _coerce(key, value, current))

    def apply_overrides(self, pairs) -> None:
        for item in pairs or ():
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            key, val = item.split("=", 1)
            self.set(key.strip(), val.strip())

    # -------------------------------------------------------- typed views

    def score_spec(self) -> ScoreNetSpec:
        return ScoreNetSpec(**dataclasses.asdict(self.model))

    def schedule_spec(self, N: int | None = None) -> ScheduleSpec:
        s = self.schedule
        return ScheduleSpec(s.sigma_min, s.sigma_max, s.rho, N or s.N)

    def precond_spec(self) -> PreconditioningSpec:
        return PreconditioningSpec(self.schedule.sigma_data, self.schedule.epsilon)

    def gan_config(self) -> GANConfig:
        g = self.gan
        return GANConfig(
            g.gamma_r1, g.lr_g, g.lr_d, g.adam_beta1, g.adam_beta2, g.batch, g.total_images,
            g.ema_halflife_images, g.ema_warmup_ratio,
        )

    def disc_spec(self) -> DiscriminatorSpec:
        g = self.gan
        return DiscriminatorSpec(
            kind=g.disc_kind,
            num_scales=g.disc_num_scales,
            feature_dim=g.disc_feature_dim,
            feature_seed=g.disc_feature_seed,
            head_width=g.disc_head_width,
            seed=self.run.seed,
            dtype=self.model.dtype,
        )

    def feature_map(self) -> FeatureMap:
        m = self.metrics
        return FeatureMap(m.feature, m.feature_seed, m.out_dim)


def _split(key: str) -> tuple[str, str]:
    parts = key.split(".")
    if len(parts) != 2 or parts[0] not in SECTIONS:
        raise ConfigError(f"unknown config key {key!r}")
    return parts[0], parts[1]


def _coerce(key: str, value, current):
    try:
        if isinstance(current, bool):
            if isinstance(value, str):
                low = value.lower()
                if low not in ("true", "false", "1", "0"):
                    raise ValueError(value)
                return low in ("true", "1")
            if not isinstance(value, bool):
                raise ValueError(value)
            return value
        if isinstance(current, int):
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            if isinstance(value, str) and any(c in value for c in ".eE"):
                value = float(value)
                if not value.is_integer():
                    raise ValueError(value)
            return int(value)
        if isinstance(current, float):
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        if isinstance(current, list):
            items = value.split(",") if isinstance(value, str) else list(value)
            elem = type(current[0]) if current else float
            return [elem(float(v)) if elem is int else elem(v) for v in items]
        if isinstance(current, str):
            if not isinstance(value, str):
                raise ValueError(value)
            return value
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value {value!r} for {key}") from exc
    raise ConfigError(f"unsupported type for {key}")
