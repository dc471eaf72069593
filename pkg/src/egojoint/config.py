"""Run configuration dataclasses, JSON round-trip and dotted-key overrides."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .dit import ModelConfig

STAGES = ("vae", "t2m_pretrain", "joint")


@dataclass
class OptimConfig:
    """Adam with linear warmup. Values are toy-scale choices, not reported ones."""

    lr: float = 2e-3
    warmup: int = 100
    steps: int = 2000
    batch_size: int = 8
    weight_decay: float = 0.0
    grad_clip: float = 1.0
    betas: tuple = (0.9, 0.999)


@dataclass
class VaeConfig:
    channels: tuple = (64, 96, 128)  # widths before, between and after the two 2x stages
    blocks_per_stage: int = 1
    latent_channels: int = 16  # C_m
    kl_weight: float = 1e-4
    groups: int = 8
    std_floor: float = 0.05

    def __post_init__(self):
        self.channels = tuple(self.channels)
        if len(self.channels) != 3:
            raise ValueError("two downsampling stages need three channel widths")
        if self.kl_weight <= 0:
            raise ValueError("kl_weight must be positive")


@dataclass
class ScheduleConfig:
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2


@dataclass
class SamplingConfig:
    steps: int = 50
    method: str = "ddim"
    w_t: float = 6.0
    w_v: float = 4.0
    w_m: float = 4.0


@dataclass
class ExperimentConfig:
    stage: str = "vae"
    seed: int = 0
    data: str = ""
    eval_data: str = ""
    representation: str = "head"  # "root" selects the w/o-MR variant
    asynchronous: bool = True  # False selects the w/o-AD variant
    text_dropout: float = 0.1
    eval_every: int = 0
    clamp_first_frame: bool = True
    model: ModelConfig = field(default_factory=ModelConfig)
    vae: VaeConfig = field(default_factory=VaeConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}")
        if self.representation not in ("head", "root"):
            raise ValueError("representation must be 'head' or 'root'")
        if self.seed is None:
            raise ValueError("seed is mandatory")
        if not 0.0 <= self.text_dropout < 1.0:
            raise ValueError("text_dropout must be in [0, 1)")

    def to_dict(self) -> dict:
        return _to_jsonable(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return _build(cls, d)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


def _to_jsonable(x):
    if isinstance(x, dict):
        return {k: _to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_to_jsonable(v) for v in x]
    return x


def _build(cls, d: dict):
    kwargs = {}
    fields = {f.name: f for f in dataclasses.fields(cls)}
    for k, v in d.items():
        if k not in fields:
            raise KeyError(f"unknown config key {cls.__name__}.{k}")
        sub = _SUBCONFIGS.get((cls, k))
        kwargs[k] = _build(sub, v) if sub is not None and isinstance(v, dict) else v
    return cls(**kwargs)


_SUBCONFIGS = {
    (ExperimentConfig, "model"): ModelConfig,
    (ExperimentConfig, "vae"): VaeConfig,
    (ExperimentConfig, "schedule"): ScheduleConfig,
    (ExperimentConfig, "optim"): OptimConfig,
    (ExperimentConfig, "sampling"): SamplingConfig,
}


def apply_overrides(cfg: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply 'a.b=value' strings; values are parsed as JSON when possible."""
    d = cfg.to_dict()
    for item in overrides:
        key, _, raw = item.partition("=")
        if not _:
            raise ValueError(f"override {item!r} must look like key=value")
        try:
            value: Any = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = d
        parts = key.split(".")
        for p in parts[:-1]:
            node = node[p]
        if parts[-1] not in node:
            raise KeyError(f"unknown config key {key}")
        node[parts[-1]] = value
    return ExperimentConfig.from_dict(d)
