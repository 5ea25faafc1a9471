"""JSON run configuration: a ``synth`` section and a ``train`` section.

Both sections are optional and map one-to-one onto :class:`SynthConfig` and
:class:`TrainConfig` (with nested ``encoder`` and ``loss`` objects).  Unknown
keys are errors so that a typo never silently falls back to a default::

    {"synth": {"noise_std": 0.8, "seed": 1},
     "train": {"epochs": 30, "loss": {"beta2": 0}, "encoder": {"layers": 1}}}
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .asl import LossConfig
from .datagen import SynthConfig
from .encoder import EncoderConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        return {"synth": dataclasses.asdict(self.synth), "train": dataclasses.asdict(self.train)}

    def validate(self) -> None:
        self.synth.validate()
        self.train.validate()
        self.train.encoder.validate(self.synth.frame_height, self.synth.frame_width)


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    return cls(**data)


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = sorted(set(data) - {"synth", "train"})
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}")
    synth = _build(SynthConfig, data.get("synth", {}), "synth")
    train = dict(data.get("train", {}))
    if not isinstance(train, dict):
        raise ConfigError("train: expected an object")
    encoder = _build(EncoderConfig, train.pop("encoder", {}), "train.encoder")
    loss = _build(LossConfig, train.pop("loss", {}), "train.loss")
    cfg = RunConfig(synth, _build(TrainConfig, {**train, "encoder": encoder, "loss": loss}, "train"))
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return config_from_dict(data)
