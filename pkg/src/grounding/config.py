"""Run configuration as plain dataclasses, serialisable to and from JSON."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    # visual pyramid (stride 8 / 16 / 32 widths) and its stride-4 stem
    stem_channels: int = 16
    c1: int = 32
    c2: int = 32
    c3: int = 32
    channels: int = 64            # C, the shared attention width
    # text side
    vocab_size: int = 64
    text_width: int = 64
    # communicator
    layers: int = 3               # S
    heads: int = 8                # h
    ffn_hidden: int = 256
    ffn_residual: bool = False    # True wraps the FFN in residual + LayerNorm
    distance_cap: float = 2.0
    locality_bias: bool = True    # False: coefficients frozen at 1, i.e. plain MHA
    init_seed: int = 0

    def validate(self) -> None:
        if self.layers < 1:
            raise ConfigError("layers must be >= 1")
        if self.heads < 1 or self.channels % self.heads:
            raise ConfigError(f"channels ({self.channels}) must be divisible by heads ({self.heads})")
        for name in ("stem_channels", "c1", "c2", "c3", "channels", "text_width", "ffn_hidden", "vocab_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.distance_cap <= 0:
            raise ConfigError("distance_cap must be positive")

    @classmethod
    def full_size(cls) -> "ModelConfig":
        """Widths of the full-size model; never needed by tests."""
        return cls(c1=256, c2=256, c3=256, channels=256, text_width=768, layers=3, heads=8, ffn_hidden=2048)


@dataclass
class LossWeights:
    bce: float = 2.0
    dice: float = 2.0
    sal: float = 1.0
    tau: float = 0.1
    sal_normalize: bool = True

    def validate(self) -> None:
        for name in ("bce", "dice", "sal"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"loss weight {name} must be finite and >= 0, got {v}")
        if not (math.isfinite(self.tau) and self.tau > 0):
            raise ConfigError(f"tau must be positive, got {self.tau}")


@dataclass
class TrainConfig:
    seed: int = 0
    batch_size: int = 4
    steps: int = 2000
    lr: float = 1e-3
    # lr halves every `halve_every` schedule-epochs and is pinned to `floor_lr`
    # from `floor_after` on; a schedule-epoch is `epoch_scale` passes over the data.
    halve_every: float = 5.0
    floor_after: float = 10.0
    floor_lr: float = 1e-4
    epoch_scale: float = 20.0     # schedule-epoch = epoch_scale dataset passes
    clip_norm: float = 5.0
    threshold: float = 0.5
    log_every: int = 50
    stop_at_ar: float | None = None   # early stop once training AR reaches this
    eval_every: int = 100
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.floor_lr > self.lr:
            raise ConfigError("floor_lr must not exceed lr")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")
        if not 0 < self.threshold < 1:
            raise ConfigError("threshold must lie in (0, 1)")
        self.model.validate()
        self.loss.validate()

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "TrainConfig":
        raw = dict(raw)
        try:
            model = ModelConfig(**raw.pop("model", {}))
            loss = LossWeights(**raw.pop("loss", {}))
            cfg = cls(model=model, loss=loss, **raw)
        except TypeError as exc:
            raise ConfigError(f"unknown or malformed config field: {exc}") from None
        return cfg

    @classmethod
    def load(cls, path) -> "TrainConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        return cls.from_dict(raw)
