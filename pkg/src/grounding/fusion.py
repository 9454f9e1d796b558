"""Multi-modal communicator: S layers of (locality attention, cross-modal attention + FFN)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ConfigError, ModelConfig
from .encoders import GridFeatureMap, PhraseSet
from .lpa import LPALayer, attention
from .module import Module, glorot
from .numeric import Tensor, ops


@dataclass(frozen=True)
class CommunicatorConfig:
    layers: int = 3
    heads: int = 8
    channels: int = 64
    ffn_hidden: int = 256

    def validate(self) -> None:
        if self.layers < 1:
            raise ConfigError("layers must be >= 1")
        if self.heads < 1 or self.channels % self.heads:
            raise ConfigError(f"channels ({self.channels}) must be divisible by heads ({self.heads})")

    @classmethod
    def from_model(cls, cfg: ModelConfig) -> "CommunicatorConfig":
        return cls(cfg.layers, cfg.heads, cfg.channels, cfg.ffn_hidden)


class CrossAttentionBlock(Module):
    """FFN(LN(MHA(F, F_N, F_N) + F)); with ``ffn_residual`` a second residual + LN wraps the FFN."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, prefix: str):
        super().__init__(prefix)
        c, hidden = cfg.channels, cfg.ffn_hidden
        self.heads = cfg.heads
        self.w_q = self.param("w_q", glorot(rng, c, c, (c, c)))
        self.w_k = self.param("w_k", glorot(rng, c, c, (c, c)))
        self.w_v = self.param("w_v", glorot(rng, c, c, (c, c)))
        self.w_o = self.param("w_o", glorot(rng, c, c, (c, c)))
        self.ln_gamma = self.param("ln.gamma", np.ones(c))
        self.ln_beta = self.param("ln.beta", np.zeros(c))
        self.ffn_w1 = self.param("ffn.w1", glorot(rng, c, hidden, (c, hidden)))
        self.ffn_b1 = self.param("ffn.b1", np.zeros(hidden))
        self.ffn_w2 = self.param("ffn.w2", glorot(rng, hidden, c, (hidden, c)))
        self.ffn_b2 = self.param("ffn.b2", np.zeros(c))
        self.ffn_residual = cfg.ffn_residual
        if self.ffn_residual:
            self.ln2_gamma = self.param("ln2.gamma", np.ones(c))
            self.ln2_beta = self.param("ln2.beta", np.zeros(c))

    def __call__(self, grid: Tensor, phrases: Tensor, sink: list | None = None) -> Tensor:
        height, width, c = grid.shape
        if phrases.shape[-1] != c:
            raise ValueError(f"phrase width {phrases.shape[-1]} != visual width {c}")
        tokens = ops.reshape(grid, (height * width, c))
        attended = attention(tokens, phrases, self.w_q, self.w_k, self.w_v, self.w_o, self.heads, sink=sink)
        x = ops.layer_norm(attended + tokens, self.ln_gamma, self.ln_beta)
        hidden = ops.relu(ops.matmul(x, self.ffn_w1) + self.ffn_b1)
        out = ops.matmul(hidden, self.ffn_w2) + self.ffn_b2
        if self.ffn_residual:
            out = ops.layer_norm(out + x, self.ln2_gamma, self.ln2_beta)
        return ops.reshape(out, (height, width, c))


class Communicator(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, prefix: str = "communicator"):
        super().__init__(prefix)
        CommunicatorConfig.from_model(cfg).validate()
        self.lpa = [LPALayer(cfg, rng, f"{prefix}.layer{i}.lpa") for i in range(cfg.layers)]
        self.cross = [CrossAttentionBlock(cfg, rng, f"{prefix}.layer{i}.cross") for i in range(cfg.layers)]

    def __call__(self, visual: GridFeatureMap, phrases: PhraseSet,
                 lpa_sink: list | None = None, cross_sink: list | None = None) -> GridFeatureMap:
        x = visual.features
        for lpa, cross in zip(self.lpa, self.cross):
            x = lpa(x, sink=lpa_sink)
            x = cross(x, phrases.features, sink=cross_sink)
        return GridFeatureMap(x, stride=visual.stride)
