"""Toy visual pyramid and token-embedding text encoder."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import ModelConfig
from .module import Module, glorot, he_normal
from .numeric import Tensor, as_tensor, ops


@dataclass
class GridFeatureMap:
    features: Tensor        # (..., h, w, C)
    stride: int

    @property
    def height(self) -> int:
        return self.features.shape[-3]

    @property
    def width(self) -> int:
        return self.features.shape[-2]

    @property
    def channels(self) -> int:
        return self.features.shape[-1]


@dataclass
class PhraseSet:
    features: Tensor                      # (L, C)
    spans: list[tuple[int, int]]
    is_thing: list[bool] | None = None
    is_plural: list[bool] | None = None

    def __len__(self) -> int:
        return self.features.shape[0]


class VisualEncoder(Module):
    """Stride-2 conv stages to strides 8/16/32, fused at stride 16.

    ``concat[avgpool(F8), F16, up2(F32)]`` followed by a 1x1 projection to C.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, prefix: str = "visual"):
        super().__init__(prefix)
        widths = [("stem0", 3, cfg.stem_channels), ("stem1", cfg.stem_channels, cfg.stem_channels),
                  ("stage1", cfg.stem_channels, cfg.c1), ("stage2", cfg.c1, cfg.c2), ("stage3", cfg.c2, cfg.c3)]
        self.convs = []
        for name, cin, cout in widths:
            w = self.param(f"{name}.weight", he_normal(rng, 9 * cin, (3, 3, cin, cout)))
            b = self.param(f"{name}.bias", np.zeros(cout))
            self.convs.append((w, b))
        fused = cfg.c1 + cfg.c2 + cfg.c3
        self.fuse_weight = self.param("fuse.weight", glorot(rng, fused, cfg.channels, (fused, cfg.channels)))
        self.fuse_bias = self.param("fuse.bias", np.zeros(cfg.channels))
        self.channels = cfg.channels

    def pyramid(self, images: Tensor) -> list[GridFeatureMap]:
        h, w = images.shape[-3], images.shape[-2]
        if h % 32 or w % 32:
            raise ValueError(f"image extents must be multiples of 32, got {h}x{w}")
        x = images
        levels = []
        for i, (weight, bias) in enumerate(self.convs):
            x = ops.relu(ops.conv2d(x, weight, bias, stride=2))
            if i >= 2:
                levels.append(GridFeatureMap(x, stride=2 ** (i + 1)))
        return levels

    def __call__(self, images) -> GridFeatureMap:
        images = as_tensor(images)
        f8, f16, f32 = self.pyramid(images)
        cat = ops.concat([ops.avg_pool2x(f8.features), f16.features,
                          ops.upsample_nearest2x(f32.features)], axis=-1)
        fused = ops.matmul(cat, self.fuse_weight) + self.fuse_bias
        return GridFeatureMap(fused, stride=16)


class TextEncoder(Module):
    """Token embeddings, mean-pooled per phrase span, then a linear projection to C."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, prefix: str = "text"):
        super().__init__(prefix)
        self.embedding = self.param("embedding", rng.normal(0.0, 1.0, (cfg.vocab_size, cfg.text_width)))
        self.proj_weight = self.param("proj.weight", glorot(rng, cfg.text_width, cfg.channels,
                                                            (cfg.text_width, cfg.channels)))
        self.proj_bias = self.param("proj.bias", np.zeros(cfg.channels))

    def __call__(self, token_ids: Sequence[int], spans: Sequence[tuple[int, int]]) -> PhraseSet:
        token_ids = np.asarray(token_ids, dtype=np.intp)
        n_tokens = len(token_ids)
        if not spans:
            raise ValueError("at least one phrase span is required")
        pool = np.zeros((len(spans), n_tokens))
        for i, (start, end) in enumerate(spans):
            if not 0 <= start < end <= n_tokens:
                raise ValueError(f"span {i} ({start}, {end}) is empty or outside 0..{n_tokens}")
            pool[i, start:end] = 1.0 / (end - start)
        if token_ids.size and (token_ids.min() < 0 or token_ids.max() >= self.embedding.shape[0]):
            raise ValueError("token id outside the vocabulary")
        words = ops.take(self.embedding, token_ids, axis=0)
        pooled = ops.matmul(Tensor(pool), words)
        return PhraseSet(ops.matmul(pooled, self.proj_weight) + self.proj_bias, [tuple(s) for s in spans])
