"""The full grounding network: encoders -> communicator -> dense head."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import ModelConfig
from .dataio import TOKEN_ID, GroundingSample
from .encoders import GridFeatureMap, PhraseSet, TextEncoder, VisualEncoder
from .fusion import Communicator
from .head import HeadOutput, MaskSet, binarize, mask_probabilities
from .module import Module
from .numeric import Tensor, load_checkpoint, ops, save_checkpoint


class CheckpointMismatch(ValueError):
    def __init__(self, missing, unexpected, reshaped):
        self.missing, self.unexpected, self.reshaped = list(missing), list(unexpected), list(reshaped)
        lines = ["checkpoint does not match the model architecture:"]
        lines += [f"  missing:    {n}" for n in self.missing]
        lines += [f"  unexpected: {n}" for n in self.unexpected]
        lines += [f"  shape:      {n} {a} (checkpoint) vs {b} (model)" for n, a, b in self.reshaped]
        super().__init__("\n".join(lines))


@dataclass
class Attention:
    lpa: list[np.ndarray]      # per layer: (heads, N, N)
    cross: list[np.ndarray]    # per layer: (heads, N, L)


def token_ids(tokens: Sequence[str]) -> list[int]:
    return [TOKEN_ID.get(t, 0) for t in tokens]


class GroundingModel(Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__("")
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.init_seed)
        self.visual = VisualEncoder(cfg, rng)
        self.text = TextEncoder(cfg, rng)
        self.communicator = Communicator(cfg, rng)

    # -- forward ------------------------------------------------------------

    def encode_images(self, images: np.ndarray) -> GridFeatureMap:
        return self.visual(Tensor(images))

    def encode_text(self, tokens: Sequence[str], spans) -> PhraseSet:
        return self.text(token_ids(tokens), spans)

    def forward_one(self, visual: GridFeatureMap, tokens: Sequence[str], spans,
                    attention: Attention | None = None) -> tuple[HeadOutput, PhraseSet]:
        phrases = self.encode_text(tokens, spans)
        fused = self.communicator(visual, phrases,
                                  lpa_sink=None if attention is None else attention.lpa,
                                  cross_sink=None if attention is None else attention.cross)
        return mask_probabilities(fused, phrases), phrases

    def forward(self, samples: Sequence[GroundingSample]) -> list[tuple[HeadOutput, PhraseSet]]:
        visual = self.encode_images(np.stack([s.image for s in samples]))
        outs = []
        for i, s in enumerate(samples):
            grid = GridFeatureMap(visual.features[i], visual.stride)
            outs.append(self.forward_one(grid, s.tokens, s.spans))
        return outs

    def predict(self, image: np.ndarray, tokens: Sequence[str], spans, threshold: float = 0.5,
                attention: Attention | None = None) -> MaskSet:
        if not 0 < threshold < 1:
            raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
        head, _ = self.forward_one(self.encode_images(image), tokens, spans, attention)
        probs = head.probabilities.data
        return MaskSet(probs, binarize(probs, threshold), threshold)

    # -- state --------------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        reshaped = sorted((n, tuple(state[n].shape), own[n].shape) for n in set(own) & set(state)
                          if tuple(state[n].shape) != own[n].shape)
        if missing or unexpected or reshaped:
            raise CheckpointMismatch(missing, unexpected, reshaped)
        for name, p in own.items():
            p.assign(state[name])

    def save(self, path) -> None:
        save_checkpoint(self.state_dict(), path)

    def load(self, path) -> None:
        self.load_state_dict(load_checkpoint(path))
