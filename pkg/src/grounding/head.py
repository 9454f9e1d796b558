"""Dense mask prediction: each phrase feature is a 1x1 kernel over the up-sampled fused grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import GridFeatureMap, PhraseSet
from .numeric import Tensor, ops

FEATURE_UPSAMPLE = 4   # stride 16 -> stride 4
MASK_UPSAMPLE = 4      # stride 4 -> image resolution


@dataclass
class MaskSet:
    probabilities: np.ndarray   # (L, H, W) in (0, 1)
    binaries: np.ndarray        # (L, H, W) uint8
    threshold: float

    def __len__(self) -> int:
        return self.probabilities.shape[0]


@dataclass
class HeadOutput:
    probabilities: Tensor       # (L, H, W), differentiable
    pixel_features: Tensor      # (P, C) on the stride-4 grid, row-major
    grid_shape: tuple[int, int]


def mask_probabilities(fused: GridFeatureMap, phrases: PhraseSet) -> HeadOutput:
    """Differentiable part of the head: up-sample, per-phrase dot product, sigmoid, up-sample."""
    feats = fused.features
    if phrases.features.shape[-1] != feats.shape[-1]:
        raise ValueError(f"phrase width {phrases.features.shape[-1]} != visual width {feats.shape[-1]}")
    fine = ops.upsample_bilinear(feats, FEATURE_UPSAMPLE)
    h4, w4, c = fine.shape
    pixels = ops.reshape(fine, (h4 * w4, c))
    logits = ops.matmul(pixels, ops.transpose(phrases.features, (1, 0)))       # (P, L)
    small = ops.reshape(ops.sigmoid(logits), (h4, w4, len(phrases)))
    full = ops.upsample_bilinear(small, MASK_UPSAMPLE)                         # (H, W, L)
    return HeadOutput(ops.transpose(full, (2, 0, 1)), pixels, (h4, w4))


def binarize(probabilities: np.ndarray, threshold: float) -> np.ndarray:
    return (probabilities >= threshold).astype(np.uint8)


def predict_masks(fused: GridFeatureMap, phrases: PhraseSet, threshold: float = 0.5) -> MaskSet:
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    probs = mask_probabilities(fused, phrases).probabilities.data
    return MaskSet(probs, binarize(probs, threshold), threshold)
