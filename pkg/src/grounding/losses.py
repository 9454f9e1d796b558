"""Segmentation losses and the bidirectional phrase/pixel alignment loss."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .config import LossWeights
from .numeric import Tensor, as_tensor, ops

LOG_CLAMP = 1e-12
DICE_EPS = 1e-6


def _check_shapes(probabilities: Tensor, ground_truth: np.ndarray) -> None:
    if probabilities.shape != np.shape(ground_truth):
        raise ValueError(f"shape mismatch: probabilities {probabilities.shape} vs ground truth {np.shape(ground_truth)}")


def bce_loss(probabilities, ground_truth) -> Tensor:
    """Mean binary cross-entropy over every (phrase, pixel) pair; logs clamped at 1e-12."""
    probabilities = as_tensor(probabilities)
    y = np.asarray(ground_truth, dtype=np.float64)
    _check_shapes(probabilities, y)
    log_p = ops.log(ops.clip(probabilities, LOG_CLAMP, 1.0))
    log_q = ops.log(ops.clip(1.0 - probabilities, LOG_CLAMP, 1.0))
    return -ops.mean(log_p * y + log_q * (1.0 - y))


def dice_loss(probabilities, ground_truth) -> Tensor:
    """Soft Dice, 1 - (2|M.G| + eps) / (|M| + |G| + eps), averaged over phrases (axis 0)."""
    probabilities = as_tensor(probabilities)
    g = np.asarray(ground_truth, dtype=np.float64)
    _check_shapes(probabilities, g)
    n = probabilities.shape[0]
    m = ops.reshape(probabilities, (n, -1))
    g = g.reshape(n, -1)
    inter = ops.sum(m * g, axis=1)
    denom = ops.sum(m, axis=1) + (g.sum(axis=1) + DICE_EPS)
    return 1.0 - ops.mean((inter * 2.0 + DICE_EPS) / denom)


def downsample_nearest(masks: np.ndarray, factor: int) -> np.ndarray:
    """Pick the sample nearest each coarse cell centre: index factor*i + factor//2."""
    off = factor // 2
    return np.asarray(masks)[..., off::factor, off::factor]


@dataclass
class SALOutput:
    loss: Tensor
    phrase_anchor: float     # l_v
    pixel_anchor: float      # l_t
    empty: bool              # no positive pair anywhere; loss is 0


def sal_loss(pixel_features, phrase_features, ground_truth, tau: float = 0.1,
             normalize: bool = True) -> SALOutput:
    """Two contrastive terms over the similarity matrix s[i, j] (phrase i, pixel j).

    Phrase anchors: softmax over all pixels, averaged over each phrase's positive
    pixels, then over phrases that have any. Pixel anchors: softmax over all
    phrases, averaged over the phrases covering the pixel, then over covered pixels.
    ``ground_truth`` is (L, P) on the same pixel grid as ``pixel_features`` (P, C).
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    pixels, phrases = as_tensor(pixel_features), as_tensor(phrase_features)
    g = np.asarray(ground_truth, dtype=np.float64).reshape(phrases.shape[0], -1)
    if g.shape[1] != pixels.shape[0]:
        raise ValueError(f"ground truth covers {g.shape[1]} pixels, features have {pixels.shape[0]}")
    if normalize:
        pixels, phrases = ops.l2_normalize(pixels), ops.l2_normalize(phrases)
    sim = ops.scale(ops.matmul(phrases, ops.transpose(pixels, (1, 0))), 1.0 / tau)   # (L, P)

    def anchored(logits: Tensor, positives: np.ndarray) -> Tensor | None:
        counts = positives.sum(axis=1)
        rows = counts > 0
        if not rows.any():
            return None
        weights = np.zeros_like(positives)
        weights[rows] = positives[rows] / counts[rows, None] / rows.sum()
        return -ops.sum(ops.log_softmax_rows(logits) * weights)

    l_v = anchored(sim, g)
    l_t = anchored(ops.transpose(sim, (1, 0)), g.T)
    if l_v is None and l_t is None:
        warnings.warn("sal_loss: no positive (phrase, pixel) pairs; returning 0", RuntimeWarning)
        return SALOutput(Tensor(0.0), 0.0, 0.0, True)
    terms = [t for t in (l_v, l_t) if t is not None]
    loss = terms[0] if len(terms) == 1 else terms[0] + terms[1]
    return SALOutput(loss, 0.0 if l_v is None else l_v.item(), 0.0 if l_t is None else l_t.item(), False)


@dataclass
class LossBreakdown:
    total: Tensor
    bce: float
    dice: float
    sal: float

    def as_dict(self) -> dict[str, float]:
        return {"total": self.total.item(), "bce": self.bce, "dice": self.dice, "sal": self.sal}


def total_loss(probabilities, ground_truth, pixel_features, phrase_features,
               weights: LossWeights, feature_downsample: int = 4) -> LossBreakdown:
    """weights.bce * BCE + weights.dice * Dice + weights.sal * SAL; zero-weighted terms are left out of the sum."""
    weights.validate()
    gt = np.asarray(ground_truth, dtype=np.float64)
    bce = bce_loss(probabilities, gt)
    dice = dice_loss(probabilities, gt)
    gt_small = downsample_nearest(gt, feature_downsample)
    sal = sal_loss(pixel_features, phrase_features, gt_small.reshape(gt.shape[0], -1),
                   weights.tau, weights.sal_normalize)
    total = Tensor(0.0)
    parts = [(weights.bce, bce), (weights.dice, dice), (weights.sal, sal.loss)]
    first = True
    for w, term in parts:
        if w == 0:
            continue
        total = term * w if first else total + term * w
        first = False
    return LossBreakdown(total, bce.item(), dice.item(), sal.loss.item())
