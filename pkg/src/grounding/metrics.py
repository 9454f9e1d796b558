"""IoU, Average Recall (area under recall-vs-IoU-threshold) and RES-style mIoU / p@k."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

AR_GRID_STEPS = 1001
RES_THRESHOLDS = (0.3, 0.4, 0.5)


@dataclass(frozen=True)
class EvalRecord:
    iou: float
    is_thing: bool = True
    is_plural: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.iou) and 0.0 <= self.iou <= 1.0):
            raise ValueError(f"iou must be finite and in [0, 1], got {self.iou}")


def iou(pred, gt) -> float:
    pred, gt = np.asarray(pred).astype(bool), np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def _ious(records: Sequence[EvalRecord] | Iterable[float]) -> np.ndarray:
    return np.array([r.iou if isinstance(r, EvalRecord) else float(r) for r in records], dtype=np.float64)


def recall_curve(records, grid_steps: int = AR_GRID_STEPS) -> tuple[np.ndarray, np.ndarray]:
    values = _ious(records)
    thresholds = np.linspace(0.0, 1.0, grid_steps)
    recall = (values[None, :] >= thresholds[:, None]).mean(axis=1)
    return thresholds, recall


def average_recall(records, grid_steps: int = AR_GRID_STEPS) -> float:
    """Trapezoidal area under recall(t) = P(iou >= t), t in [0, 1]."""
    if len(records) == 0:
        raise ValueError("average_recall of an empty record list is undefined")
    if grid_steps < 2:
        raise ValueError("grid_steps must be >= 2")
    t, recall = recall_curve(records, grid_steps)
    dt = t[1] - t[0]
    return float(dt * (recall.sum() - 0.5 * (recall[0] + recall[-1])))


def breakdown(records: Sequence[EvalRecord], grid_steps: int = AR_GRID_STEPS) -> dict[str, float]:
    """AR for all / thing / stuff / single / plural; empty subsets are omitted."""
    subsets = {
        "all": list(records),
        "thing": [r for r in records if r.is_thing],
        "stuff": [r for r in records if not r.is_thing],
        "single": [r for r in records if not r.is_plural],
        "plural": [r for r in records if r.is_plural],
    }
    return {k: average_recall(v, grid_steps) for k, v in subsets.items() if v}


def res_metrics(records, thresholds: Sequence[float] = RES_THRESHOLDS) -> dict[str, float]:
    values = _ious(records)
    if values.size == 0:
        raise ValueError("res_metrics of an empty record list is undefined")
    out = {"mIoU": float(values.mean())}
    for k in thresholds:
        out[f"p@{k}"] = float((values >= k).mean())
    return out


def report(records: Sequence[EvalRecord], excluded: int = 0) -> dict:
    """The evaluation JSON object; subsets absent from the data are reported as null."""
    ar = breakdown(records)
    out: dict = {k: ar.get(k) for k in ("all", "thing", "stuff", "single", "plural")}
    out.update(res_metrics(records))
    out["n_records"] = len(records)
    out["n_excluded_empty_gt"] = excluded
    return out
