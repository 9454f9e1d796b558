"""Adam training loop, learning-rate schedule, evaluation and the loss-trace file."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .config import TrainConfig
from .dataio import GroundingSample
from .head import binarize
from .losses import total_loss
from .metrics import EvalRecord, iou, report
from .model import GroundingModel
from .numeric import Parameter, no_grad

log = logging.getLogger(__name__)

TRACE_FIELDS = ("step", "total", "bce", "dice", "sal", "lr")


class NumericFailure(RuntimeError):
    """Training produced a non-finite loss."""


class Adam:
    def __init__(self, params: Sequence[Parameter], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {p.name: np.zeros(p.shape) for p in self.params}
        self.v = {p.name: np.zeros(p.shape) for p in self.params}
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p in self.params:
            if p.grad is None:
                continue
            m = self.m[p.name] = self.beta1 * self.m[p.name] + (1 - self.beta1) * p.grad
            v = self.v[p.name] = self.beta2 * self.v[p.name] + (1 - self.beta2) * p.grad ** 2
            p.assign(p.data - lr * (m / c1) / (np.sqrt(v / c2) + self.eps))


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * factor
    return norm


def learning_rate(step: int, steps_per_epoch: float, cfg: TrainConfig) -> float:
    """Halve every ``halve_every`` schedule-epochs, then hold ``floor_lr`` from ``floor_after`` on."""
    epoch = (step - 1) / (steps_per_epoch * cfg.epoch_scale)
    if epoch >= cfg.floor_after:
        return cfg.floor_lr
    return max(cfg.lr * 0.5 ** math.floor(epoch / cfg.halve_every), cfg.floor_lr)


@dataclass
class TrainResult:
    model: GroundingModel
    trace: list[dict] = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.trace)


def build_model(cfg: TrainConfig) -> GroundingModel:
    return GroundingModel(dataclasses.replace(cfg.model, init_seed=cfg.seed))


def train(dataset: Sequence[GroundingSample], cfg: TrainConfig, model: GroundingModel | None = None,
          on_step: Callable[[dict], None] | None = None) -> TrainResult:
    if not dataset:
        raise ValueError("cannot train on an empty dataset")
    cfg.validate()
    model = model or build_model(cfg)
    params = model.parameters()
    opt = Adam(params)
    rng = np.random.default_rng(cfg.seed)
    steps_per_epoch = max(len(dataset) / cfg.batch_size, 1.0)
    result = TrainResult(model)
    order: list[int] = []

    for step in range(1, cfg.steps + 1):
        if len(order) < cfg.batch_size:
            order.extend(rng.permutation(len(dataset)).tolist())
        batch_idx, order = order[:cfg.batch_size], order[cfg.batch_size:]
        batch = [dataset[i] for i in batch_idx]

        opt.zero_grad()
        outputs = model.forward(batch)
        parts = [total_loss(head.probabilities, s.gt_masks(), head.pixel_features, phrases.features, cfg.loss)
                 for (head, phrases), s in zip(outputs, batch)]
        loss = parts[0].total
        for p in parts[1:]:
            loss = loss + p.total
        loss = loss * (1.0 / len(batch))
        row = {
            "step": step,
            "total": loss.item(),
            "bce": float(np.mean([p.bce for p in parts])),
            "dice": float(np.mean([p.dice for p in parts])),
            "sal": float(np.mean([p.sal for p in parts])),
            "lr": learning_rate(step, steps_per_epoch, cfg),
        }
        if not all(math.isfinite(row[k]) for k in ("total", "bce", "dice", "sal")):
            norms = ", ".join(f"{p.name}={np.linalg.norm(p.data):.3g}" for p in params[:8])
            raise NumericFailure(f"non-finite loss at step {step}: {row}; parameter norms: {norms} ...")
        if loss.requires_grad:
            loss.backward()
            clip_grad_norm(params, cfg.clip_norm)
            opt.step(row["lr"])
        result.trace.append(row)
        if on_step is not None:
            on_step(row)
        if cfg.log_every and step % cfg.log_every == 0:
            log.info("step %d total %.4f bce %.4f dice %.4f sal %.4f lr %.2e",
                     step, row["total"], row["bce"], row["dice"], row["sal"], row["lr"])
        if cfg.stop_at_ar is not None and cfg.eval_every and step % cfg.eval_every == 0:
            metrics = evaluate(dataset, model, cfg.threshold)
            metrics["step"] = step
            result.evals.append(metrics)
            log.info("step %d training AR %.4f", step, metrics["all"])
            if metrics["all"] >= cfg.stop_at_ar:
                break
    return result


def evaluation_records(dataset: Sequence[GroundingSample], model: GroundingModel,
                       threshold: float = 0.5, batch_size: int = 8) -> tuple[list[EvalRecord], int]:
    """One record per (sample, phrase) with a nonempty ground-truth mask."""
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    records, excluded = [], 0
    with no_grad():
        for lo in range(0, len(dataset), batch_size):
            chunk = dataset[lo:lo + batch_size]
            for (head, _), sample in zip(model.forward(chunk), chunk):
                pred = binarize(head.probabilities.data, threshold)
                for mask, phrase in zip(pred, sample.phrases):
                    if not phrase.mask.any():
                        excluded += 1
                        continue
                    records.append(EvalRecord(iou(mask, phrase.mask), phrase.is_thing, phrase.is_plural))
    return records, excluded


def evaluate(dataset: Sequence[GroundingSample], model: GroundingModel, threshold: float = 0.5) -> dict:
    records, excluded = evaluation_records(list(dataset), model, threshold)
    return report(records, excluded)


def write_trace(trace: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in trace:
            writer.writerow({k: (row[k] if k == "step" else repr(float(row[k]))) for k in TRACE_FIELDS})


def read_trace(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "step" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]
