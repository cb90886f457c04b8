"""Full-batch Adam training with evaluation and checkpoint I/O."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..formats import read_padc, write_padc
from ..tensor import Graph, NonFiniteError, no_grad
from .data import Batch, collate
from .losses import LossBreakdown, loss_amp, loss_seg, loss_total
from .metrics import pixel_accuracy, segmentation_metrics
from .model import ModelConfig, PadNet

__all__ = [
    "Adam",
    "TrainingAborted",
    "TrainResult",
    "compute_losses",
    "train",
    "predict",
    "evaluate",
    "save_checkpoint",
    "load_checkpoint",
]


class TrainingAborted(RuntimeError):
    """A loss went non-finite; ``iteration`` is the 0-based step that failed."""

    def __init__(self, iteration: int, cause: str = ""):
        super().__init__(f"non-finite loss at iteration {iteration}" + (f": {cause}" if cause else ""))
        self.iteration = iteration


class Adam:
    """Adam without weight decay."""

    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        if lr < 0:
            raise ValueError("learning rate must be non-negative")
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g
            if self.lr == 0.0:
                continue
            update = self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            p.assign(p.data - update)


def compute_losses(model: PadNet, batch: Batch) -> LossBreakdown:
    cfg = model.config
    out = model(batch.rgb, batch.sar)
    normalize = not cfg.raw_sum_loss
    seg = loss_seg(out.logits, batch.labels, normalize)
    aux = loss_seg(out.aux_logits, batch.labels, normalize)
    if out.amp_pairs:
        amp, stage = loss_amp(out.amp_pairs, normalize=normalize)
    else:
        amp, stage = 0.0, []
    l1, l2 = cfg.loss_weights
    return loss_total(seg, aux, amp, l1, l2, stage)


@dataclass
class TrainResult:
    model: PadNet
    log: list[dict] = field(default_factory=list)
    train_metrics: dict = field(default_factory=dict)
    eval_metrics: dict | None = None


def predict(model: PadNet, batch: Batch) -> np.ndarray:
    with no_grad():
        out = model(batch.rgb, batch.sar)
    return np.argmax(out.logits.data, axis=-3)


def evaluate(model: PadNet, batches: list[Batch]) -> dict:
    preds, gts = [], []
    for b in batches:
        p = predict(model, b)
        preds.extend(p)
        gts.extend(b.labels)
    m = segmentation_metrics(preds, gts, model.config.num_classes)
    m["pixel_accuracy"] = pixel_accuracy(np.stack(preds), np.stack(gts))
    return m


def train(
    config: ModelConfig,
    dataset: list[Batch],
    iters: int = 500,
    lr: float = 1e-3,
    eval_set: list[Batch] | None = None,
    model: PadNet | None = None,
    callback=None,
) -> TrainResult:
    """Full-batch training; every iteration sees the whole (collated) dataset."""
    if iters < 1:
        raise ValueError("iters must be at least 1")
    model = model or PadNet(config)
    batch = collate(dataset) if len(dataset) > 1 else dataset[0]
    opt = Adam(model.parameters(), lr=lr)
    log = []
    for it in range(iters):
        try:
            with Graph() as g:
                lb = compute_losses(model, batch)
                row = lb.floats()
                if not all(math.isfinite(v) for v in row.values()):
                    raise TrainingAborted(it)
                g.backward(lb.total)
            row = {"iter": it, **row}
            log.append(row)
            if callback is not None:
                callback(row)
            opt.step()
        except NonFiniteError as exc:
            raise TrainingAborted(it, str(exc)) from exc
    result = TrainResult(model, log, evaluate(model, [batch]))
    if eval_set:
        result.eval_metrics = evaluate(model, eval_set)
    return result


def save_checkpoint(path, model: PadNet) -> None:
    write_padc(path, model.state())


def load_checkpoint(path, config: ModelConfig) -> PadNet:
    model = PadNet(config)
    model.load_state(read_padc(path))
    return model
