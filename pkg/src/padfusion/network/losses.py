"""Cross-entropy supervision plus the amplitude-consistency term."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..tensor import ShapeError, Tensor, apply_op, binary, square, tmean, tsum

__all__ = [
    "IGNORE_LABEL",
    "STAGE_ALPHAS",
    "LossBreakdown",
    "check_labels",
    "cross_entropy",
    "loss_seg",
    "loss_amp",
    "loss_total",
]

IGNORE_LABEL = 255
STAGE_ALPHAS = tuple(0.5 + 0.5 * t / 3 for t in range(4))


def check_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if not np.issubdtype(labels.dtype, np.integer):
        raise ValueError(f"labels must be integers, got dtype {labels.dtype}")
    bad = (labels != IGNORE_LABEL) & ((labels < 0) | (labels >= num_classes))
    if bad.any():
        raise ValueError(f"label values outside [0, {num_classes}) and not {IGNORE_LABEL}")
    return labels


def cross_entropy(logits: Tensor, labels, normalize: bool = True) -> Tensor:
    """Pixel-wise softmax cross-entropy over the class axis ``-3``.

    ``logits`` is ``[..., K, H, W]`` and ``labels`` is ``[..., H, W]``.  Pixels
    labelled 255 are skipped.  With ``normalize`` the sum is divided by the
    number of labelled pixels.
    """
    k = logits.shape[-3]
    labels = check_labels(labels, k)
    if labels.shape != logits.shape[:-3] + logits.shape[-2:]:
        raise ShapeError(f"labels {labels.shape} do not match logits {logits.shape}")
    valid = labels != IGNORE_LABEL
    count = int(valid.sum())
    if count == 0:
        raise ValueError("no labelled pixels: every label is the ignore value")
    z = logits.data
    zmax = z.max(axis=-3, keepdims=True)
    shifted = z - zmax
    lse = np.log(np.exp(shifted).sum(axis=-3, keepdims=True))
    logp = shifted - lse
    safe = np.where(valid, labels, 0)
    picked = np.take_along_axis(logp, safe[..., None, :, :], axis=-3)[..., 0, :, :]
    scale = 1.0 / count if normalize else 1.0
    value = -float(np.sum(np.where(valid, picked, 0.0))) * scale

    def vjp(g):
        grad = np.exp(logp)
        onehot = np.zeros_like(grad)
        np.put_along_axis(onehot, safe[..., None, :, :], 1.0, axis=-3)
        grad = (grad - onehot) * valid[..., None, :, :]
        return (grad * (g * scale),)

    return apply_op("cross_entropy", np.array(value), (logits,), vjp)


def loss_seg(logits: Tensor, labels, normalize: bool = True) -> Tensor:
    return cross_entropy(logits, labels, normalize)


def loss_amp(
    amp_pairs, alphas=STAGE_ALPHAS, normalize: bool = True
) -> tuple[Tensor, list[Tensor]]:
    """Depth-weighted squared amplitude drift, averaged over the four stages.

    Returns the total and the unweighted per-stage terms.
    """
    amp_pairs = list(amp_pairs)
    if len(amp_pairs) != len(alphas):
        raise ShapeError(f"expected {len(alphas)} stage pairs, got {len(amp_pairs)}")
    terms = []
    total = None
    for t, ((a, a2), alpha) in enumerate(zip(amp_pairs, alphas)):
        if a.shape != a2.shape:
            raise ShapeError(f"stage {t}: amplitude shapes {a.shape} and {a2.shape} differ")
        d2 = square(a2 - a)
        term = tmean(d2) if normalize else tsum(d2)
        terms.append(term)
        weighted = term * (alpha / len(alphas))
        total = weighted if total is None else total + weighted
    return total, terms


@dataclass
class LossBreakdown:
    seg: Tensor
    aux: Tensor
    amp: Tensor
    total: Tensor
    weights: tuple[float, float] = (0.4, 0.1)
    stage_amp: list[Tensor] = field(default_factory=list)
    alphas: tuple[float, ...] = STAGE_ALPHAS

    def floats(self) -> dict[str, float]:
        return {k: getattr(self, k).item() for k in ("seg", "aux", "amp", "total")}


def _scalar(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.array(float(x)))


def loss_total(seg, aux, amp, lambda1: float = 0.4, lambda2: float = 0.1, stage_amp=None) -> LossBreakdown:
    """``seg + lambda1 * aux + lambda2 * amp``."""
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError(f"loss weights must be non-negative, got {lambda1}, {lambda2}")
    seg, aux, amp = _scalar(seg), _scalar(aux), _scalar(amp)
    total = binary("add", binary("add", seg, aux * float(lambda1)), amp * float(lambda2))
    return LossBreakdown(seg, aux, amp, total, (float(lambda1), float(lambda2)), list(stage_amp or []))
