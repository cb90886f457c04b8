"""Synthetic optical/SAR scenes of axis-aligned class rectangles.

Both modalities render the same label layout, so their edges (and hence
spectral phase) agree, while their intensities differ: RGB gets per-class
colors plus Gaussian noise, SAR gets per-class backscatter means times
gamma speckle.  SAR means are a monotone function of the RGB luminance,
which keeps edge polarity, and so phase sign, consistent across modalities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..diagnostics import GRAY_WEIGHTS, PairRecord
from ..tensor import Tensor

__all__ = ["Batch", "SynthConfig", "synth_dataset", "collate", "to_pairs", "class_palette"]

# a few land-cover-ish colors; extra classes get seeded random colors
_BASE_PALETTE = np.array(
    [
        [0.20, 0.55, 0.25],
        [0.75, 0.70, 0.45],
        [0.25, 0.35, 0.70],
        [0.70, 0.30, 0.30],
        [0.55, 0.55, 0.55],
        [0.85, 0.85, 0.80],
        [0.40, 0.25, 0.55],
        [0.15, 0.15, 0.20],
    ]
)


@dataclass
class Batch:
    rgb: Tensor
    sar: Tensor
    labels: np.ndarray

    def __len__(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class SynthConfig:
    cell: int = 4
    min_rects: int = 3
    max_rects: int = 6
    rgb_noise: float = 0.05
    looks: int = 4


def class_palette(num_classes: int) -> tuple[np.ndarray, np.ndarray]:
    """RGB colors ``[K, 3]`` and SAR mean intensities ``[K]``."""
    if num_classes < 1:
        raise ValueError("need at least one class")
    rgb = _BASE_PALETTE[: min(num_classes, len(_BASE_PALETTE))]
    if num_classes > len(_BASE_PALETTE):
        extra = np.random.default_rng(1234).uniform(0.1, 0.9, size=(num_classes - len(_BASE_PALETTE), 3))
        rgb = np.concatenate([rgb, extra])
    lum = rgb @ np.asarray(GRAY_WEIGHTS)
    sar = 0.05 + 1.2 * lum**2
    return rgb, sar


def _layout(rng: np.random.Generator, size: int, num_classes: int, cfg: SynthConfig) -> np.ndarray:
    cells = size // cfg.cell
    grid = np.full((cells, cells), rng.integers(num_classes), dtype=np.int64)
    for _ in range(int(rng.integers(cfg.min_rects, cfg.max_rects + 1))):
        cls = rng.integers(num_classes)
        h, w = rng.integers(1, max(cells // 2, 1) + 1, size=2)
        y0 = rng.integers(0, cells - h + 1)
        x0 = rng.integers(0, cells - w + 1)
        grid[y0 : y0 + h, x0 : x0 + w] = cls
    return np.repeat(np.repeat(grid, cfg.cell, axis=0), cfg.cell, axis=1)


def synth_dataset(
    n: int,
    size: int = 32,
    num_classes: int = 3,
    seed: int = 42,
    batch_size: int | None = None,
    config: SynthConfig = SynthConfig(),
) -> list[Batch]:
    """``n`` scenes of ``size x size`` pixels grouped into batches (default: one batch)."""
    if size % 32:
        raise ValueError(f"size must be divisible by 32, got {size}")
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    colors, sar_means = class_palette(num_classes)
    rgb = np.empty((n, 3, size, size))
    sar = np.empty((n, 1, size, size))
    labels = np.empty((n, size, size), dtype=np.int64)
    for i in range(n):
        lab = _layout(rng, size, num_classes, config)
        labels[i] = lab
        img = colors[lab].transpose(2, 0, 1) + rng.normal(0.0, config.rgb_noise, size=(3, size, size))
        rgb[i] = np.clip(img, 0.0, 1.0)
        speckle = rng.gamma(config.looks, 1.0 / config.looks, size=(size, size))
        sar[i, 0] = sar_means[lab] * speckle
    bs = batch_size or n
    return [
        Batch(Tensor(rgb[s : s + bs]), Tensor(sar[s : s + bs]), labels[s : s + bs])
        for s in range(0, n, bs)
    ]


def collate(batches: list[Batch]) -> Batch:
    return Batch(
        Tensor(np.concatenate([b.rgb.data for b in batches])),
        Tensor(np.concatenate([b.sar.data for b in batches])),
        np.concatenate([b.labels for b in batches]),
    )


def to_pairs(batches: list[Batch], prefix: str = "synth") -> list[PairRecord]:
    """Flatten batches into diagnostics pair records (RGB ``[3,H,W]``, SAR ``[1,H,W]``)."""
    out = []
    k = 0
    for b in batches:
        for i in range(len(b)):
            out.append(PairRecord(Tensor(b.rgb.data[i]), Tensor(b.sar.data[i]), id=f"{prefix}{k:04d}"))
            k += 1
    return out
