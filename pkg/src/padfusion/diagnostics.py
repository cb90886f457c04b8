"""Cross-modal difference spectra for co-registered RGB/SAR pairs.

The three per-pair maps are

* RSD  - relative spatial difference ``|sar - rgb| / (rgb + eps)``
* RAD  - the same relation on shifted half-spectrum amplitudes
* APPD - absolute wrapped phase difference, in ``[0, pi]``

Dataset maps are plain means over pairs.  Band statistics are taken over the
bins of the dataset-mean APPD map.
"""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import stats
from .spectral import fd, radial_distance
from .tensor import ShapeError, Tensor

__all__ = [
    "PairRecord",
    "PairMetrics",
    "StatBlock",
    "DiffReport",
    "SweepPoint",
    "GRAY_WEIGHTS",
    "DEFAULT_EPS",
    "DEFAULT_LF_FRACTION",
    "SHAPIRO_CAP",
    "ENL_CAP",
    "to_grayscale",
    "gray_of",
    "rsd_pair",
    "rad_pair",
    "appd_pair",
    "appd_from_phases",
    "pair_metrics",
    "aggregate",
    "band_partition",
    "stat_block",
    "analyze",
    "downsample",
    "downsample_sweep",
    "largest_valid_rectangle",
    "masked_diff",
    "enl_map",
    "correlation",
    "radial_profile",
    "read_manifest",
    "write_manifest",
]

GRAY_WEIGHTS = (0.299, 0.587, 0.114)
DEFAULT_EPS = 1e-8
DEFAULT_LF_FRACTION = 0.5
SHAPIRO_CAP = 5000
ENL_CAP = 1e6


def _arr(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


@dataclass
class PairRecord:
    rgb: Tensor
    sar: Tensor
    mask: Tensor | None = None
    id: str = ""

    def __post_init__(self):
        if self.rgb.shape[-2:] != self.sar.shape[-2:]:
            raise ShapeError(
                f"pair {self.id!r}: rgb {self.rgb.shape} and sar {self.sar.shape} differ spatially"
            )
        if self.mask is not None and self.mask.shape[-2:] != self.sar.shape[-2:]:
            raise ShapeError(f"pair {self.id!r}: mask {self.mask.shape} does not match images")


@dataclass
class PairMetrics:
    """One row of per-pair results: the three maps and their means."""

    rsd: Tensor
    rad: Tensor
    appd: Tensor

    @property
    def means(self) -> dict[str, float]:
        return {k: float(getattr(self, k).data.mean()) for k in ("rsd", "rad", "appd")}


@dataclass
class StatBlock:
    shapiro_w: float | None
    shapiro_p: float | None
    skewness: float
    excess_kurtosis: float
    mean: float
    variance: float
    n: int
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "shapiro_w": self.shapiro_w,
            "shapiro_p": self.shapiro_p,
            "skewness": self.skewness,
            "excess_kurtosis": self.excess_kurtosis,
            "mean": self.mean,
            "variance": self.variance,
            "n": self.n,
            "degenerate": self.degenerate,
        }


@dataclass
class DiffReport:
    rsd_map: Tensor
    rad_map: Tensor
    appd_map: Tensor
    lf_stats: StatBlock
    hf_stats: StatBlock
    all_stats: StatBlock
    n_pairs: int
    eps: float
    lf_radius_fraction: float
    pair_ids: list[str] = field(default_factory=list)

    def scalars(self) -> dict[str, tuple[float, float]]:
        """(mean, variance) of each dataset-mean map."""
        out = {}
        for key in ("rsd", "rad", "appd"):
            m = getattr(self, f"{key}_map").data
            out[key] = (float(m.mean()), float(m.var()))
        return out


# ---------------------------------------------------------------------------
# per-pair metrics


def to_grayscale(rgb) -> Tensor:
    a = _arr(rgb)
    if a.ndim != 3 or a.shape[0] != 3:
        raise ShapeError(f"to_grayscale expects [3, H, W], got {a.shape}")
    r, g, b = GRAY_WEIGHTS
    return Tensor((r * a[0] + g * a[1] + b * a[2])[None])


def gray_of(img) -> Tensor:
    """Luminance of a 3-channel image; single-channel images pass through."""
    a = _arr(img)
    if a.ndim == 2:
        return Tensor(a[None])
    if a.shape[0] == 1:
        return img if isinstance(img, Tensor) else Tensor(a)
    return to_grayscale(a)


def _check_eps(eps: float) -> None:
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")


def _check_pair(sar: np.ndarray, rgb: np.ndarray) -> None:
    if sar.shape != rgb.shape:
        raise ShapeError(f"sar {sar.shape} and grayscale rgb {rgb.shape} differ")


def rsd_pair(sar, rgb_gray, eps: float = DEFAULT_EPS) -> Tensor:
    _check_eps(eps)
    s, r = _arr(sar), _arr(rgb_gray)
    _check_pair(s, r)
    return Tensor(np.abs(s - r) / (r + eps))


def rad_pair(sar, rgb_gray, eps: float = DEFAULT_EPS) -> Tensor:
    _check_eps(eps)
    s, r = _arr(sar), _arr(rgb_gray)
    _check_pair(s, r)
    a_s = fd(Tensor(s)).amp.data
    a_r = fd(Tensor(r)).amp.data
    return Tensor(np.abs(a_s - a_r) / (a_r + eps))


def appd_from_phases(p_sar, p_rgb) -> np.ndarray:
    """|arg exp(i (p_sar - p_rgb))|, with the angle taken in [-pi, pi)."""
    d = _arr(p_sar) - _arr(p_rgb)
    wrapped = np.arctan2(np.sin(d), np.cos(d))
    wrapped = np.where(wrapped >= math.pi, -math.pi, wrapped)
    return np.abs(wrapped)


def appd_pair(sar, rgb_gray) -> Tensor:
    s, r = _arr(sar), _arr(rgb_gray)
    _check_pair(s, r)
    out = appd_from_phases(fd(Tensor(s)).phase.data, fd(Tensor(r)).phase.data)
    assert np.all((out >= 0.0) & (out <= math.pi))
    return Tensor(out)


def pair_metrics(pair: PairRecord, eps: float = DEFAULT_EPS) -> PairMetrics:
    gray = gray_of(pair.rgb)
    return PairMetrics(
        rsd=rsd_pair(pair.sar, gray, eps),
        rad=rad_pair(pair.sar, gray, eps),
        appd=appd_pair(pair.sar, gray),
    )


# ---------------------------------------------------------------------------
# dataset level


def aggregate(maps: Sequence) -> Tensor:
    """Elementwise mean, accumulated in input order."""
    maps = list(maps)
    if not maps:
        raise ValueError("aggregate needs at least one map")
    acc = np.array(_arr(maps[0]), dtype=np.float64, copy=True)
    for m in maps[1:]:
        a = _arr(m)
        if a.shape != acc.shape:
            raise ShapeError(f"aggregate: map shape {a.shape} differs from {acc.shape}")
        acc = acc + a
    return Tensor(acc / len(maps))


def band_partition(map_, lf_radius_fraction: float = DEFAULT_LF_FRACTION):
    """Split shifted half-spectrum bins into (low, high, all) value arrays."""
    if not 0.0 < lf_radius_fraction < 1.0:
        raise ValueError(f"lf_radius_fraction must be in (0, 1), got {lf_radius_fraction}")
    a = _arr(map_)
    dist = radial_distance(a.shape[-2], a.shape[-1])
    lf_mask = np.broadcast_to(dist <= lf_radius_fraction, a.shape)
    return a[lf_mask], a[~lf_mask], a.reshape(-1).copy()


def stat_block(values, subsample_cap: int = SHAPIRO_CAP, seed: int = 0) -> StatBlock:
    x = np.asarray(_arr(values), dtype=np.float64).ravel()
    if min(x.size, subsample_cap) < 3:
        raise ValueError("stat_block needs at least 3 values")
    mean = float(x.mean())
    var = float(x.var())
    if np.all(x == x[0]):
        warnings.warn("constant sample: normality statistics undefined", RuntimeWarning, stacklevel=2)
        return StatBlock(None, None, 0.0, 0.0, mean, var, int(x.size), degenerate=True)
    sample = x
    if x.size > subsample_cap:
        rng = np.random.default_rng(seed)
        sample = x[np.sort(rng.choice(x.size, size=subsample_cap, replace=False))]
    try:
        w, p = stats.shapiro_wilk(sample)
    except ValueError:
        # the subsample happened to be constant
        w, p = None, None
    return StatBlock(
        shapiro_w=w,
        shapiro_p=p,
        skewness=stats.skewness(x),
        excess_kurtosis=stats.excess_kurtosis(x),
        mean=mean,
        variance=var,
        n=int(x.size),
    )


def _map_pool(fn, items, threads: int):
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        # map() yields in submission order, whatever the completion order
        return list(pool.map(fn, items))


def analyze(
    pairs: Sequence[PairRecord],
    eps: float = DEFAULT_EPS,
    lf_radius_fraction: float = DEFAULT_LF_FRACTION,
    threads: int = 1,
    subsample_cap: int = SHAPIRO_CAP,
    seed: int = 0,
) -> DiffReport:
    """Spectral difference analysis over a list of pairs."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("analyze needs at least one pair")
    _check_eps(eps)
    if not 0.0 < lf_radius_fraction < 1.0:
        raise ValueError(f"lf_radius_fraction must be in (0, 1), got {lf_radius_fraction}")
    rows = _map_pool(lambda p: pair_metrics(p, eps), pairs, threads)
    appd = aggregate([r.appd for r in rows])
    lf, hf, every = band_partition(appd, lf_radius_fraction)
    return DiffReport(
        rsd_map=aggregate([r.rsd for r in rows]),
        rad_map=aggregate([r.rad for r in rows]),
        appd_map=appd,
        lf_stats=stat_block(lf, subsample_cap, seed),
        hf_stats=stat_block(hf, subsample_cap, seed),
        all_stats=stat_block(every, subsample_cap, seed),
        n_pairs=len(pairs),
        eps=eps,
        lf_radius_fraction=lf_radius_fraction,
        pair_ids=[p.id for p in pairs],
    )


# ---------------------------------------------------------------------------
# sampling-rate sweep


@dataclass
class SweepPoint:
    rate: float
    factor: int
    height: int
    width: int
    rsd: tuple[float, float]
    rad: tuple[float, float]
    appd: tuple[float, float]


def _downsample_factor(rate: float) -> int:
    if not 0.0 < rate <= 1.0:
        raise ValueError(f"rate must be in (0, 1], got {rate}")
    return max(1, int(round(1.0 / rate)))


def downsample(img, rate: float) -> Tensor:
    """Block area-average by the integer factor nearest to ``1 / rate``."""
    a = _arr(img)
    k = _downsample_factor(rate)
    h, w = a.shape[-2:]
    if min(h, w) // k < 4:
        raise ValueError(f"rate {rate} leaves fewer than 4 pixels on a {h}x{w} image")
    if k == 1:
        return Tensor(a)
    hh, ww = (h // k) * k, (w // k) * k
    a = a[..., :hh, :ww]
    blocks = a.reshape(a.shape[:-2] + (hh // k, k, ww // k, k))
    return Tensor(blocks.mean(axis=(-3, -1)))


def downsample_sweep(
    pairs: Sequence[PairRecord],
    rates: Sequence[float],
    eps: float = DEFAULT_EPS,
    lf_radius_fraction: float = DEFAULT_LF_FRACTION,
    threads: int = 1,
) -> list[SweepPoint]:
    pairs = list(pairs)
    points = []
    for rate in rates:
        k = _downsample_factor(rate)
        small = [
            PairRecord(downsample(p.rgb, rate), downsample(p.sar, rate), None, p.id) for p in pairs
        ]
        rep = analyze(small, eps, lf_radius_fraction, threads=threads)
        sc = rep.scalars()
        h, w = rep.rsd_map.shape[-2:]
        points.append(SweepPoint(float(rate), k, h, w, sc["rsd"], sc["rad"], sc["appd"]))
    return points


# ---------------------------------------------------------------------------
# masked comparison


def largest_valid_rectangle(mask) -> tuple[int, int, int, int]:
    """Row/column bounds ``(r0, r1, c0, c1)`` (half-open) of the valid region.

    Uses the tight bounding box when it is fully valid, otherwise the largest
    axis-aligned all-valid rectangle.
    """
    m = np.asarray(_arr(mask)).reshape(_arr(mask).shape[-2:]) > 0.5
    if not m.any():
        raise ValueError("mask has no valid pixels")
    rows = np.flatnonzero(m.any(axis=1))
    cols = np.flatnonzero(m.any(axis=0))
    r0, r1, c0, c1 = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1
    if m[r0:r1, c0:c1].all():
        return int(r0), int(r1), int(c0), int(c1)
    # maximal rectangle via per-row histograms and a monotone stack
    h, w = m.shape
    heights = np.zeros(w, dtype=np.int64)
    best = (0, 0, 0, 0, 0)
    for r in range(h):
        heights = np.where(m[r], heights + 1, 0)
        stack: list[int] = []
        for c in range(w + 1):
            cur = heights[c] if c < w else 0
            while stack and heights[stack[-1]] >= cur:
                top = stack.pop()
                height = int(heights[top])
                left = stack[-1] + 1 if stack else 0
                area = height * (c - left)
                if area > best[0]:
                    best = (area, r + 1 - height, r + 1, left, c)
            stack.append(c)
    return best[1], best[2], best[3], best[4]


def masked_diff(pair: PairRecord, eps: float = DEFAULT_EPS) -> tuple[PairMetrics, PairMetrics]:
    """Metrics on the whole pair and on its valid-region crop."""
    if pair.mask is None:
        raise ValueError(f"pair {pair.id!r} has no mask")
    r0, r1, c0, c1 = largest_valid_rectangle(pair.mask)
    if r1 - r0 < 2 or c1 - c0 < 2:
        raise ValueError(f"pair {pair.id!r}: valid region {r1 - r0}x{c1 - c0} is too small")
    included = pair_metrics(pair, eps)
    crop = PairRecord(
        Tensor(pair.rgb.data[..., r0:r1, c0:c1]),
        Tensor(pair.sar.data[..., r0:r1, c0:c1]),
        None,
        pair.id,
    )
    return included, pair_metrics(crop, eps)


# ---------------------------------------------------------------------------
# speckle / correlation


def enl_map(img, window: int = 9, cap: float = ENL_CAP) -> Tensor:
    """Equivalent number of looks, mean^2 / variance over a sliding window."""
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    a = _arr(img)
    plane = a.reshape(a.shape[-2:])
    half = window // 2
    padded = np.pad(plane, half, mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, (window, window))
    mean = win.mean(axis=(-2, -1))
    var = win.var(axis=(-2, -1))
    low = var < 1e-12
    enl = np.where(low, cap, mean * mean / np.where(low, 1.0, var))
    return Tensor(enl.reshape(a.shape))


def correlation(a, b) -> tuple[float, float]:
    return stats.pearson(_arr(a), _arr(b)), stats.spearman(_arr(a), _arr(b))


def radial_profile(report: DiffReport, bins: int = 16) -> list[tuple[int, float, float, float]]:
    """Binned means of the three dataset maps against normalized radius.

    RSD is binned by distance from the image centre, RAD and APPD by the
    spectral radius used for band partitioning.
    """
    rsd = report.rsd_map.data.reshape(report.rsd_map.shape[-2:])
    rad = report.rad_map.data.reshape(report.rad_map.shape[-2:])
    appd = report.appd_map.data.reshape(report.appd_map.shape[-2:])
    h, w = rsd.shape
    ys = np.arange(h)[:, None] - (h - 1) / 2.0
    xs = np.arange(w)[None, :] - (w - 1) / 2.0
    sdist = np.sqrt(ys * ys + xs * xs)
    sdist = sdist / sdist.max() if sdist.max() > 0 else sdist
    fdist = radial_distance(*rad.shape)

    def binned(values, dist):
        idx = np.minimum((dist * bins).astype(int), bins - 1)
        out = []
        for b in range(bins):
            sel = values[idx == b]
            out.append(float(sel.mean()) if sel.size else float("nan"))
        return out

    r1, r2, r3 = binned(rsd, sdist), binned(rad, fdist), binned(appd, fdist)
    return [(b, r1[b], r2[b], r3[b]) for b in range(bins)]


# ---------------------------------------------------------------------------
# manifest


def read_manifest(path, loader=None) -> list[PairRecord]:
    """Load ``id,rgb,sar,mask`` CSV rows; paths resolve against the manifest."""
    from .formats import load_image

    loader = loader or load_image
    path = Path(path)
    base = path.parent
    pairs = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"id", "rgb", "sar"} - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: manifest lacks columns {sorted(missing)}")
        for row in reader:
            mask_rel = (row.get("mask") or "").strip()
            rgb = loader(base / row["rgb"].strip())
            sar = loader(base / row["sar"].strip())
            mask = loader(base / mask_rel) if mask_rel else None
            pairs.append(PairRecord(rgb, sar, mask, row["id"].strip()))
    return pairs


def write_manifest(pairs: Sequence[PairRecord], directory, name: str = "manifest.csv") -> Path:
    """Write pairs as PADT tensors plus a manifest CSV; returns the manifest path."""
    from .formats import write_padt

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for k, p in enumerate(pairs):
        pid = p.id or f"pair{k:04d}"
        files = {"rgb": f"{pid}_rgb.padt", "sar": f"{pid}_sar.padt", "mask": ""}
        write_padt(directory / files["rgb"], p.rgb)
        write_padt(directory / files["sar"], p.sar)
        if p.mask is not None:
            files["mask"] = f"{pid}_mask.padt"
            write_padt(directory / files["mask"], p.mask)
        rows.append((pid, files["rgb"], files["sar"], files["mask"]))
    path = directory / name
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "rgb", "sar", "mask"])
        w.writerows(rows)
    return path
