"""Half-plane 2D spectra and the amplitude/phase decoupling operators.

Spectra are kept in the rFFT layout ``[..., H, W//2 + 1]``.  The shift used
here rotates rows only, so after :func:`shift_half` the zero-frequency bin
sits at ``(H//2, 0)`` and column index still equals the horizontal frequency.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import fft as _fft
from .tensor import ShapeError, Tensor, apply_op, atan2, cos, hypot, roll, sin, stack

__all__ = [
    "HalfSpectrum",
    "AmpPhase",
    "ImaginaryResidualWarning",
    "rfft2",
    "irfft2",
    "naive_dft2",
    "shift_half",
    "unshift_half",
    "fd",
    "fr",
    "imaginary_residual",
    "radial_distance",
    "AMP_FLOOR",
    "RESIDUAL_TOLERANCE",
]

AMP_FLOOR = 1e-12
RESIDUAL_TOLERANCE = 1e-6


class ImaginaryResidualWarning(UserWarning):
    """The spectrum handed to FR was not conjugate-symmetric."""


@dataclass(frozen=True)
class HalfSpectrum:
    re: Tensor
    im: Tensor
    full_width: int

    @property
    def height(self) -> int:
        return self.re.shape[-2]

    @property
    def half_width(self) -> int:
        return self.re.shape[-1]

    def complex(self) -> np.ndarray:
        return self.re.data + 1j * self.im.data


@dataclass(frozen=True)
class AmpPhase:
    amp: Tensor
    phase: Tensor
    full_width: int

    def complex(self) -> np.ndarray:
        return self.amp.data * np.exp(1j * self.phase.data)


def _self_conjugate_mask(h: int, w: int) -> np.ndarray:
    """Bins of the half spectrum that are their own conjugate partner."""
    rows = np.zeros(h, dtype=bool)
    rows[0] = True
    if h % 2 == 0:
        rows[h // 2] = True
    cols = np.zeros(w // 2 + 1, dtype=bool)
    cols[0] = True
    if w % 2 == 0:
        cols[w // 2] = True
    return rows[:, None] & cols[None, :]


def _check_axes(x: Tensor, allow_degenerate: bool) -> tuple[int, int]:
    if x.ndim < 2:
        raise ShapeError(f"expected at least a 2D tensor, got shape {x.shape}")
    h, w = x.shape[-2:]
    if not allow_degenerate and (h < 2 or w < 2):
        raise ShapeError(f"spatial axes must be at least 2 long, got {h}x{w}")
    return h, w


def _rfft2_stacked(x: Tensor) -> Tensor:
    """Half spectrum as ``[..., H, Wh, 2]`` (real, imaginary)."""
    h, w = x.shape[-2:]
    wh = w // 2 + 1
    sc = _self_conjugate_mask(h, w)
    hs = _fft.fft(_fft.fft(x.data, axis=-1)[..., :wh], axis=-2)
    hs.imag[..., sc] = 0.0
    data = np.stack([hs.real, hs.imag], axis=-1)

    def vjp(g):
        gc = g[..., 0] + 1j * np.where(sc, 0.0, g[..., 1])
        full = np.zeros(g.shape[:-3] + (h, w), dtype=np.complex128)
        full[..., :wh] = gc
        # sum_k G[k] e^{+i theta_kn} = conj(fft2(conj(G)))
        return (np.real(_fft.fft2(np.conj(full))),)

    return apply_op("rfft2", data, (x,), vjp)


def _hermitian_index(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    wh = w // 2 + 1
    src_rows = (-np.arange(h)) % h
    src_cols = w - np.arange(wh, w)
    return src_rows, src_cols


def _irfft2_stacked(s: Tensor, w: int) -> tuple[Tensor, float]:
    h, wh = s.shape[-3], s.shape[-2]
    if wh != w // 2 + 1:
        raise ShapeError(f"half width {wh} inconsistent with full width {w}")
    src_rows, src_cols = _hermitian_index(h, w)
    y = s.data[..., 0] + 1j * s.data[..., 1]
    full = np.zeros(y.shape[:-2] + (h, w), dtype=np.complex128)
    full[..., :wh] = y
    if w > wh:
        full[..., wh:] = np.conj(y[..., src_rows[:, None], src_cols[None, :]])
    spatial = _fft.ifft2(full)
    re_norm = float(np.linalg.norm(spatial.real))
    im_norm = float(np.linalg.norm(spatial.imag))
    residual = im_norm / re_norm if re_norm > 0 else (0.0 if im_norm == 0 else math.inf)

    def vjp(g):
        gfull = _fft.fft2(g) / (h * w)
        gre = gfull.real[..., :wh].copy()
        gim = gfull.imag[..., :wh].copy()
        if w > wh:
            gre[..., src_rows[:, None], src_cols[None, :]] += gfull.real[..., wh:]
            gim[..., src_rows[:, None], src_cols[None, :]] -= gfull.imag[..., wh:]
        return (np.stack([gre, gim], axis=-1),)

    return apply_op("irfft2", spatial.real, (s,), vjp), residual


def rfft2(x: Tensor, *, allow_degenerate: bool = False) -> HalfSpectrum:
    """Real-input 2D DFT over the last two axes, non-redundant half only."""
    _, w = _check_axes(x, allow_degenerate)
    s = _rfft2_stacked(x)
    return HalfSpectrum(s[..., 0], s[..., 1], w)


def irfft2(hs: HalfSpectrum, *, warn: bool = True) -> Tensor:
    """Inverse of :func:`rfft2` (unshifted layout), real part only."""
    out, residual = _irfft2_stacked(stack([hs.re, hs.im], axis=-1), hs.full_width)
    if warn and residual > RESIDUAL_TOLERANCE:
        warnings.warn(
            f"imaginary residual {residual:.3g} of signal norm discarded",
            ImaginaryResidualWarning,
            stacklevel=2,
        )
    return out


def naive_dft2(x) -> HalfSpectrum:
    """Direct evaluation of the 2D DFT, one bin at a time.  Test oracle only."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"naive_dft2 takes a single [H, W] image, got {arr.shape}")
    h, w = arr.shape
    wh = w // 2 + 1
    ys = np.arange(h)[:, None]
    xs = np.arange(w)[None, :]
    re = np.zeros((h, wh))
    im = np.zeros((h, wh))
    for v in range(h):
        for u in range(wh):
            # integer phase numerator reduced mod H*W keeps the angle exact
            turns = ((u * xs * h + v * ys * w) % (h * w)) / (h * w)
            angle = -2.0 * math.pi * turns
            re[v, u] = float(np.sum(arr * np.cos(angle)))
            im[v, u] = float(np.sum(arr * np.sin(angle)))
    return HalfSpectrum(Tensor(re), Tensor(im), w)


def shift_half(hs: HalfSpectrum) -> HalfSpectrum:
    """Rotate rows by ``H//2`` so that ``v = 0`` lands on row ``H//2``."""
    k = hs.height // 2
    return HalfSpectrum(roll(hs.re, k, -2), roll(hs.im, k, -2), hs.full_width)


def unshift_half(hs: HalfSpectrum) -> HalfSpectrum:
    k = hs.height - hs.height // 2
    return HalfSpectrum(roll(hs.re, k, -2), roll(hs.im, k, -2), hs.full_width)


def fd(x: Tensor, *, allow_degenerate: bool = False) -> AmpPhase:
    """Frequency decoupling: shifted half spectrum split into amplitude and phase.

    Works channel-wise on any ``[..., H, W]`` input.  Phase is in ``[-pi, pi)``.
    Gradients through the polar split are zero where amplitude < 1e-12.
    """
    s = shift_half(rfft2(x, allow_degenerate=allow_degenerate))
    return AmpPhase(hypot(s.re, s.im, AMP_FLOOR), atan2(s.im, s.re, AMP_FLOOR), s.full_width)


def _recompose(ap: AmpPhase) -> HalfSpectrum:
    if ap.amp.shape != ap.phase.shape:
        raise ShapeError(f"amplitude {ap.amp.shape} and phase {ap.phase.shape} differ")
    re = ap.amp * cos(ap.phase)
    im = ap.amp * sin(ap.phase)
    return unshift_half(HalfSpectrum(re, im, ap.full_width))


def fr(ap: AmpPhase, *, warn: bool = True) -> Tensor:
    """Frequency recoupling: amplitude/phase back to the spatial domain.

    Any imaginary part left after inversion is dropped.  When it exceeds
    1e-6 of the signal norm an :class:`ImaginaryResidualWarning` is issued
    (set ``warn=False`` inside models whose phase edits break symmetry).
    """
    hs = _recompose(ap)
    out, residual = _irfft2_stacked(stack([hs.re, hs.im], axis=-1), hs.full_width)
    if warn and residual > RESIDUAL_TOLERANCE:
        warnings.warn(
            f"imaginary residual {residual:.3g} of signal norm discarded",
            ImaginaryResidualWarning,
            stacklevel=2,
        )
    return out


def imaginary_residual(ap: AmpPhase) -> float:
    """Norm of the discarded imaginary part relative to the real output."""
    hs = _recompose(ap)
    _, residual = _irfft2_stacked(stack([hs.re, hs.im], axis=-1), hs.full_width)
    return residual


def radial_distance(height: int, half_width: int) -> np.ndarray:
    """Normalized distance of each shifted half-spectrum bin from DC.

    DC sits at ``(height // 2, 0)``; the divisor is the length of the largest
    row/column offsets, so values lie in ``[0, 1]`` and the far corner is 1.
    A 1x1 grid has no extent and maps to 0.
    """
    if height < 1 or half_width < 1:
        raise ShapeError(f"grid must be at least 1x1, got {height}x{half_width}")
    yc = height // 2
    y_max = max(yc, height - 1 - yc)
    x_max = half_width - 1
    denom = math.hypot(x_max, y_max)
    ys = np.arange(height, dtype=np.float64)[:, None] - yc
    xs = np.arange(half_width, dtype=np.float64)[None, :]
    if denom == 0.0:
        return np.zeros((height, half_width))
    return np.sqrt(xs * xs + ys * ys) / denom
