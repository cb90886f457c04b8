"""Complex FFT along one axis: iterative radix-2, Bluestein for other lengths.

All transforms are unnormalized in the forward direction and carry the
``1/n`` factor in the inverse, matching the usual DFT convention.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

__all__ = ["fft", "ifft", "fft2", "ifft2", "is_power_of_two"]


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _unit_roots(n: int, k: np.ndarray) -> np.ndarray:
    """exp(-2 pi i k / n) with the quarter-turn points snapped to exact values."""
    k = np.mod(k, n)
    w = np.exp(-2j * np.pi * k / n)
    if n % 4 == 0:
        q = n // 4
        exact = {0: 1.0, q: -1j, 2 * q: -1.0, 3 * q: 1j}
        for kk, val in exact.items():
            w[k == kk] = val
    elif n % 2 == 0:
        w[k == 0] = 1.0
        w[k == n // 2] = -1.0
    else:
        w[k == 0] = 1.0
    return w


@lru_cache(maxsize=None)
def _bitrev(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    rev.setflags(write=False)
    return rev


@lru_cache(maxsize=None)
def _stage_twiddles(m: int) -> np.ndarray:
    w = _unit_roots(2 * m, np.arange(m))
    w.setflags(write=False)
    return w


def _radix2(a: np.ndarray) -> np.ndarray:
    n = a.shape[-1]
    lead = a.shape[:-1]
    a = a[..., _bitrev(n)]
    m = 1
    while m < n:
        blocks = a.reshape(*lead, n // (2 * m), 2, m)
        even = blocks[..., 0, :]
        odd = blocks[..., 1, :] * _stage_twiddles(m)
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(*lead, n)
        m *= 2
    return a


@lru_cache(maxsize=None)
def _bluestein_plan(n: int) -> tuple[np.ndarray, np.ndarray, int]:
    k = np.arange(n)
    # k^2 mod 2n keeps the chirp argument small for accuracy.
    chirp = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
    m = 1
    while m < 2 * n - 1:
        m *= 2
    b = np.zeros(m, dtype=np.complex128)
    b[:n] = np.conj(chirp)
    b[m - n + 1 :] = np.conj(chirp[1:])[::-1]
    fb = _radix2(b)
    chirp.setflags(write=False)
    fb.setflags(write=False)
    return chirp, fb, m


def _bluestein(a: np.ndarray) -> np.ndarray:
    n = a.shape[-1]
    chirp, fb, m = _bluestein_plan(n)
    padded = np.zeros(a.shape[:-1] + (m,), dtype=np.complex128)
    padded[..., :n] = a * chirp
    conv = np.conj(_radix2(np.conj(_radix2(padded) * fb))) / m
    return conv[..., :n] * chirp


def fft(a: np.ndarray, axis: int = -1) -> np.ndarray:
    a = np.moveaxis(np.asarray(a, dtype=np.complex128), axis, -1)
    n = a.shape[-1]
    if n == 1:
        out = a.copy()
    elif is_power_of_two(n):
        out = _radix2(a)
    else:
        out = _bluestein(a)
    return np.moveaxis(out, -1, axis)


def ifft(a: np.ndarray, axis: int = -1) -> np.ndarray:
    a = np.asarray(a, dtype=np.complex128)
    n = a.shape[axis]
    return np.conj(fft(np.conj(a), axis=axis)) / n


def fft2(a: np.ndarray) -> np.ndarray:
    return fft(fft(a, axis=-1), axis=-2)


def ifft2(a: np.ndarray) -> np.ndarray:
    return ifft(ifft(a, axis=-1), axis=-2)
