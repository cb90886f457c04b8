from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from padfusion import fft as F
from padfusion.spectral import (
    AmpPhase,
    HalfSpectrum,
    fd,
    fr,
    imaginary_residual,
    irfft2,
    naive_dft2,
    radial_distance,
    rfft2,
    shift_half,
    unshift_half,
)
from padfusion.tensor import ShapeError, Tensor


def dft_oracle(x: np.ndarray) -> np.ndarray:
    """Direct double sum over pixels, independent of the library code."""
    h, w = x.shape
    ys, xs = np.mgrid[0:h, 0:w]
    out = np.empty((h, w // 2 + 1), dtype=complex)
    for v in range(h):
        for u in range(w // 2 + 1):
            out[v, u] = np.sum(x * np.exp(-2j * np.pi * (v * ys / h + u * xs / w)))
    return out


def test_fft_matches_numpy_for_awkward_lengths():
    rng = np.random.default_rng(0)
    for n in (1, 2, 3, 5, 7, 8, 12, 17, 64, 100):
        a = rng.normal(size=n) + 1j * rng.normal(size=n)
        assert np.max(np.abs(F.fft(a) - np.fft.fft(a))) < 1e-9 * n
        assert np.max(np.abs(F.ifft(F.fft(a)) - a)) < 1e-12 * n


def test_rfft2_constant_image():
    c, h, w = 2.5, 6, 4
    s = rfft2(Tensor(np.full((h, w), c))).complex()
    assert abs(s[0, 0] - c * h * w) < 1e-9
    s[0, 0] = 0
    assert np.max(np.abs(s)) < 1e-9


def test_rfft2_single_cosine():
    h, w = 4, 8
    x = np.cos(2 * np.pi * np.arange(w) / w)[None, :].repeat(h, axis=0)
    s = rfft2(Tensor(x)).complex()
    assert abs(s[0, 1] - h * w / 2) < 1e-9
    s[0, 1] = 0
    assert np.max(np.abs(s)) < 1e-9


@pytest.mark.parametrize("shape", [(8, 8), (8, 6), (7, 5), (4, 4), (16, 16), (3, 9)])
def test_rfft2_matches_oracles(shape):
    x = np.random.default_rng(1).normal(size=shape)
    fast = rfft2(Tensor(x)).complex()
    assert np.max(np.abs(fast - naive_dft2(x).complex())) < 1e-9
    assert np.max(np.abs(fast - dft_oracle(x))) < 1e-9


def test_naive_dft2_impulse_constant_linearity():
    imp = np.zeros((4, 6))
    imp[0, 0] = 1.0
    assert np.allclose(naive_dft2(imp).complex(), 1.0, atol=1e-12)
    assert abs(naive_dft2(np.full((3, 4), 2.0)).complex()[0, 0] - 24.0) < 1e-12
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    lhs = naive_dft2(a + b).complex()
    rhs = naive_dft2(a).complex() + naive_dft2(b).complex()
    assert np.max(np.abs(lhs - rhs)) < 1e-12


def test_rfft2_batched_channels():
    x = np.random.default_rng(3).normal(size=(2, 3, 6, 5))
    s = rfft2(Tensor(x)).complex()
    assert s.shape == (2, 3, 6, 3)
    assert np.max(np.abs(s[1, 2] - dft_oracle(x[1, 2]))) < 1e-9


def test_degenerate_axes():
    with pytest.raises(ShapeError):
        rfft2(Tensor(np.ones((1, 4))))
    s = rfft2(Tensor(np.full((1, 1), 3.0)), allow_degenerate=True)
    assert s.complex()[0, 0] == 3.0


def test_shift_half_positions_and_inverse():
    x = np.random.default_rng(4).normal(size=(6, 6))
    s = rfft2(Tensor(x))
    sh = shift_half(s)
    assert sh.complex()[3, 0] == s.complex()[0, 0]
    assert np.array_equal(shift_half(sh).complex(), s.complex())
    for h in (5, 7):
        s = rfft2(Tensor(np.random.default_rng(h).normal(size=(h, 4))))
        back = unshift_half(shift_half(s))
        assert back.re.data.tobytes() == s.re.data.tobytes()
        assert back.im.data.tobytes() == s.im.data.tobytes()
        assert shift_half(s).complex()[h // 2, 0] == s.complex()[0, 0]


def test_fd_dc_phase_sign():
    ap = fd(Tensor(np.full((4, 4), 1.5)))
    assert ap.phase.data[2, 0] == 0.0
    neg = fd(Tensor(np.full((4, 4), -1.5)))
    assert neg.phase.data[2, 0] == -math.pi
    assert np.all(ap.amp.data >= 0)


def test_fd_recomposes_spectrum():
    x = np.random.default_rng(5).normal(size=(8, 8))
    ap = fd(Tensor(x))
    ref = shift_half(rfft2(Tensor(x))).complex()
    assert np.max(np.abs(ap.complex() - ref)) < 1e-12
    assert np.all((ap.phase.data >= -math.pi) & (ap.phase.data < math.pi))


def test_fr_inverts_fd():
    rng = np.random.default_rng(6)
    for shape in [(16, 16), (4, 16, 16), (7, 5), (6, 9)]:
        x = rng.normal(size=shape)
        assert np.max(np.abs(fr(fd(Tensor(x))).data - x)) < 1e-9


def test_fr_amplitude_scaling_doubles_output():
    x = np.random.default_rng(7).normal(size=(8, 8))
    ap = fd(Tensor(x))
    out = fr(AmpPhase(ap.amp * 2.0, ap.phase, ap.full_width))
    assert np.max(np.abs(out.data - 2 * x)) < 1e-9


@pytest.mark.parametrize("shape,s", [((8, 8), 3), ((6, 10), 2), ((5, 7), 4)])
def test_circular_shift_theorem(shape, s):
    h, w = shape
    x = np.random.default_rng(8).normal(size=shape)
    ap = fd(Tensor(x))
    u = np.arange(w // 2 + 1)[None, :]
    shifted = ap.phase.data - 2 * np.pi * u * s / w
    out = fr(AmpPhase(ap.amp, Tensor(shifted), w))
    assert np.max(np.abs(out.data - np.roll(x, s, axis=1))) < 1e-9


def test_imaginary_residual_flags_asymmetric_edits():
    x = np.random.default_rng(9).normal(size=(8, 8))
    ap = fd(Tensor(x))
    assert imaginary_residual(ap) < 1e-12
    bent = AmpPhase(ap.amp, Tensor(ap.phase.data + 0.3), ap.full_width)
    assert imaginary_residual(bent) > 1e-6
    with pytest.warns(UserWarning):
        fr(bent)


def test_irfft2_inverts_rfft2():
    x = np.random.default_rng(10).normal(size=(3, 6, 7))
    assert np.max(np.abs(irfft2(rfft2(Tensor(x))).data - x)) < 1e-12


def test_radial_distance_corners():
    d = radial_distance(8, 5)
    assert d[4, 0] == 0.0
    assert d[0, 4] == pytest.approx(1.0)
    assert np.all((d >= 0) & (d <= 1))
    assert np.array_equal(radial_distance(1, 1), np.zeros((1, 1)))


# -- properties


shapes = st.tuples(st.integers(2, 9), st.integers(2, 9))


@given(shapes, st.integers(0, 2**31 - 1))
def test_parseval(shape, seed):
    h, w = shape
    x = np.random.default_rng(seed).normal(size=shape)
    s = np.abs(rfft2(Tensor(x)).complex()) ** 2
    weight = np.full(w // 2 + 1, 2.0)
    weight[0] = 1.0
    if w % 2 == 0:
        weight[-1] = 1.0
    energy = float((s * weight[None, :]).sum()) / (h * w)
    assert abs(energy - float((x * x).sum())) <= 1e-9 * max(1.0, float((x * x).sum()))


@given(shapes, st.integers(0, 2**31 - 1))
def test_round_trip_any_shape(shape, seed):
    x = np.random.default_rng(seed).normal(size=shape)
    assert np.max(np.abs(fr(fd(Tensor(x))).data - x)) < 1e-9


@given(shapes, st.integers(0, 2**31 - 1))
def test_fd_after_fr_is_identity(shape, seed):
    x = np.random.default_rng(seed).normal(size=shape)
    ap = fd(Tensor(x))
    again = fd(fr(ap))
    assert np.max(np.abs(again.amp.data - ap.amp.data)) < 1e-9
    big = ap.amp.data > 1e-6
    dphi = np.angle(np.exp(1j * (again.phase.data - ap.phase.data)))
    assert np.max(np.abs(dphi[big]), initial=0.0) < 1e-6


@given(shapes, st.integers(0, 2**31 - 1))
def test_full_spectrum_conjugate_symmetric(shape, seed):
    h, w = shape
    x = np.random.default_rng(seed).normal(size=shape)
    half = rfft2(Tensor(x)).complex()
    full = np.fft.fft2(x)
    assert np.max(np.abs(half - full[:, : w // 2 + 1])) < 1e-9
    v = (-np.arange(h)) % h
    assert np.max(np.abs(full[v][:, (-np.arange(w)) % w] - np.conj(full))) < 1e-9


@given(st.integers(0, 2**31 - 1))
def test_fr_fd_gradcheck(seed):
    from padfusion.tensor import gradcheck, tsum

    rng = np.random.default_rng(seed)
    x = Tensor(rng.normal(size=(5, 4)))
    r = Tensor(rng.normal(size=(5, 4)))
    if np.min(fd(x).amp.data) < 1e-6:
        return
    err = gradcheck(lambda a: tsum(fr(fd(a)) * r), [x], h=1e-6)
    assert err < 1e-6


def test_half_spectrum_metadata():
    s = rfft2(Tensor(np.zeros((6, 9))))
    assert isinstance(s, HalfSpectrum)
    assert (s.height, s.half_width, s.full_width) == (6, 5, 9)
