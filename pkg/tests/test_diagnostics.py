from __future__ import annotations

import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from padfusion import diagnostics as D
from padfusion.diagnostics import PairRecord
from padfusion.spectral import fd, naive_dft2, shift_half
from padfusion.tensor import ShapeError, Tensor


def pair(rgb, sar, mask=None, pid="p"):
    return PairRecord(Tensor(rgb), Tensor(sar), None if mask is None else Tensor(mask), pid)


# -- grayscale and per-pair maps


def test_grayscale_values():
    v = np.full((3, 2, 2), 0.4)
    assert np.allclose(D.to_grayscale(v).data, 0.4, atol=1e-15)
    red = np.zeros((3, 1, 1))
    red[0] = 1.0
    assert D.to_grayscale(red).data.item() == pytest.approx(0.299, abs=1e-15)
    px = np.array([0.5, 1.0, 0.0]).reshape(3, 1, 1)
    assert D.to_grayscale(px).data.item() == pytest.approx(0.7365, abs=1e-15)
    with pytest.raises(ShapeError):
        D.to_grayscale(np.zeros((2, 2, 2)))


def test_rsd_examples():
    x = np.random.default_rng(0).uniform(size=(1, 4, 4))
    assert np.array_equal(D.rsd_pair(x, x).data, np.zeros_like(x))
    assert D.rsd_pair(np.full((1, 2, 2), 2.0), np.ones((1, 2, 2)), eps=1e-300).data[0, 0, 0] == 1.0
    z = D.rsd_pair(np.zeros((1, 2, 2)), np.zeros((1, 2, 2)))
    assert np.array_equal(z.data, np.zeros((1, 2, 2)))
    with pytest.raises(ValueError):
        D.rsd_pair(x, x, eps=0.0)


def test_rad_examples():
    x = np.random.default_rng(1).uniform(0.1, 1.0, size=(1, 8, 8))
    assert np.array_equal(D.rad_pair(x, x).data, np.zeros((1, 8, 5)))
    r = D.rad_pair(2 * x, x).data
    big = fd(Tensor(x)).amp.data > 1e-3
    assert np.max(np.abs(r[big] - 1.0)) < 1e-6


def test_rad_matches_naive_pipeline():
    rng = np.random.default_rng(2)
    s, g = rng.uniform(size=(6, 6)), rng.uniform(size=(6, 6))
    a_s = np.abs(shift_half(naive_dft2(s)).complex())
    a_g = np.abs(shift_half(naive_dft2(g)).complex())
    ref = np.abs(a_s - a_g) / (a_g + 1e-8)
    assert np.max(np.abs(D.rad_pair(s, g).data - ref)) < 1e-9


def test_appd_examples():
    x = np.random.default_rng(3).uniform(size=(1, 8, 8))
    assert np.array_equal(D.appd_pair(x, x).data, np.zeros((1, 8, 5)))
    assert D.appd_from_phases(np.array([2 * math.pi]), np.array([0.0]))[0] == pytest.approx(0.0, abs=1e-12)
    assert D.appd_from_phases(np.array([1.5 * math.pi]), np.array([0.0]))[0] == pytest.approx(
        math.pi / 2, abs=1e-12
    )
    assert D.appd_from_phases(np.array([math.pi]), np.array([0.0]))[0] == pytest.approx(math.pi, abs=1e-12)


def test_rsd_is_not_symmetric():
    rng = np.random.default_rng(4)
    a, b = rng.uniform(0.1, 1, size=(1, 4, 4)), rng.uniform(0.1, 1, size=(1, 4, 4))
    assert not np.allclose(D.rsd_pair(a, b).data, D.rsd_pair(b, a).data)
    assert not np.allclose(D.rad_pair(a, b).data, D.rad_pair(b, a).data)


phases = st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=20)


@given(phases, st.integers(0, 2**31 - 1))
def test_appd_range_symmetry_wrap(ps, seed):
    p = np.array(ps)
    q = np.random.default_rng(seed).uniform(-math.pi, math.pi, size=p.size)
    k = np.random.default_rng(seed + 1).integers(-3, 4, size=p.size)
    d = D.appd_from_phases(p, q)
    assert np.all((d >= 0) & (d <= math.pi))
    assert np.max(np.abs(d - D.appd_from_phases(q, p))) < 1e-12
    assert np.max(np.abs(d - D.appd_from_phases(p + 2 * math.pi * k, q))) < 1e-9


@given(st.integers(0, 2**31 - 1))
def test_appd_pair_symmetric_images(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(1, 6, 7)), rng.normal(size=(1, 6, 7))
    assert np.max(np.abs(D.appd_pair(a, b).data - D.appd_pair(b, a).data)) <= 1e-12


# -- aggregation and bands


def test_aggregate_examples():
    m = np.random.default_rng(5).normal(size=(1, 3, 3))
    assert np.array_equal(D.aggregate([m]).data, m)
    assert np.array_equal(D.aggregate([np.zeros((2, 2)), np.full((2, 2), 2.0)]).data, np.ones((2, 2)))
    with pytest.raises(ValueError):
        D.aggregate([])
    with pytest.raises(ShapeError):
        D.aggregate([np.zeros(2), np.zeros(3)])


@given(st.integers(0, 2**31 - 1), st.integers(1, 6))
def test_aggregate_matches_oracle_and_is_permutation_invariant(seed, k):
    rng = np.random.default_rng(seed)
    maps = [rng.normal(size=(3, 4)) for _ in range(k)]
    ref = np.zeros((3, 4))
    for m in reversed(maps):
        ref = ref + m
    ref /= k
    assert np.max(np.abs(D.aggregate(maps).data - ref)) < 1e-12
    perm = [maps[i] for i in rng.permutation(k)]
    assert np.max(np.abs(D.aggregate(perm).data - D.aggregate(maps).data)) < 1e-12


def test_band_partition_hand_enumeration():
    # 8x5 half spectrum, DC at row 4; distance normalized by hypot(4, 4)
    layout = ["HHHHH", "HHHHH", "LLLHH", "LLLHH", "LLLHH", "LLLHH", "LLLHH", "HHHHH"]
    values = np.arange(40, dtype=float).reshape(8, 5)
    lf, hf, every = D.band_partition(values, 0.5)
    flat = "".join(layout)
    assert np.array_equal(lf, values.ravel()[[c == "L" for c in flat]])
    assert np.array_equal(hf, values.ravel()[[c == "H" for c in flat]])
    assert every.size == 40


def test_band_partition_edges():
    values = np.arange(40, dtype=float).reshape(8, 5)
    lf, hf, _ = D.band_partition(values, 0.999999)
    assert hf.size <= 1
    for frac in (1e-6, 0.3, 0.9):
        lf, _, _ = D.band_partition(values, frac)
        assert values[4, 0] in lf
    with pytest.raises(ValueError):
        D.band_partition(values, 1.0)


def test_stat_block_behaviour():
    x = np.random.default_rng(6).normal(size=20_000)
    b = D.stat_block(x)
    assert b.n == 20_000 and 0 < b.shapiro_w <= 1 and b.shapiro_p > 0.01
    assert abs(b.skewness) < 0.05 and abs(b.excess_kurtosis) < 0.1
    with pytest.warns(RuntimeWarning):
        c = D.stat_block(np.ones(10))
    assert c.degenerate and c.shapiro_w is None
    with pytest.raises(ValueError):
        D.stat_block([1.0, 2.0])


# -- analyze


def synthetic_pairs(n=3, size=16, seed=7):
    rng = np.random.default_rng(seed)
    return [pair(rng.uniform(size=(3, size, size)), rng.uniform(size=(1, size, size)), pid=f"s{i}") for i in range(n)]


def test_analyze_matches_composition():
    pairs = synthetic_pairs()
    rep = D.analyze(pairs)
    rows = [D.pair_metrics(p) for p in pairs]
    for key in ("rsd", "rad", "appd"):
        ref = sum(getattr(r, key).data for r in rows) / len(rows)
        assert np.max(np.abs(getattr(rep, f"{key}_map").data - ref)) < 1e-12
    assert rep.pair_ids == ["s0", "s1", "s2"]
    assert np.all((rep.appd_map.data >= 0) & (rep.appd_map.data <= math.pi))
    assert rep.all_stats.n == rep.appd_map.size


def test_analyze_threads_bitwise_identical():
    pairs = synthetic_pairs(5)
    a, b = D.analyze(pairs), D.analyze(pairs, threads=4)
    for key in ("rsd_map", "rad_map", "appd_map"):
        assert getattr(a, key).data.tobytes() == getattr(b, key).data.tobytes()
    assert a.all_stats == b.all_stats


def test_radial_profile_rows():
    rows = D.radial_profile(D.analyze(synthetic_pairs()), bins=8)
    assert [r[0] for r in rows] == list(range(8))


# -- sweep


def test_sweep_rate_one_equals_report():
    pairs = synthetic_pairs(size=32)
    point = D.downsample_sweep(pairs, [1.0])[0]
    sc = D.analyze(pairs).scalars()
    assert point.factor == 1 and (point.rsd, point.rad, point.appd) == (sc["rsd"], sc["rad"], sc["appd"])


def test_sweep_constant_pairs_are_zero():
    c = np.full((3, 32, 32), 0.5)
    g = D.to_grayscale(c).data
    with pytest.warns(RuntimeWarning, match="constant sample"):
        pts = D.downsample_sweep([pair(c, g)], [1.0, 0.5, 0.25])
    for p in pts:
        assert p.rsd == (0.0, 0.0) and p.rad == (0.0, 0.0) and p.appd == (0.0, 0.0)


def test_sweep_matches_manual_recomputation():
    pairs = synthetic_pairs(2, 32)
    pts = D.downsample_sweep(pairs, [1.0, 0.5])
    rgb = [p.rgb.data for p in pairs]
    sar = [p.sar.data for p in pairs]
    for pt, k in zip(pts, (1, 2)):
        rows = []
        for r, s in zip(rgb, sar):
            r2 = r.reshape(3, 32 // k, k, 32 // k, k).mean(axis=(2, 4))
            s2 = s.reshape(1, 32 // k, k, 32 // k, k).mean(axis=(2, 4))
            rows.append(D.pair_metrics(pair(r2, s2)))
        rad = sum(r.rad.data for r in rows) / 2
        assert (pt.height, pt.width) == (32 // k, 32 // k)
        assert pt.rad[0] == pytest.approx(float(rad.mean()), abs=1e-12)
        appd = sum(r.appd.data for r in rows) / 2
        assert pt.appd[1] == pytest.approx(float(appd.var()), abs=1e-12)


def test_downsample_bounds():
    with pytest.raises(ValueError):
        D.downsample(np.zeros((1, 8, 8)), 0.25)
    with pytest.raises(ValueError):
        D.downsample(np.zeros((1, 8, 8)), 1.5)


# -- masked comparison


def masked_fixture(seed=8, size=16):
    rng = np.random.default_rng(seed)
    base = rng.uniform(size=(3, size, size))
    gray = D.to_grayscale(base).data
    sar = gray.copy()
    mask = np.ones((1, size, size))
    mask[..., :, size // 2 :] = 0.0
    sar[..., :, size // 2 :] = rng.uniform(size=(1, size, size - size // 2))
    return pair(base, sar, mask)


def test_masked_full_mask_is_identity():
    p = masked_fixture()
    p = PairRecord(p.rgb, p.sar, Tensor(np.ones((1, 16, 16))), "full")
    inc, exc = D.masked_diff(p)
    for key in ("rsd", "rad", "appd"):
        assert np.array_equal(getattr(inc, key).data, getattr(exc, key).data)


def test_masked_identical_inside_garbage_outside():
    inc, exc = D.masked_diff(masked_fixture())
    assert exc.means["appd"] < 1e-6
    assert inc.means["appd"] > 0.1


def test_masked_matches_manual_crop():
    p = masked_fixture()
    _, exc = D.masked_diff(p)
    crop = D.pair_metrics(pair(p.rgb.data[..., :, :8], p.sar.data[..., :, :8]))
    for key in ("rsd", "rad", "appd"):
        assert np.array_equal(getattr(exc, key).data, getattr(crop, key).data)


def test_largest_valid_rectangle():
    m = np.zeros((6, 6))
    m[1:5, 2:6] = 1
    assert D.largest_valid_rectangle(m) == (1, 5, 2, 6)
    m[1, 2] = 0
    r0, r1, c0, c1 = D.largest_valid_rectangle(m)
    assert (r1 - r0) * (c1 - c0) == 12 and m[r0:r1, c0:c1].all()
    with pytest.raises(ValueError):
        D.largest_valid_rectangle(np.zeros((3, 3)))


# -- ENL and correlation


def test_enl_constant_is_capped():
    out = D.enl_map(np.full((1, 12, 12), 0.3))
    assert np.all(out.data == D.ENL_CAP)


def test_enl_gamma_speckle():
    img = np.random.default_rng(9).gamma(4.0, 0.25, size=(128, 128))
    enl = D.enl_map(img, 9).data
    assert 3.5 <= enl[4:-4, 4:-4].mean() <= 4.5


def test_enl_checkerboard_windows():
    board = np.where((np.add.outer(np.arange(7), np.arange(7)) % 2) == 0, 1.0, 3.0)
    enl = D.enl_map(board, 3).data
    # interior 3x3 windows hold five of the centre value and four of the other
    assert enl[3, 3] == pytest.approx(289 / 80, abs=1e-12)
    assert enl[3, 4] == pytest.approx(361 / 80, abs=1e-12)
    with pytest.raises(ValueError):
        D.enl_map(board, 4)


def test_correlation_pair():
    a = np.random.default_rng(10).normal(size=30)
    r, rho = D.correlation(a, 2 * a + 1)
    assert r == pytest.approx(1.0, abs=1e-12) and rho == pytest.approx(1.0, abs=1e-12)


# -- manifests


def test_manifest_round_trip(tmp_path):
    pairs = synthetic_pairs(2, 8)
    pairs[1] = PairRecord(pairs[1].rgb, pairs[1].sar, Tensor(np.ones((1, 8, 8))), "s1")
    path = D.write_manifest(pairs, tmp_path)
    back = D.read_manifest(path)
    assert [p.id for p in back] == ["s0", "s1"]
    assert back[0].mask is None and back[1].mask is not None
    assert np.array_equal(back[0].rgb.data, pairs[0].rgb.data)


def test_pair_record_shape_check():
    with pytest.raises(ShapeError):
        pair(np.zeros((3, 4, 4)), np.zeros((1, 4, 5)))


def test_no_warning_on_regular_analyze():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        D.analyze(synthetic_pairs(2, 8))
