"""Spectral-validation tests: window shape, DFT identities and the direct
oracle, deviation-pair properties, region calibration, and delay-line
content preservation."""

import math

import numpy as np
import pytest

from sppnet import omegaval as ov

from oracles import (
    gaussian_window_mp,
    quantile_sorted,
    spectral_deviation_direct,
    windowed_dft_direct,
)

# frozen from tests/oracles.py (mpmath formula evaluation)
GAUSS_W8_S05 = [
    0.1353352832366127,
    0.36044778859782106,
    0.69256932420519779,
    0.96000544128547771,
    0.96000544128547771,
    0.69256932420519779,
    0.36044778859782106,
    0.1353352832366127,
]


# ---------------------------------------------------------------------------
# gaussian window
# ---------------------------------------------------------------------------


def test_window_center_peak_odd_length():
    for n in (5, 9, 33):
        w = ov.gaussian_window(n, 0.4)
        assert w[(n - 1) // 2] == 1.0
        assert np.all(w <= 1.0)


def test_window_symmetry():
    for n in (4, 7, 16, 31):
        w = ov.gaussian_window(n, 0.6)
        assert np.allclose(w, w[::-1], rtol=0, atol=0)


def test_window_matches_extended_precision_formula():
    w = ov.gaussian_window(8, 0.5)
    assert np.allclose(w, GAUSS_W8_S05, rtol=1e-15, atol=0)
    live = gaussian_window_mp(8, 0.5)
    assert np.allclose(live, GAUSS_W8_S05, rtol=0, atol=0)


def test_window_rejects_bad_parameters():
    with pytest.raises(ov.ValidationError):
        ov.gaussian_window(3, 0.5)
    with pytest.raises(ov.ValidationError):
        ov.gaussian_window(8, 0.0)
    with pytest.raises(ov.ValidationError):
        ov.gaussian_window(8, 1.5)


# ---------------------------------------------------------------------------
# windowed transform
# ---------------------------------------------------------------------------


def test_constant_signal_energy_in_dc_bin():
    spec = np.abs(ov.windowed_fft(np.ones(16), 1.0))
    assert spec[0] >= spec.max()


def test_parseval_identity():
    rng = np.random.default_rng(5)
    for n in (8, 16, 32, 12):
        seg = rng.normal(size=n)
        w = ov.gaussian_window(n, 0.7)
        spec = ov.windowed_fft(seg, 0.7)
        lhs = np.sum(np.abs(w * seg) ** 2)
        rhs = np.sum(np.abs(spec) ** 2) / n
        assert abs(lhs - rhs) < 1e-9 * max(1.0, lhs)


def test_windowed_fft_matches_direct_oracle():
    rng = np.random.default_rng(6)
    seg = rng.normal(size=16)
    spec = ov.windowed_fft(seg, 0.5)
    ref = windowed_dft_direct(seg.tolist(), 0.5)
    assert np.allclose(spec, ref, atol=1e-9)


def test_fft_and_direct_paths_agree_on_power_of_two():
    rng = np.random.default_rng(7)
    for n in (8, 16, 32):
        seg = rng.normal(size=n)
        via_fft = ov.windowed_fft(seg, 0.6)
        direct = ov._dft_matrix(n) @ (ov.gaussian_window(n, 0.6) * seg).astype(complex)
        assert np.allclose(via_fft, direct, atol=1e-9)


def test_non_power_of_two_uses_direct_path():
    rng = np.random.default_rng(8)
    seg = rng.normal(size=12)
    spec = ov.windowed_fft(seg, 0.5)
    ref = windowed_dft_direct(seg.tolist(), 0.5)
    assert np.allclose(spec, ref, atol=1e-9)


# ---------------------------------------------------------------------------
# deviation pair
# ---------------------------------------------------------------------------


def test_identical_segments_zero_deviation():
    rng = np.random.default_rng(9)
    seg = rng.normal(size=16)
    stats = ov.compute_deviation(seg, seg.copy(), 0.5)
    assert stats.max_deviation == 0.0
    assert stats.min_deviation == 0.0


def test_max_ge_min_on_random_pairs():
    rng = np.random.default_rng(10)
    for _ in range(200):
        n = int(rng.integers(4, 40))
        a = rng.normal(size=n)
        b = rng.normal(size=n)
        s = ov.compute_deviation(a, b, float(rng.uniform(0.05, 1.0)))
        assert s.max_deviation >= s.min_deviation >= 0.0


def test_impulse_vs_zero_constant_spectrum_magnitude():
    # impulse at index j: |spectrum_k| = w[j] for every bin, so max == min
    n = 9
    j = 4  # window centre, weight exactly 1
    impulse = np.zeros(n)
    impulse[j] = 1.0
    stats = ov.compute_deviation(np.zeros(n), impulse, 0.5)
    w = ov.gaussian_window(n, 0.5)
    assert stats.max_deviation == pytest.approx(w[j], rel=1e-12)
    assert stats.min_deviation == pytest.approx(w[j], rel=1e-12)
    ref_max, ref_min = spectral_deviation_direct([0.0] * n, impulse.tolist(), 0.5)
    assert stats.max_deviation == pytest.approx(ref_max, rel=1e-10)
    assert stats.min_deviation == pytest.approx(ref_min, rel=1e-10)


def test_deviation_scales_linearly():
    rng = np.random.default_rng(11)
    a = rng.normal(size=16)
    b = rng.normal(size=16)
    base = ov.compute_deviation(a, b, 0.5)
    scaled = ov.compute_deviation(3.5 * a, 3.5 * b, 0.5)
    assert scaled.max_deviation == pytest.approx(3.5 * base.max_deviation, rel=1e-12)
    assert scaled.min_deviation == pytest.approx(3.5 * base.min_deviation, rel=1e-12)


def test_deviation_rejects_length_mismatch():
    with pytest.raises(ov.ValidationError):
        ov.compute_deviation(np.zeros(8), np.zeros(9), 0.5)


# ---------------------------------------------------------------------------
# region + calibration
# ---------------------------------------------------------------------------


def test_zero_pair_always_accepted():
    region = ov.AcceptanceRegion(1e-6, 1e-9)
    assert ov.validate(ov.ValidationStats(0.0, 0.0), region)


def test_max_threshold_rejects_regardless_of_min():
    region = ov.AcceptanceRegion(1.0, 0.5)
    assert not ov.validate(ov.ValidationStats(1.5, 0.0), region)
    assert not ov.validate(ov.ValidationStats(1.5, 2.0), region)


def test_uncalibrated_region_errors():
    with pytest.raises(ov.ValidationError):
        ov.validate(ov.ValidationStats(0.0, 0.0), None)


def test_region_invariant():
    with pytest.raises(ov.ValidationError):
        ov.AcceptanceRegion(0.1, 0.5)
    with pytest.raises(ov.ValidationError):
        ov.AcceptanceRegion(0.5, -0.1)


def test_calibrate_degenerate_history():
    stats = [ov.ValidationStats(0.3, 0.1)] * 5
    region = ov.calibrate_region(stats, 0.75)
    assert region.theta_max == pytest.approx(0.3)
    assert region.theta_min == pytest.approx(0.1)


def test_calibrate_full_percentile_accepts_all_history():
    rng = np.random.default_rng(12)
    stats = []
    for _ in range(50):
        lo, hi = np.sort(rng.uniform(0, 2, size=2))
        stats.append(ov.ValidationStats(float(hi), float(lo)))
    region = ov.calibrate_region(stats, 1.0)
    assert all(region.contains(s) for s in stats)


def test_calibrate_matches_sort_oracle():
    rng = np.random.default_rng(13)
    stats = []
    for _ in range(100):
        lo, hi = np.sort(rng.uniform(0, 5, size=2))
        stats.append(ov.ValidationStats(float(hi), float(lo)))
    region = ov.calibrate_region(stats, 0.75)
    assert region.theta_max == pytest.approx(
        quantile_sorted([s.max_deviation for s in stats], 0.75), rel=1e-12
    )
    assert region.theta_min == pytest.approx(
        quantile_sorted([s.min_deviation for s in stats], 0.75), rel=1e-12
    )


def test_calibrate_rejects_empty():
    with pytest.raises(ov.ValidationError):
        ov.calibrate_region([], 0.9)


# ---------------------------------------------------------------------------
# delay line
# ---------------------------------------------------------------------------


def test_delay_line_ordering_and_last():
    line = ov.DelayLine(4)
    for i in range(3):
        line.append(float(i), float(10 + i))
    pred, train = line.last(3)
    assert np.array_equal(pred, [0.0, 1.0, 2.0])
    assert np.array_equal(train, [10.0, 11.0, 12.0])


def test_delay_line_overwrites_oldest_at_capacity():
    line = ov.DelayLine(3)
    for i in range(5):
        line.append(float(i), 0.0)
    pred, _ = line.last(3)
    assert np.array_equal(pred, [2.0, 3.0, 4.0])
    assert len(line) == 3


def test_delay_line_not_ready():
    line = ov.DelayLine(8)
    line.append(1.0, 1.0)
    with pytest.raises(ov.NotReady):
        line.last(2)


def test_delay_line_resize_preserves_content():
    line = ov.DelayLine(4)
    for i in range(6):  # wraps around
        line.append(float(i), float(-i))
    before = line.last(4)
    line.resize(10)
    after = line.last(4)
    assert np.array_equal(before[0], after[0])
    assert np.array_equal(before[1], after[1])
    line.append(99.0, -99.0)
    pred, _ = line.last(5)
    assert pred[-1] == 99.0 and pred[0] == 2.0


def test_delay_line_refuses_lossy_shrink():
    line = ov.DelayLine(4)
    for i in range(4):
        line.append(float(i), 0.0)
    with pytest.raises(ov.ValidationError):
        line.resize(2)


# ---------------------------------------------------------------------------
# stateful validator
# ---------------------------------------------------------------------------


def _drive(validator, epoch, n, scale=1.0, rng=None):
    rng = rng or np.random.default_rng(0)
    records = []
    for tau in range(n):
        target = math.sin(0.3 * tau)
        pred = target + scale * rng.normal()
        records.append(validator.observe(epoch, tau, pred, target, 0.5))
    return records


def test_warmup_accepts_everything_and_calibrates():
    v = ov.OmegaValidator(window=8, warmup_epochs=1, percentile=0.9)
    recs = _drive(v, epoch=1, n=30, scale=0.1)
    assert all(r.accepted for r in recs)
    assert v.region is None
    v.end_epoch(1)
    assert v.region is not None


def test_post_warmup_gates_on_region():
    rng = np.random.default_rng(4)
    v = ov.OmegaValidator(window=8, warmup_epochs=1, percentile=0.5)
    _drive(v, epoch=1, n=40, scale=0.1, rng=rng)
    v.end_epoch(1)
    good = _drive(v, epoch=2, n=40, scale=0.001, rng=rng)
    bad = _drive(v, epoch=3, n=40, scale=5.0, rng=rng)
    good_rate = np.mean([r.accepted for r in good])
    bad_rate = np.mean([r.accepted for r in bad])
    assert good_rate > bad_rate


def test_trace_pass_rate_matches_offline_recount():
    rng = np.random.default_rng(14)
    v = ov.OmegaValidator(window=8, warmup_epochs=1, percentile=0.7)
    _drive(v, epoch=1, n=50, scale=0.2, rng=rng)
    v.end_epoch(1)
    recs = _drive(v, epoch=2, n=50, scale=0.2, rng=rng)
    rate = np.mean([r.accepted for r in recs])
    rows = v.trace_rows()
    assert rows[0] == "epoch,tau,delta_tau,sigma,M,m,accepted"
    recount = [int(r.split(",")[-1]) for r in rows[1:] if r.split(",")[0] == "2"]
    assert np.mean(recount) == rate


def test_peak_width_fraction_range_and_dc_signal():
    sig = np.ones(64)
    frac = ov.dominant_peak_width_fraction(sig)
    assert 0.0 < frac <= 1.0
    rng = np.random.default_rng(15)
    noisy = rng.normal(size=101)
    assert 0.0 < ov.dominant_peak_width_fraction(noisy) <= 1.0
