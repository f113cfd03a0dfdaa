"""Sampler contracts: bit determinism, Gaussian moments, mode independence."""

import numpy as np
import pytest
from scipy import stats

from circlegibbs.field import freq_weight_sq, mass
from circlegibbs.sampling import (SamplerConfig, StreamAllocator, gaussian_pairs,
                                  sample_loop_areas, sample_mass_momentum,
                                  sample_standard_bm_loop, sample_wiener)


def test_determinism_bitwise():
    cfg = SamplerConfig(cutoff=16, seed=42, stream_id=3)
    a = sample_wiener(cfg)
    b = sample_wiener(cfg)
    assert np.array_equal(a.coeffs, b.coeffs)


def test_draw_index_slicing_is_consistent():
    cfg = SamplerConfig(cutoff=9, seed=5, stream_id=1)
    block = sample_wiener(cfg, count=5)
    tail = sample_wiener(cfg, count=3, first_draw=2)
    for i in range(3):
        assert np.array_equal(block[2 + i].coeffs, tail[i].coeffs)


def test_streams_and_seeds_differ():
    base = sample_wiener(SamplerConfig(cutoff=8, seed=1, stream_id=0))
    other_stream = sample_wiener(SamplerConfig(cutoff=8, seed=1, stream_id=1))
    other_seed = sample_wiener(SamplerConfig(cutoff=8, seed=2, stream_id=0))
    assert not np.array_equal(base.coeffs, other_stream.coeffs)
    assert not np.array_equal(base.coeffs, other_seed.coeffs)


def test_wiener_second_moments():
    cfg = SamplerConfig(cutoff=24, seed=7, stream_id=0)
    g = gaussian_pairs(cfg, 40000)
    n = np.arange(-24, 25)
    second = np.mean(np.abs(g) ** 2, axis=0)
    # E|g_n|^2 = 2 within 5 sigma per mode (Var |g|^2 = 4)
    assert np.all(np.abs(second - 2.0) < 5 * 2.0 / np.sqrt(g.shape[0]))
    c = sample_wiener(cfg, count=2000)
    mat = np.stack([f.coeffs for f in c])
    emp = np.mean(np.abs(mat) ** 2, axis=0)
    oracle = 2.0 / freq_weight_sq(n)
    assert np.all(np.abs(emp - oracle) < 5 * 2.0 / freq_weight_sq(n) / np.sqrt(2000))
    assert np.all(np.abs(mat.mean(axis=0)) < 5 * np.sqrt(1.0 / freq_weight_sq(n) / 2000) * 2)


def test_mode_independence():
    cfg = SamplerConfig(cutoff=12, seed=19, stream_id=4)
    g = gaussian_pairs(cfg, 30000)
    re = g.real
    bound = 5.0 / np.sqrt(g.shape[0])
    corr = np.corrcoef(re[:, ::5].T)
    off = corr[~np.eye(corr.shape[0], dtype=bool)]
    assert np.max(np.abs(off)) < bound


def test_window_sum_is_chi_square():
    cfg = SamplerConfig(cutoff=20, seed=23, stream_id=0)
    g = gaussian_pairs(cfg, 8000)
    window_n = 6
    m = 6
    cols = (np.arange(-20, 21) >= m - window_n) & (np.arange(-20, 21) <= m + window_n)
    s = np.sum(np.abs(g[:, cols]) ** 2, axis=1)
    dof = 2 * (2 * window_n + 1)
    res = stats.kstest(s, lambda x: stats.chi2.cdf(x, dof))
    assert res.pvalue > 1e-3


def test_bm_loop_construction():
    f = sample_standard_bm_loop(64, seed=3, stream_id=5)
    assert f.coeff(0) == 0
    fields = sample_standard_bm_loop(64, seed=3, stream_id=5, count=4000)
    masses = np.array([mass(x) for x in fields])
    n = np.arange(1, 65)
    oracle = 2 * np.sum(2.0 / (2 * np.pi * n) ** 2)
    # limit over all modes is 1/6
    assert np.sum(2.0 / (2 * np.pi * np.arange(1, 100000)) ** 2) * 2 == pytest.approx(1 / 6, abs=1e-4)
    se = masses.std(ddof=1) / np.sqrt(masses.size)
    assert abs(masses.mean() - oracle) < 5 * se
    with pytest.raises(ValueError):
        sample_standard_bm_loop(0, seed=1)


def test_fast_mass_momentum_matches_field_law():
    x_fast, y_fast = sample_mass_momentum(SamplerConfig(cutoff=48, seed=31, stream_id=0), 6000)
    fields = sample_wiener(SamplerConfig(cutoff=48, seed=32, stream_id=1), count=6000)
    x_slow = np.array([mass(f) for f in fields])
    assert stats.ks_2samp(x_fast, x_slow).pvalue > 1e-3
    assert abs(y_fast.mean()) < 5 * y_fast.std() / np.sqrt(y_fast.size)


def test_loop_area_law_variance():
    areas = sample_loop_areas(256, seed=11, stream_id=2, count=60000)
    # series variance: sum 8/(2 pi n)^2 -> 1/3
    assert areas.var() == pytest.approx(1.0 / 3.0, rel=0.05)
    assert abs(areas.mean()) < 5 * areas.std() / np.sqrt(areas.size)


def test_stream_allocator_never_reuses():
    alloc = StreamAllocator(seed=9)
    seen = {alloc.next_config(4).stream_id for _ in range(100)}
    assert len(seen) == 100


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(cutoff=-1, seed=0)
    with pytest.raises(ValueError):
        SamplerConfig(cutoff=1, seed=-2)
