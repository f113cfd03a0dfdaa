"""Rejection-sampler contracts, window-probability scaling, the small-window
limit of low-mode statistics, and the shrinking-window extrapolation."""

import numpy as np
import pytest

from circlegibbs.conditioning import (BudgetExhausted, ConditioningSpec, Ensemble,
                                      MissingDensity, ModulusBox,
                                      acceptance_rate_estimate, epsilon_sweep,
                                      low_mode_marginal, sample_conditioned)
from circlegibbs.density import CharFnSpec, invert_density
from circlegibbs.field import mass, momentum
from circlegibbs.sampling import SamplerConfig


@pytest.fixture(scope="module")
def grid0():
    return invert_density(CharFnSpec(tail_start=0))


@pytest.fixture(scope="module")
def grid1():
    return invert_density(CharFnSpec(tail_start=1))


@pytest.fixture(scope="module")
def small_ensemble():
    return sample_conditioned(ConditioningSpec(1.0, 0.0, 0.25), 300,
                              SamplerConfig(cutoff=48, seed=61, stream_id=0))


def test_spec_validation():
    with pytest.raises(ValueError):
        ConditioningSpec(-1.0, 0.0, 0.1)
    with pytest.raises(ValueError):
        ConditioningSpec(1.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        ConditioningSpec(0.2, 0.0, 0.3)  # epsilon must not exceed the mass


def test_accepted_fields_satisfy_windows(small_ensemble):
    m, p = small_ensemble.mass_momentum()
    assert np.all(np.abs(m - 1.0) < 0.25)
    assert np.all(np.abs(p) < 0.25)
    assert small_ensemble.validate_conditioning()
    assert abs(small_ensemble.weights.sum() - 1.0) < 1e-12


def test_rate_scales_like_window_area():
    spec4 = ConditioningSpec(1.0, 0.0, 0.4)
    spec2 = ConditioningSpec(1.0, 0.0, 0.2)
    cfg = SamplerConfig(cutoff=64, seed=62, stream_id=0)
    r4, se4 = acceptance_rate_estimate(spec4, cfg, 200_000)
    r2, se2 = acceptance_rate_estimate(spec2, SamplerConfig(64, 62, 50), 200_000)
    ratio = r4 / r2
    assert abs(ratio / 4.0 - 1.0) < 0.15


def test_rate_matches_density_value(grid0):
    eps = 0.2
    rate, se = acceptance_rate_estimate(ConditioningSpec(1.0, 0.0, eps),
                                        SamplerConfig(cutoff=256, seed=63, stream_id=0),
                                        300_000)
    f_est = rate / (4 * eps ** 2)
    assert abs(f_est - grid0.value_at(1.0, 0.0)) < 0.1 * grid0.value_at(1.0, 0.0)


def test_stream_exchangeability():
    spec = ConditioningSpec(1.0, 0.0, 0.3)
    a = sample_conditioned(spec, 400, SamplerConfig(32, 64, 0))
    b = sample_conditioned(spec, 400, SamplerConfig(32, 64, 16))
    ma = a.observable_values(mass).mean()
    mb = b.observable_values(mass).mean()
    se = a.observable_values(mass).std() / np.sqrt(400)
    assert abs(ma - mb) < 6 * se


def test_budget_exhausted_and_fallback():
    spec = ConditioningSpec(1.0, 0.0, 0.01)
    cfg = SamplerConfig(cutoff=32, seed=65, stream_id=0)
    with pytest.raises(BudgetExhausted):
        sample_conditioned(spec, 100, cfg, max_attempts=2000)
    ens = sample_conditioned(spec, 100, cfg, max_attempts=2000, allow_fallback=True)
    assert ens.provenance["method"] == "reweight-fallback"
    assert ens.validate_conditioning()  # smoothed support is allowed
    m, _ = ens.mass_momentum()
    cell = ens.provenance["smoothing_cell"]
    assert np.all(np.abs(m - 1.0) < 0.01 + cell + 1e-12)


def test_workers_do_not_change_results():
    spec = ConditioningSpec(1.0, 0.0, 0.3)
    a = sample_conditioned(spec, 120, SamplerConfig(24, 66, 0), workers=1)
    b = sample_conditioned(spec, 120, SamplerConfig(24, 66, 0), workers=2)
    assert np.array_equal(a.coeff_matrix(), b.coeff_matrix())
    assert a.provenance["attempts"] == b.provenance["attempts"]


def test_ensemble_persistence_roundtrip(small_ensemble, tmp_path):
    path = tmp_path / "ens.bin"
    small_ensemble.save(path)
    back = Ensemble.load(path)
    assert np.array_equal(back.coeff_matrix(), small_ensemble.coeff_matrix())
    assert np.array_equal(back.weights, small_ensemble.weights)
    assert back.spec == small_ensemble.spec
    assert back.provenance == small_ensemble.provenance
    csv = tmp_path / "obs.csv"
    small_ensemble.observables_to_csv(csv)
    lines = csv.read_text().splitlines()
    assert len(lines) == len(small_ensemble) + 1
    assert lines[0].startswith("index,weight,mass,momentum")


def test_low_mode_marginal_total_probability(grid0, grid1):
    spec = ConditioningSpec(1.0, 0.0, 0.1)
    box = ModulusBox.everything(0)
    res = low_mode_marginal(spec, 0, box, grid1, grid0,
                            SamplerConfig(0, 67, 0), samples=400_000)
    assert abs(res.raw_mean - 1.0) < 3 * res.std_error
    assert res.std_error < 1e-2


def test_low_mode_marginal_vanishing_region(grid0, grid1):
    # |xi_0|^2 > a forces a negative shifted mass, where the density vanishes
    spec = ConditioningSpec(1.0, 0.0, 0.1)
    box = ModulusBox.single_mode(0, 0, np.sqrt(1.0), np.inf)
    res = low_mode_marginal(spec, 0, box, grid1, grid0,
                            SamplerConfig(0, 68, 0), samples=60_000)
    assert res.probability < 5e-3


def test_low_mode_marginal_brute_force_disc(grid0, grid1):
    spec = ConditioningSpec(1.0, 0.0, 0.1)
    r = 0.9
    box = ModulusBox.single_mode(0, 0, 0.0, r)
    res = low_mode_marginal(spec, 0, box, grid1, grid0,
                            SamplerConfig(0, 69, 0), samples=200_000)
    # quadrature over the complex plane of the same integrand
    x = np.linspace(-r, r, 401)
    xx, yy = np.meshgrid(x, x, indexing="ij")
    rho2 = xx ** 2 + yy ** 2
    inside = rho2 <= r * r
    f0 = grid0.value_at(1.0, 0.0)
    vals = grid1.interpolate(1.0 - rho2, np.zeros_like(rho2)) / f0
    dens = np.exp(-rho2 / 2.0) / (2 * np.pi)
    dx = x[1] - x[0]
    brute = float(np.sum(vals * dens * inside) * dx * dx)
    assert res.probability == pytest.approx(brute, abs=3e-3)


def test_low_mode_marginal_matches_rejection_histogram(grid0, grid1):
    spec = ConditioningSpec(1.0, 0.0, 0.05)
    ens = sample_conditioned(spec, 1500, SamplerConfig(cutoff=64, seed=70, stream_id=0))
    g0_sq = np.array([abs(f.coeff(0)) ** 2 for f in ens.fields])
    thr = np.quantile(g0_sq, 0.5)
    emp = float(np.mean(g0_sq <= thr))
    box = ModulusBox.single_mode(0, 0, 0.0, np.sqrt(thr))
    res = low_mode_marginal(spec, 0, box, grid1, grid0,
                            SamplerConfig(0, 71, 0), samples=150_000)
    se = np.sqrt(emp * (1 - emp) / len(ens))
    # window bias at eps=0.05 is O(eps); allow it on top of the MC band
    assert abs(res.probability - emp) < 3 * se + 0.05


def test_low_mode_marginal_requires_grids(grid0, grid1):
    spec = ConditioningSpec(1.0, 0.0, 0.1)
    box = ModulusBox.everything(0)
    with pytest.raises(MissingDensity):
        low_mode_marginal(spec, 0, box, None, grid0, SamplerConfig(0, 72, 0))
    with pytest.raises(MissingDensity):
        low_mode_marginal(spec, 0, box, grid0, grid0, SamplerConfig(0, 72, 0))


def test_epsilon_sweep_hits_targets():
    sweep = epsilon_sweep("mass", 1.0, 0.0, [0.4, 0.2, 0.1], 800,
                          SamplerConfig(cutoff=48, seed=73, stream_id=0))
    assert abs(sweep.extrapolated - 1.0) < max(3 * sweep.extrapolated_ci, 0.02)
    sweep_p = epsilon_sweep("momentum", 1.0, 0.0, [0.4, 0.2, 0.1], 800,
                            SamplerConfig(cutoff=48, seed=74, stream_id=0))
    assert abs(sweep_p.extrapolated) < max(3 * sweep_p.extrapolated_ci, 0.02)
    with pytest.raises(ValueError):
        epsilon_sweep("mass", 1.0, 0.0, [0.1, 0.2], 100,
                      SamplerConfig(cutoff=16, seed=75, stream_id=0))


def test_epsilon_sweep_quartic_observable_stable():
    sweep = epsilon_sweep("lp4_integral", 1.0, 0.0, [0.4, 0.2, 0.1], 600,
                          SamplerConfig(cutoff=48, seed=76, stream_id=0))
    means = [r.mean for r in sweep.rows]
    assert np.isfinite(sweep.extrapolated)
    assert abs(means[-1] - sweep.extrapolated) < 0.1 * abs(sweep.extrapolated)
