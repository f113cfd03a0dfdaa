"""Field observables against independent oracles (Parseval sums, analytic
single-mode values, and the closed modal form of the discrete loop area)."""

import numpy as np
import pytest

from circlegibbs.field import (AreaRule, FourierField, Nonlinearity,
                               QuadratureOverflow, field_from_modes, hamiltonian,
                               hs_norm, levy_area_discrete, lp_integral, mass,
                               momentum, observables, zero_field)
from circlegibbs.sampling import SamplerConfig, sample_wiener

TWO_PI = 2.0 * np.pi


def random_field(cutoff, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=2 * cutoff + 1) + 1j * rng.normal(size=2 * cutoff + 1)
    return FourierField(cutoff, scale * c / np.sqrt(1 + (TWO_PI * np.arange(-cutoff, cutoff + 1)) ** 2))


def modal_area(field, k, rule):
    """Closed form of the discrete loop-area sum, valid for k > 2*cutoff."""
    n = field.mode_numbers
    m2 = np.abs(field.coeffs) ** 2
    if rule is AreaRule.MIDPOINT:
        return float(np.sum(m2 * 2 * k * np.sin(np.pi * n / k)))
    return float(np.sum(m2 * k * np.sin(TWO_PI * n / k)))


def test_mass_examples():
    assert mass(zero_field(8)) == 0.0
    assert mass(field_from_modes(4, {0: 3.0})) == pytest.approx(9.0, abs=0)


def test_mass_wiener_mean_matches_cotangent_series():
    # oracle: sum over modes of 2/(1+4 pi^2 n^2) -> coth(1/2); finite-cutoff
    # value is the full sum minus the tail partial sum
    cutoff = 512
    n = np.arange(1, cutoff + 1)
    truncated = 2.0 + 2 * np.sum(2.0 / (1 + 4 * np.pi ** 2 * n ** 2))
    coth_half = np.cosh(0.5) / np.sinh(0.5)
    lim = 200_000
    tail = 2 * (np.sum(2.0 / (1 + 4 * np.pi ** 2 * np.arange(cutoff + 1, lim) ** 2))
                + 1.0 / (2 * np.pi ** 2 * lim))  # integral remainder past the partial sum
    assert truncated == pytest.approx(coth_half - tail, abs=1e-9)

    fields = sample_wiener(SamplerConfig(cutoff=cutoff, seed=101, stream_id=0), count=4000)
    masses = np.array([mass(f) for f in fields])
    se = masses.std(ddof=1) / np.sqrt(masses.size)
    assert abs(masses.mean() - truncated) < 5 * se


def test_momentum_examples():
    assert momentum(zero_field(6)) == 0.0
    f = field_from_modes(5, {3: 1 + 2j, -3: np.sqrt(5.0)})  # equal moduli
    assert momentum(f) == pytest.approx(0.0, abs=1e-12)


def test_momentum_wiener_moments():
    cutoff = 64
    fields = sample_wiener(SamplerConfig(cutoff=cutoff, seed=55, stream_id=2), count=20000)
    moms = np.array([momentum(f) for f in fields])
    n = np.arange(1, cutoff + 1)
    var_oracle = np.sum(2 * (TWO_PI * n) ** 2 * 4.0 / (1 + 4 * np.pi ** 2 * n ** 2) ** 2)
    assert abs(moms.mean()) < 5 * np.sqrt(var_oracle / moms.size)
    assert moms.var() == pytest.approx(var_oracle, rel=0.1)


def test_momentum_index_reversal_is_exact_negation():
    f = random_field(37, seed=3)
    assert momentum(f.index_reversed()) == -momentum(f)


def test_scaling_invariants():
    f = random_field(21, seed=9)
    alpha = 0.7 - 1.3j
    assert mass(f.scaled(alpha)) == pytest.approx(abs(alpha) ** 2 * mass(f), rel=1e-14)
    assert momentum(f.scaled(alpha)) == pytest.approx(abs(alpha) ** 2 * momentum(f), rel=1e-13, abs=1e-15)


def test_parseval_spectral_vs_quadrature():
    for seed in range(4):
        f = random_field(48, seed=seed)
        quad = lp_integral(f, 2.0)
        assert abs(mass(f) - quad) <= 1e-10 * max(1.0, mass(f))


def test_hamiltonian_single_mode_oracle():
    f = field_from_modes(3, {1: 1.0})
    # |u| = 1 on the circle, so the quartic term integrates to 1
    assert hamiltonian(f, 4.0, Nonlinearity.DEFOCUSING) == pytest.approx(2 * np.pi ** 2 + 0.25, rel=1e-12)
    assert hamiltonian(f, 4.0, Nonlinearity.FOCUSING) == pytest.approx(2 * np.pi ** 2 - 0.25, rel=1e-12)
    assert hamiltonian(zero_field(3), 4.0, Nonlinearity.FOCUSING) == 0.0


def test_hamiltonian_overflow_guard():
    f = field_from_modes(2, {0: 1e200})
    with pytest.raises(QuadratureOverflow):
        hamiltonian(f, 4.0, Nonlinearity.DEFOCUSING)


def test_lp_integral_examples():
    assert lp_integral(zero_field(4), 3.0) == 0.0
    assert lp_integral(field_from_modes(2, {0: 2.0}), 6.0) == pytest.approx(64.0, rel=1e-13)
    f = field_from_modes(3, {1: 1.0, -1: 1.0})
    assert lp_integral(f, 2.0) == pytest.approx(mass(f), rel=1e-13)


def test_lp_integral_non_integer_p():
    f = random_field(16, seed=12)
    # p = 3.7 between alias-exact neighbours; value must sit between p=2 and p=6
    v = lp_integral(f, 3.7)
    assert np.isfinite(v) and v > 0


def test_hs_norm_examples():
    assert hs_norm(zero_field(5), 0.3) == 0.0
    f = random_field(17, seed=4)
    assert hs_norm(f, 0.0) == pytest.approx(np.sqrt(mass(f)), rel=1e-13)
    g = field_from_modes(2, {1: 1.0})
    assert hs_norm(g, 0.5) == pytest.approx((1 + 4 * np.pi ** 2) ** 0.25, rel=1e-13)
    with pytest.raises(ValueError):
        hs_norm(f, 1.0)


def test_levy_area_zero_and_circle():
    assert levy_area_discrete(zero_field(3), 64, AreaRule.LEFT_ENDPOINT) == 0.0
    f = field_from_modes(2, {1: 1.0})
    for rule in AreaRule:
        err = abs(levy_area_discrete(f, 2 ** 12, rule) - TWO_PI)
        assert err < 1e-5
    # the loop area of the unit circle equals the momentum
    assert momentum(f) == pytest.approx(TWO_PI)


def test_levy_area_matches_modal_closed_form():
    f = random_field(24, seed=31)
    for k in (128, 512):
        got_l = levy_area_discrete(f, k, AreaRule.LEFT_ENDPOINT)
        got_t = levy_area_discrete(f, k, AreaRule.TRAPEZOID)
        got_m = levy_area_discrete(f, k, AreaRule.MIDPOINT)
        assert got_l == pytest.approx(modal_area(f, k, AreaRule.LEFT_ENDPOINT), rel=1e-11, abs=1e-12)
        assert got_m == pytest.approx(modal_area(f, k, AreaRule.MIDPOINT), rel=1e-11, abs=1e-12)
        # for this antisymmetric integrand the trapezoid and left sums coincide
        assert got_t == pytest.approx(got_l, rel=1e-11, abs=1e-12)


def test_levy_area_converges_to_momentum_under_doubling():
    f = random_field(32, seed=77)
    target = momentum(f)
    for rule in (AreaRule.LEFT_ENDPOINT, AreaRule.MIDPOINT, AreaRule.TRAPEZOID):
        errs = [abs(levy_area_discrete(f, 2 ** k, rule) - target) for k in range(8, 13)]
        assert all(b < a for a, b in zip(errs, errs[1:]))


def test_rule_gap_shrinks_under_doubling():
    f = random_field(32, seed=78)
    gaps = [abs(levy_area_discrete(f, 2 ** k, AreaRule.LEFT_ENDPOINT)
                - levy_area_discrete(f, 2 ** k, AreaRule.MIDPOINT))
            for k in range(8, 13)]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))


def test_field_validation():
    with pytest.raises(ValueError):
        FourierField(2, np.ones(4, dtype=complex))
    with pytest.raises(ValueError):
        FourierField(2, np.array([1, 2, np.nan, 4, 5], dtype=complex))
    with pytest.raises(ValueError):
        FourierField(2, np.ones(5, dtype=complex), grid_size=7)
    f = zero_field(2)
    with pytest.raises(ValueError):
        f.coeffs[0] = 1.0  # immutable


def test_observable_record_validation():
    f = random_field(8, seed=1)
    rec = observables(f, p=4.0, sign=Nonlinearity.DEFOCUSING, s=0.25)
    assert rec.mass >= 0 and rec.lp_norm_p >= 0 and rec.hs_norm >= 0
    assert rec.mass == pytest.approx(mass(f))
