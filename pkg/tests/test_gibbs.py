"""Gibbs weights, partition estimates, and the tail machinery (including the
tilted estimator against its exact chi-square oracle)."""

import numpy as np
import pytest
from scipy.special import gammaincc

from circlegibbs.conditioning import ConditioningSpec, Ensemble, sample_conditioned
from circlegibbs.field import (FourierField, Nonlinearity, field_from_modes,
                               lp_integral, mass, zero_field)
from circlegibbs.gibbs import (DegenerateWeights, GibbsSpec, InsufficientTailEvents,
                               dyadic_decomposition, dyadic_sigmas,
                               estimate_partition, expectation_mu, gibbs_weight,
                               hs_tail_check, large_deviation_check,
                               low_mode_cutoff, tail_check)
from circlegibbs.sampling import SamplerConfig


@pytest.fixture(scope="module")
def ens_a1():
    return sample_conditioned(ConditioningSpec(1.0, 0.0, 0.2), 3000,
                              SamplerConfig(cutoff=96, seed=81, stream_id=0))


DEFOC4 = GibbsSpec(4.0, Nonlinearity.DEFOCUSING, 1.0, 0.0, 0.2)
FOC4 = GibbsSpec(4.0, Nonlinearity.FOCUSING, 1.0, 0.0, 0.2)


def test_spec_guards():
    with pytest.raises(ValueError):
        GibbsSpec(2.0, Nonlinearity.DEFOCUSING, 1.0, 0.0, 0.1)
    with pytest.raises(ValueError):
        GibbsSpec(7.0, Nonlinearity.FOCUSING, 1.0, 0.0, 0.1)
    with pytest.raises(ValueError):
        GibbsSpec(6.0, Nonlinearity.FOCUSING, 1.0, 0.0, 0.1)  # mass above the guard
    GibbsSpec(6.0, Nonlinearity.FOCUSING, 0.3, 0.0, 0.1)


def test_weight_examples():
    spec = GibbsSpec(4.0, Nonlinearity.FOCUSING, 1.0, 0.0, 0.2)
    assert gibbs_weight(zero_field(4), spec) == 1.0
    assert gibbs_weight(field_from_modes(2, {0: 1.0}), spec) == pytest.approx(np.exp(0.25), rel=1e-12)


def test_defocusing_weight_at_most_one(ens_a1):
    w = np.array([gibbs_weight(f, DEFOC4) for f in ens_a1.fields])
    assert np.all(w > 0) and np.all(w <= 1.0)


def test_partition_estimate_properties(ens_a1):
    part = estimate_partition(ens_a1, DEFOC4)
    assert 0 < part.z <= 1.0
    assert part.ci < 0.05 * part.z
    # permutation invariance up to float reassociation
    perm = np.random.default_rng(1).permutation(len(ens_a1))
    shuffled = Ensemble(tuple(ens_a1.fields[i] for i in perm),
                        ens_a1.weights[perm], ens_a1.spec, ens_a1.provenance)
    part2 = estimate_partition(shuffled, DEFOC4)
    assert abs(part2.z - part.z) < 1e-12 * part.z
    # split/merge consistency
    half = len(ens_a1) // 2
    za = estimate_partition(Ensemble(ens_a1.fields[:half], ens_a1.weights[:half],
                                     ens_a1.spec, ens_a1.provenance), DEFOC4).z
    zb = estimate_partition(Ensemble(ens_a1.fields[half:], ens_a1.weights[half:],
                                     ens_a1.spec, ens_a1.provenance), DEFOC4).z
    assert abs(0.5 * (za + zb) - part.z) < 1e-12 * part.z


def test_focusing_partition_finite_and_stable(ens_a1):
    part = estimate_partition(ens_a1, FOC4)
    assert np.isfinite(part.z) and part.z > 1.0
    half = estimate_partition(Ensemble(ens_a1.fields[:1500], ens_a1.weights[:1500],
                                       ens_a1.spec, ens_a1.provenance), FOC4)
    assert abs(half.z - part.z) < 3 * (half.ci + part.ci)


def test_partition_degenerate_weights(ens_a1):
    with pytest.raises(DegenerateWeights):
        estimate_partition(ens_a1, DEFOC4, min_ess=10 ** 7)


def test_expectation_self_normalization(ens_a1):
    one = expectation_mu(lambda f: 1.0, ens_a1, DEFOC4)
    assert one.value == 1.0
    m = expectation_mu(mass, ens_a1, DEFOC4)
    assert abs(m.value - 1.0) < 0.2


def test_spec_mismatch_rejected(ens_a1):
    bad = GibbsSpec(4.0, Nonlinearity.DEFOCUSING, 2.0, 0.0, 0.2)
    with pytest.raises(ValueError):
        estimate_partition(ens_a1, bad)


def test_tail_check_quartic(ens_a1):
    lam = np.geomspace(0.3, 0.6, 6)
    rep = tail_check(DEFOC4, lam, ens_a1, r2_floor=0.8)
    assert rep.envelope_exponent == pytest.approx(2.0)
    probs = [p.probability for p in rep.survival]
    assert all(b <= a for a, b in zip(probs, probs[1:]))
    assert rep.fit.rate > 0
    assert rep.fit.r_squared > 0.8
    assert rep.verdict


def test_tail_check_insufficient_events(ens_a1):
    with pytest.raises(InsufficientTailEvents):
        tail_check(DEFOC4, [2.0, 4.0, 8.0], ens_a1)


def test_hs_tail_check(ens_a1):
    rep = hs_tail_check(0.4, np.linspace(1.45, 1.75, 7), ens_a1, r2_floor=0.8)
    assert rep.fit.rate > 0 and rep.fit.r_squared > 0.8 and rep.verdict
    with pytest.raises(ValueError):
        hs_tail_check(0.6, [1.0, 2.0], ens_a1)


def test_large_deviation_unconditioned_matches_gamma_oracle():
    r_list = [5 * np.sqrt(4), 6 * np.sqrt(4)]
    rep = large_deviation_check(4, 4, r_list, None,
                                SamplerConfig(cutoff=32, seed=82, stream_id=0),
                                samples=40_000)
    for pt in rep.points:
        assert pt.oracle == pytest.approx(gammaincc(9, pt.r ** 2 / 2.0))
        assert abs(pt.survival - pt.oracle) < 4 * pt.rel_error * pt.survival
    assert rep.verdict


def test_large_deviation_conditioned_below_envelope():
    spec = ConditioningSpec(1.0, 0.0, 0.3)
    rep = large_deviation_check(4, 4, [10.0, 12.0], spec,
                                SamplerConfig(cutoff=64, seed=83, stream_id=0),
                                samples=60_000, plain_samples=60_000)
    assert rep.verdict
    assert rep.points[0].survival > 0
    # decay between the probed radii is much steeper than the envelope's 1/8
    drop = np.log(rep.points[0].survival) - np.log(max(rep.points[1].survival, 1e-300))
    assert drop > (12.0 ** 2 - 10.0 ** 2) / 8.0


def test_large_deviation_validation():
    cfg = SamplerConfig(cutoff=32, seed=84, stream_id=0)
    with pytest.raises(ValueError):
        large_deviation_check(4, 4, [5.0], None, cfg)     # R below 5 sqrt(N)
    with pytest.raises(ValueError):
        large_deviation_check(20, 4, [10.0], None, cfg)   # M/N outside [1/2, 2]


def test_dyadic_sigmas_normalized():
    assert dyadic_sigmas(4000, 0.1).sum() == pytest.approx(1.0, abs=1e-8)


def test_dyadic_low_mode_cutoff_guarantee():
    # bandwidth bound: any field with mass <= K and cutoff <= M0 satisfies
    # the low-mode budget, by construction of M0
    p, lam, k_mass = 4.0, 6.0, 2.0
    m0 = low_mode_cutoff(p, lam, k_mass)
    rng = np.random.default_rng(5)
    for _ in range(20):
        c = rng.normal(size=2 * m0 + 1) + 1j * rng.normal(size=2 * m0 + 1)
        c *= np.sqrt(k_mass / np.sum(np.abs(c) ** 2))
        f = FourierField(m0, c)
        assert lp_integral(f, p) <= 0.5 * p * lam + 1e-9


def test_dyadic_no_flags_for_smooth_field():
    diag = dyadic_decomposition(field_from_modes(3, {1: 0.5}), 4.0, 2.0, 1.0)
    assert not diag.any_flag
    assert diag.sigma_total == pytest.approx(1.0, abs=1e-6)


def test_dyadic_union_bound_theorem():
    # adversarial in-phase high-mode bump: the Lp integral blows past the
    # threshold and the decomposition must attribute it
    p, mass_a = 4.0, 1.0
    n_modes = 48
    amp = np.sqrt(2.0 * mass_a / n_modes)
    f = field_from_modes(160, {n: amp for n in range(100, 100 + n_modes)})
    assert mass(f) <= 2 * mass_a + 1e-12
    lam = lp_integral(f, p) / p / 1.5
    assert lam > 1
    diag = dyadic_decomposition(f, p, lam, mass_a)
    assert diag.any_flag


def test_dyadic_contrapositive_on_conditioned_fields(ens_a1):
    # when nothing is flagged, the Lp integral must respect the budget
    lam = 1.05
    for f in ens_a1.fields[:200]:
        diag = dyadic_decomposition(f, 4.0, lam, 1.0)
        if not diag.any_flag:
            assert lp_integral(f, 4.0) <= 4.0 * lam + 1e-9


def test_tail_report_monotonicity_validation(ens_a1):
    rep = tail_check(DEFOC4, np.geomspace(0.3, 0.55, 5), ens_a1, r2_floor=0.5)
    probs = [p.probability for p in rep.survival]
    assert probs == sorted(probs, reverse=True)
