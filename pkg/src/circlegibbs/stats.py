"""Statistical helpers shared by the estimator modules.

Weighted empirical CDF distances with permutation-calibrated critical
values, survival curves with normal-approximation bands, exponential
envelope fits on log survival, and the power-law extrapolation used for
shrinking-window sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def effective_sample_size(weights: np.ndarray) -> float:
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if total <= 0:
        return 0.0
    return float(total ** 2 / np.sum(w ** 2))


def weighted_ks_distance(x1, w1, x2, w2) -> float:
    """sup |F1 - F2| between weighted empirical CDFs (ties handled jointly)."""
    x1 = np.asarray(x1, float)
    x2 = np.asarray(x2, float)
    w1 = np.asarray(w1, float) / np.sum(w1)
    w2 = np.asarray(w2, float) / np.sum(w2)
    vals = np.concatenate([x1, x2])
    steps = np.concatenate([w1, -w2])
    order = np.argsort(vals, kind="mergesort")
    vals = vals[order]
    gap = np.cumsum(steps[order])
    # a pooled point is a valid evaluation point only after its full tie run
    last_of_run = np.empty(vals.size, dtype=bool)
    last_of_run[:-1] = vals[1:] != vals[:-1]
    last_of_run[-1] = True
    return float(np.max(np.abs(gap[last_of_run])))


@dataclass(frozen=True)
class PairedKsResult:
    distance: float
    critical_value: float
    passed: bool
    alpha: float
    permutations: int


def paired_permutation_ks(
    values_start: np.ndarray,
    values_end: np.ndarray,
    weights: np.ndarray,
    *,
    permutations: int = 1000,
    alpha: float = 0.01,
    seed: int = 0,
) -> PairedKsResult:
    """Weighted two-sample KS for paired samples sharing one weight vector.

    The null distribution is built by swapping the two values inside a
    random subset of pairs, which preserves the pooled multiset: a single
    global sort then serves every permutation.
    """
    v0 = np.asarray(values_start, float)
    v1 = np.asarray(values_end, float)
    w = np.asarray(weights, float)
    w = w / w.sum()
    n = v0.size
    vals = np.concatenate([v0, v1])
    pair = np.concatenate([np.arange(n), np.arange(n)])
    sign = np.concatenate([np.ones(n), -np.ones(n)])
    order = np.argsort(vals, kind="mergesort")
    vals_s = vals[order]
    base = (w[pair] * sign)[order]
    pair_s = pair[order]
    last = np.empty(vals_s.size, dtype=bool)
    last[:-1] = vals_s[1:] != vals_s[:-1]
    last[-1] = True

    observed = float(np.max(np.abs(np.cumsum(base)[last])))

    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0x9e3779b9], dtype=np.uint64)))
    flips = rng.integers(0, 2, size=(permutations, n)).astype(float) * -2.0 + 1.0
    contrib = flips[:, pair_s] * base[None, :]
    dists = np.max(np.abs(np.cumsum(contrib, axis=1)[:, last]), axis=1)
    crit = float(np.quantile(dists, 1.0 - alpha))
    return PairedKsResult(
        distance=observed,
        critical_value=crit,
        passed=observed <= crit,
        alpha=alpha,
        permutations=permutations,
    )


@dataclass(frozen=True)
class SurvivalPoint:
    threshold: float
    probability: float
    std_error: float
    exceedances: int


def survival_curve(values: np.ndarray, thresholds) -> list[SurvivalPoint]:
    """Empirical survival P(V >= thr) with binomial standard errors."""
    v = np.asarray(values, float)
    n = v.size
    out = []
    for thr in np.asarray(thresholds, float):
        k = int(np.count_nonzero(v >= thr))
        p = k / n
        se = np.sqrt(max(p * (1.0 - p), 1.0 / n) / n)
        out.append(SurvivalPoint(float(thr), p, float(se), k))
    return out


@dataclass(frozen=True)
class EnvelopeFit:
    """log P = log_c - rate * x fit over usable survival points."""

    rate: float
    log_c: float
    r_squared: float
    n_points: int
    majorizing_log_c: float


def fit_log_survival(points: list[SurvivalPoint], x_of_threshold, min_events: int = 10) -> EnvelopeFit:
    """Weighted least squares of log survival against x(threshold).

    Points with fewer than min_events exceedances are excluded.  The
    majorizing constant shifts the fitted line up until every usable point
    lies on or below it.
    """
    usable = [p for p in points if p.exceedances >= min_events and p.probability < 1.0]
    if len(usable) < 3:
        from .gibbs import InsufficientTailEvents
        raise InsufficientTailEvents(
            f"only {len(usable)} thresholds with >= {min_events} exceedances")
    x = np.array([x_of_threshold(p.threshold) for p in usable])
    y = np.log([p.probability for p in usable])
    wts = np.array([p.exceedances for p in usable], dtype=float)
    wts /= wts.sum()
    xm = np.sum(wts * x)
    ym = np.sum(wts * y)
    sxx = np.sum(wts * (x - xm) ** 2)
    sxy = np.sum(wts * (x - xm) * (y - ym))
    slope = sxy / sxx
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    ss_tot = np.sum(wts * (y - ym) ** 2)
    r2 = 1.0 - np.sum(wts * resid ** 2) / ss_tot if ss_tot > 0 else 1.0
    return EnvelopeFit(
        rate=float(-slope),
        log_c=float(intercept),
        r_squared=float(r2),
        n_points=len(usable),
        majorizing_log_c=float(intercept + max(0.0, float(np.max(resid)))),
    )


@dataclass(frozen=True)
class PowerLawFit:
    limit: float
    limit_ci: float
    coefficient: float
    order: float


def power_law_extrapolate(eps: np.ndarray, means: np.ndarray, sigmas: np.ndarray,
                          orders=None, bootstrap: int = 400, seed: int = 7) -> PowerLawFit:
    """Fit mean(eps) = E0 + c * eps^q and report E0 with a bootstrap CI.

    q is scanned over a fixed grid (no reliable rate is known a priori);
    for each q the weighted linear fit in eps^q is closed form.
    """
    eps = np.asarray(eps, float)
    means = np.asarray(means, float)
    sigmas = np.maximum(np.asarray(sigmas, float), 1e-300)
    if orders is None:
        orders = np.linspace(0.5, 4.0, 36)

    def best_fit(y):
        best = None
        for q in orders:
            x = eps ** q
            w = 1.0 / sigmas ** 2
            sw = w.sum()
            xm = np.sum(w * x) / sw
            ym = np.sum(w * y) / sw
            sxx = np.sum(w * (x - xm) ** 2)
            if sxx <= 0:
                continue
            c = np.sum(w * (x - xm) * (y - ym)) / sxx
            e0 = ym - c * xm
            chi2 = np.sum(w * (y - e0 - c * x) ** 2)
            if best is None or chi2 < best[0]:
                best = (chi2, e0, c, q)
        return best

    chi2, e0, c, q = best_fit(means)
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0xb5297a4d], dtype=np.uint64)))
    boots = []
    for _ in range(bootstrap):
        y = means + sigmas * rng.standard_normal(means.size)
        boots.append(best_fit(y)[1])
    ci = float(2.6 * np.std(boots))  # ~99% normal band on the extrapolated value
    return PowerLawFit(limit=float(e0), limit_ci=ci, coefficient=float(c), order=float(q))


def bootstrap_mean_ci(values: np.ndarray, weights: np.ndarray | None = None,
                      n_boot: int = 500, alpha: float = 0.01, seed: int = 11) -> tuple[float, float]:
    """(weighted mean, half-width of the central 1-alpha bootstrap interval)."""
    v = np.asarray(values, float)
    w = np.ones(v.size) if weights is None else np.asarray(weights, float)
    w = w / w.sum()
    est = float(np.sum(w * v))
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0x2545f491], dtype=np.uint64)))
    idx = rng.integers(0, v.size, size=(n_boot, v.size))
    wv = w[idx]
    means = np.sum(wv * v[idx], axis=1) / np.sum(wv, axis=1)
    lo, hi = np.quantile(means, [alpha / 2, 1 - alpha / 2])
    return est, float(max(hi - est, est - lo))
