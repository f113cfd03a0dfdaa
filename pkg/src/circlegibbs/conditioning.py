"""Conditioned Wiener ensembles: rejection sampling on mass/momentum windows.

The conditioned measure restricts the base Wiener draw to
{ |mass - a| < eps, |momentum - b| < eps } and renormalizes.  Rejection
from the base sampler realizes exactly that; the small-window limit is
reached by extrapolating an epsilon sweep.  Low-mode statistics of the
limit measure are also available directly through the ratio of tail
densities at consecutive tail starts times the free Gaussian factor.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field as dc_field

import numpy as np

from .field import FourierField, TWO_PI, default_grid_size, freq_weight_sq
from .field import mass as field_mass, momentum as field_momentum
from .density import DensityGrid
from .sampling import SamplerConfig, gaussian_pairs
from .stats import power_law_extrapolate

MAGIC_ENSEMBLE = b"CGEN"
ENSEMBLE_VERSION = 1


class BudgetExhausted(Exception):
    """Rejection attempts exceeded the configured budget (window too small)."""


class MissingDensity(Exception):
    """A required precomputed density grid was not supplied."""


@dataclass(frozen=True)
class ConditioningSpec:
    """Centered conditioning windows (a - eps, a + eps) x (b - eps, b + eps)."""

    target_mass: float
    target_momentum: float
    epsilon: float

    def __post_init__(self):
        if self.target_mass <= 0:
            raise ValueError("target mass must be positive")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.epsilon > self.target_mass:
            raise ValueError("epsilon must not exceed the target mass")

    def mass_window(self) -> tuple[float, float]:
        return (self.target_mass - self.epsilon, self.target_mass + self.epsilon)

    def momentum_window(self) -> tuple[float, float]:
        return (self.target_momentum - self.epsilon, self.target_momentum + self.epsilon)

    def accepts(self, mass_vals, momentum_vals):
        mass_vals = np.asarray(mass_vals)
        momentum_vals = np.asarray(momentum_vals)
        return ((np.abs(mass_vals - self.target_mass) < self.epsilon)
                & (np.abs(momentum_vals - self.target_momentum) < self.epsilon))

    def as_dict(self) -> dict:
        return {"target_mass": self.target_mass,
                "target_momentum": self.target_momentum,
                "epsilon": self.epsilon}


def _mass_momentum_of_rows(g: np.ndarray, cutoff: int) -> tuple[np.ndarray, np.ndarray]:
    n = np.arange(-cutoff, cutoff + 1)
    w = 1.0 / freq_weight_sq(n)
    sq = np.abs(g) ** 2
    return sq @ w, sq @ (w * TWO_PI * n)


@dataclass(frozen=True)
class Ensemble:
    """A batch of fields with importance weights and full RNG provenance.

    weights sum to one.  For plain rejection output the weights are
    uniform and every stored field satisfies both window indicators; the
    reweighting fallback (provenance method 'reweight-fallback') instead
    stores fields from a one-cell smoothing of the indicators with the
    matching weights.
    """

    fields: tuple
    weights: np.ndarray
    spec: ConditioningSpec | None
    provenance: dict

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size != len(self.fields):
            raise ValueError("weights must match the field count")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        total = w.sum()
        if total <= 0:
            raise ValueError("weights must not all vanish")
        if abs(total - 1.0) > 1e-9:
            w = w / total
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "fields", tuple(self.fields))

    def __len__(self) -> int:
        return len(self.fields)

    @property
    def cutoff(self) -> int:
        return self.fields[0].cutoff

    def coeff_matrix(self) -> np.ndarray:
        return np.stack([f.coeffs for f in self.fields])

    def observable_values(self, fn) -> np.ndarray:
        return np.array([fn(f) for f in self.fields])

    def mass_momentum(self) -> tuple[np.ndarray, np.ndarray]:
        return (self.observable_values(field_mass), self.observable_values(field_momentum))

    def validate_conditioning(self) -> bool:
        """Re-run the window indicators on every stored field."""
        if self.spec is None:
            return True
        m, p = self.mass_momentum()
        ok = self.spec.accepts(m, p)
        if self.provenance.get("method") == "reweight-fallback":
            return True  # smoothed support is wider by construction
        return bool(np.all(ok))

    def save(self, path) -> None:
        header = {
            "count": len(self.fields),
            "cutoff": self.cutoff,
            "grid_size": self.fields[0].grid_size,
            "spec": self.spec.as_dict() if self.spec else None,
            "provenance": self.provenance,
        }
        blob = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(MAGIC_ENSEMBLE)
            fh.write(struct.pack("<II", ENSEMBLE_VERSION, len(blob)))
            fh.write(blob)
            fh.write(self.weights.astype("<f8").tobytes())
            fh.write(self.coeff_matrix().astype("<c16").tobytes())

    @classmethod
    def load(cls, path) -> "Ensemble":
        with open(path, "rb") as fh:
            if fh.read(4) != MAGIC_ENSEMBLE:
                raise ValueError("not an ensemble file")
            version, hlen = struct.unpack("<II", fh.read(8))
            if version != ENSEMBLE_VERSION:
                raise ValueError(f"unsupported version {version}")
            header = json.loads(fh.read(hlen).decode())
            count = header["count"]
            cutoff = header["cutoff"]
            w = np.frombuffer(fh.read(8 * count), dtype="<f8")
            modes = 2 * cutoff + 1
            c = np.frombuffer(fh.read(16 * count * modes), dtype="<c16").reshape(count, modes)
        spec = ConditioningSpec(**header["spec"]) if header["spec"] else None
        fields = [FourierField(cutoff, row, header["grid_size"]) for row in c]
        return cls(tuple(fields), w, spec, header["provenance"])

    def observables_to_csv(self, path, p: float = 4.0, s: float = 0.25) -> None:
        from .field import lp_integral, hs_norm
        m, mom = self.mass_momentum()
        with open(path, "w") as fh:
            fh.write(f"index,weight,mass,momentum,lp{p:g}_integral,hs{s:g}_norm\n")
            for i, f in enumerate(self.fields):
                fh.write(f"{i},{self.weights[i]:.12g},{m[i]:.12g},{mom[i]:.12g},"
                         f"{lp_integral(f, p):.12g},{hs_norm(f, s):.12g}\n")


def _rejection_chunk(spec: ConditioningSpec, quota: int, cfg: SamplerConfig,
                     budget: int, batch: int):
    """One reproducible rejection chunk: (accepted raw rows, attempts, hits)."""
    rows = []
    got = 0
    offset = 0
    hits = 0
    while got < quota:
        if offset >= budget:
            raise BudgetExhausted(
                f"stream {cfg.stream_id}: {offset} attempts for {got}/{quota} "
                f"acceptances; window eps={spec.epsilon} too small for rejection")
        m = min(batch, budget - offset)
        g = gaussian_pairs(cfg, m, first_draw=offset)
        mv, pv = _mass_momentum_of_rows(g, cfg.cutoff)
        ok = spec.accepts(mv, pv)
        take = np.nonzero(ok)[0][:quota - got]
        rows.extend(g[take])
        got += take.size
        offset += m
        hits += int(np.count_nonzero(ok))
    return rows, offset, hits


def sample_conditioned(
    spec: ConditioningSpec,
    count: int,
    sampler: SamplerConfig,
    *,
    max_attempts: int = 20_000_000,
    chunks: int = 16,
    batch: int = 8192,
    allow_fallback: bool = False,
    workers: int = 1,
) -> Ensemble:
    """Rejection sampling from the base Wiener measure until count acceptances.

    Work is split into a fixed number of chunks; chunk k draws from stream
    sampler.stream_id + k, so results are reproducible and independent of
    how many workers execute them.  Raises BudgetExhausted when a chunk
    uses up its share of max_attempts (callers can retry with
    allow_fallback=True, which switches to one-cell-smoothed indicator
    reweighting).  Full batches are always scanned, so hits/attempts is an
    unbiased window-probability estimate free of stopping bias.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    chunks = min(chunks, count)
    quotas = [count // chunks + (1 if k < count % chunks else 0) for k in range(chunks)]
    budget = max_attempts // chunks
    n = np.arange(-sampler.cutoff, sampler.cutoff + 1)
    scale = 1.0 / np.sqrt(freq_weight_sq(n))
    grid = default_grid_size(sampler.cutoff)
    jobs = [(spec, quota, SamplerConfig(sampler.cutoff, sampler.seed, sampler.stream_id + k),
             budget, batch) for k, quota in enumerate(quotas)]

    try:
        if workers > 1:
            from concurrent.futures import ProcessPoolExecutor
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(_rejection_chunk_star, jobs))
        else:
            results = [_rejection_chunk(*job) for job in jobs]
    except BudgetExhausted:
        if allow_fallback:
            return _reweighted_fallback(spec, count, sampler, chunks=chunks)
        raise

    rows = []
    attempts = 0
    hits = 0
    for chunk_rows, chunk_attempts, chunk_hits in results:
        rows.extend(row * scale for row in chunk_rows)
        attempts += chunk_attempts
        hits += chunk_hits
    fields = [FourierField(sampler.cutoff, row, grid) for row in rows]
    weights = np.full(count, 1.0 / count)
    prov = {
        "seed": int(sampler.seed),
        "stream_base": int(sampler.stream_id),
        "chunks": chunks,
        "attempts": int(attempts),
        "acceptance_rate": hits / attempts,
        "method": "rejection",
        "cutoff": sampler.cutoff,
    }
    return Ensemble(tuple(fields), weights, spec, prov)


def _rejection_chunk_star(job):
    return _rejection_chunk(*job)


def _reweighted_fallback(spec, count, sampler, *, chunks, cell_fraction=0.25,
                         max_proposals=2_000_000, batch=16384):
    """Unconditioned proposals weighted by one-cell-smoothed window indicators.

    The triangular smoothing extends each window by one cell, wide enough
    for tiny windows to collect support that plain rejection cannot afford.
    """
    cell = cell_fraction * spec.epsilon
    cfg = SamplerConfig(sampler.cutoff, sampler.seed, sampler.stream_id)
    n = np.arange(-sampler.cutoff, sampler.cutoff + 1)
    scale = 1.0 / np.sqrt(freq_weight_sq(n))
    min_support = max(20, count // 10)
    kept_rows, kept_w = [], []
    scanned = 0
    while scanned < max_proposals and len(kept_rows) < count:
        m = min(batch, max_proposals - scanned)
        g = gaussian_pairs(cfg, m, first_draw=scanned)
        mv, pv = _mass_momentum_of_rows(g, sampler.cutoff)
        wm = np.clip(1.0 - np.maximum(np.abs(mv - spec.target_mass) - spec.epsilon, 0.0) / cell, 0.0, 1.0)
        wp = np.clip(1.0 - np.maximum(np.abs(pv - spec.target_momentum) - spec.epsilon, 0.0) / cell, 0.0, 1.0)
        w = wm * wp
        for i in np.nonzero(w > 0)[0]:
            kept_rows.append(g[i] * scale)
            kept_w.append(w[i])
            if len(kept_rows) >= count:
                break
        scanned += m
    if len(kept_rows) < min_support:
        raise BudgetExhausted(
            f"fallback found {len(kept_rows)} support points in {scanned} proposals")
    grid = default_grid_size(sampler.cutoff)
    fields = [FourierField(sampler.cutoff, row, grid) for row in kept_rows]
    prov = {
        "seed": int(sampler.seed),
        "stream_base": int(sampler.stream_id),
        "chunks": chunks,
        "attempts": int(scanned),
        "acceptance_rate": len(kept_rows) / scanned,
        "method": "reweight-fallback",
        "smoothing_cell": cell,
        "cutoff": sampler.cutoff,
    }
    return Ensemble(tuple(fields), np.array(kept_w), spec, prov)


def acceptance_rate_estimate(
    spec: ConditioningSpec,
    sampler: SamplerConfig,
    attempts: int,
    *,
    batch: int = 16384,
) -> tuple[float, float]:
    """Plain MC estimate (rate, std error) of the window probability."""
    hits = 0
    done = 0
    while done < attempts:
        m = min(batch, attempts - done)
        g = gaussian_pairs(sampler, m, first_draw=done)
        mv, pv = _mass_momentum_of_rows(g, sampler.cutoff)
        hits += int(np.count_nonzero(spec.accepts(mv, pv)))
        done += m
    rate = hits / attempts
    return rate, float(np.sqrt(max(rate * (1 - rate), 1e-300) / attempts))


class ModulusBox:
    """Product region {r_lo_n <= |xi_n| < r_hi_n} over the low modes -N..N."""

    def __init__(self, mode_cutoff: int, lows=None, highs=None):
        m = 2 * mode_cutoff + 1
        self.mode_cutoff = mode_cutoff
        self.lows = np.zeros(m) if lows is None else np.asarray(lows, float)
        self.highs = np.full(m, np.inf) if highs is None else np.asarray(highs, float)
        if self.lows.shape != (m,) or self.highs.shape != (m,):
            raise ValueError("bounds must have one entry per low mode")

    @classmethod
    def everything(cls, mode_cutoff: int) -> "ModulusBox":
        return cls(mode_cutoff)

    @classmethod
    def single_mode(cls, mode_cutoff: int, n: int, lo: float, hi: float) -> "ModulusBox":
        box = cls(mode_cutoff)
        box.lows = box.lows.copy()
        box.highs = box.highs.copy()
        box.lows[n + mode_cutoff] = lo
        box.highs[n + mode_cutoff] = hi
        return box

    def indicator(self, xi: np.ndarray) -> np.ndarray:
        r = np.abs(xi)
        return np.all((r >= self.lows) & (r < self.highs), axis=-1)


@dataclass(frozen=True)
class LowModeProbability:
    probability: float
    raw_mean: float
    std_error: float
    samples: int


def low_mode_marginal(
    spec: ConditioningSpec,
    mode_cutoff: int,
    region: ModulusBox,
    grid_tail: DensityGrid,
    grid_full: DensityGrid,
    sampler: SamplerConfig,
    samples: int = 200_000,
) -> LowModeProbability:
    """Probability of a low-mode region under the zero-window conditioned measure.

    Monte Carlo over the free Gaussian low modes xi of
    f_{N+1}(a - sum w_n |xi_n|^2, b - sum w_n 2 pi n |xi_n|^2) / f_0(a, b),
    the exact small-window limit of the conditioned low-mode law.
    """
    if grid_tail is None or grid_full is None:
        raise MissingDensity("both the tail and full density grids are required")
    if grid_tail.tail_start != mode_cutoff + 1:
        raise MissingDensity(f"tail grid must have tail_start={mode_cutoff + 1}")
    if grid_full.tail_start != 0:
        raise MissingDensity("full grid must have tail_start=0")
    if region.mode_cutoff != mode_cutoff:
        raise ValueError("region cutoff mismatch")
    f0 = grid_full.value_at(spec.target_mass, spec.target_momentum)
    if f0 <= 0:
        raise MissingDensity("full density vanishes at the conditioning point")
    n = np.arange(-mode_cutoff, mode_cutoff + 1)
    w = 1.0 / freq_weight_sq(n)
    wn = w * TWO_PI * n
    cfg = SamplerConfig(mode_cutoff, sampler.seed, sampler.stream_id)
    vals = np.empty(samples)
    done = 0
    while done < samples:
        m = min(16384, samples - done)
        xi = gaussian_pairs(cfg, m, first_draw=done)
        sq = np.abs(xi) ** 2
        a_shift = spec.target_mass - sq @ w
        b_shift = spec.target_momentum - sq @ wn
        ratio = grid_tail.interpolate(a_shift, b_shift) / f0
        vals[done:done + m] = ratio * region.indicator(xi)
        done += m
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / np.sqrt(samples))
    return LowModeProbability(
        probability=float(np.clip(mean, 0.0, 1.0)),
        raw_mean=mean,
        std_error=se,
        samples=samples,
    )


OBSERVABLES = {}


def register_observable(name):
    def deco(fn):
        OBSERVABLES[name] = fn
        return fn
    return deco


@register_observable("mass")
def _obs_mass(f):
    return field_mass(f)


@register_observable("momentum")
def _obs_momentum(f):
    return field_momentum(f)


@register_observable("lp4_integral")
def _obs_lp4(f):
    from .field import lp_integral
    return lp_integral(f, 4.0)


@dataclass(frozen=True)
class SweepRow:
    epsilon: float
    mean: float
    std_error: float
    count: int
    acceptance_rate: float


@dataclass(frozen=True)
class EpsilonSweep:
    observable: str
    rows: tuple
    extrapolated: float
    extrapolated_ci: float
    fit_coefficient: float
    fit_order: float

    def as_table(self) -> str:
        lines = [f"# epsilon sweep of {self.observable}",
                 "epsilon,mean,std_error,count,acceptance_rate"]
        for r in self.rows:
            lines.append(f"{r.epsilon:g},{r.mean:.10g},{r.std_error:.3g},"
                         f"{r.count},{r.acceptance_rate:.3g}")
        lines.append(f"# extrapolated: {self.extrapolated:.10g} "
                     f"+- {self.extrapolated_ci:.3g} (order {self.fit_order:.2f})")
        return "\n".join(lines)


def epsilon_sweep(
    observable,
    target_mass: float,
    target_momentum: float,
    eps_list,
    count: int,
    sampler: SamplerConfig,
    *,
    max_attempts: int = 40_000_000,
    stream_stride: int = 64,
) -> EpsilonSweep:
    """E_{P_eps}[observable] along a decreasing window schedule, with the
    zero-window limit read off from a fitted E0 + c * eps^q model.
    """
    eps_list = list(eps_list)
    if any(e2 >= e1 for e1, e2 in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    if isinstance(observable, str):
        name = observable
        fn = OBSERVABLES[observable]
    else:
        name = getattr(observable, "__name__", "observable")
        fn = observable
    rows = []
    for i, eps in enumerate(eps_list):
        spec = ConditioningSpec(target_mass, target_momentum, eps)
        cfg = SamplerConfig(sampler.cutoff, sampler.seed,
                            sampler.stream_id + i * stream_stride)
        ens = sample_conditioned(spec, count, cfg, max_attempts=max_attempts)
        vals = ens.observable_values(fn)
        rows.append(SweepRow(
            epsilon=eps,
            mean=float(vals.mean()),
            std_error=float(vals.std(ddof=1) / np.sqrt(count)),
            count=count,
            acceptance_rate=ens.provenance["acceptance_rate"],
        ))
    fit = power_law_extrapolate(
        np.array([r.epsilon for r in rows]),
        np.array([r.mean for r in rows]),
        np.array([r.std_error for r in rows]),
    )
    return EpsilonSweep(
        observable=name,
        rows=tuple(rows),
        extrapolated=fit.limit,
        extrapolated_ci=fit.limit_ci,
        fit_coefficient=fit.coefficient,
        fit_order=fit.order,
    )
