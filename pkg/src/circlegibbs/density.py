"""Joint density of the (mass, momentum) tail pair via its characteristic function.

The pair (X_N, Y_N) = (sum w_n |g_n|^2, sum w_n * 2 pi n * |g_n|^2) over
modes |n| >= N, with w_n = 1/(1 + 4 pi^2 n^2), has an explicit
characteristic function: a product of one factor per chi-square mode.
char_fn evaluates that product (with an analytic correction for the modes
beyond the stored cutoff) and invert_density recovers the joint density on
a rectangular grid by plain oscillatory quadrature.

Numerical notes for the inversion.  With uniform steps the trapezoid sum
of a Fourier inversion integral is, by Poisson summation, the true density
plus alias images spaced 2*pi/step apart, so steps are chosen from the
density's exponential tail rates rather than from the oscillation of the
integrand.  The truncation beyond the (s, t) cutoffs is estimated from the
measured boundary values extended with the proved quadratic-decay
envelope, and the residual ringing is probed on a strip of negative mass
values where the true density vanishes identically.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.special import zeta

from .field import TWO_PI, angular_freq, freq_weight_sq, next_pow2

_Q2 = 1.0 / (4.0 * np.pi ** 2)  # (2 pi)^-2, shift in n^2 + q^2 mode sums

MAGIC_GRID = b"CGDG"
GRID_VERSION = 1


class CutoffTooSmall(Exception):
    """Inversion cutoffs leave an estimated tail above the requested tolerance."""


def mode_weight(n):
    """w_n = 1/(1 + 4 pi^2 n^2)."""
    return 1.0 / freq_weight_sq(n)


def _alpha(n):
    # chi-square scale of the mass factor of mode n
    return 2.0 * mode_weight(n)


def _gamma(n):
    # chi-square scale of the momentum factor of mode n (signed)
    return 2.0 * angular_freq(n) * mode_weight(n)


def _sum_tail_inv_quad(m: int, power: int = 1) -> float:
    """sum_{n>m} (n^2 + q^2)^-power with q = 1/(2 pi), via Hurwitz zeta."""
    total = 0.0
    coef = 1.0
    for j in range(8):
        if power == 1:
            c = (-_Q2) ** j
        else:  # power == 2
            c = (j + 1) * (-_Q2) ** j
        term = c * zeta(2 * power + 2 * j, m + 1)
        total += term
        if abs(term) < 1e-18 * max(abs(total), 1e-30):
            break
    return total


def tail_sums(product_cutoff: int) -> tuple[float, float, float]:
    """(sum alpha_n, sum alpha_n^2, sum gamma_n^2) over n > product_cutoff."""
    s1 = _sum_tail_inv_quad(product_cutoff, 1) / (2.0 * np.pi ** 2)
    s2 = _sum_tail_inv_quad(product_cutoff, 2) / (4.0 * np.pi ** 4)
    return s1, s2, 2.0 * s1 - s2


def tail_mean_mass(tail_start: int) -> float:
    """Mean of X_N = sum_{|n|>=N} w_n |g_n|^2 (each |g_n|^2 has mean 2)."""
    n0 = max(tail_start, 1)
    body = 4.0 * float(np.sum(mode_weight(np.arange(n0, 4096 + 1))))
    tail = 2.0 * tail_sums(4096)[0]
    total = body + tail
    if tail_start == 0:
        total += 2.0
    return total


@dataclass(frozen=True)
class CharFnSpec:
    """Which modes enter the tail pair and where the product is truncated.

    tail_start N selects modes |n| >= N (or |n - window_M| >= N when a
    window center is given).  Factors with |n| > product_cutoff are folded
    into a second-order log-expansion correction.
    """

    tail_start: int
    product_cutoff: int = 4096
    window_m: int | None = None

    def __post_init__(self):
        if self.tail_start < 0:
            raise ValueError("tail_start must be >= 0")
        if self.product_cutoff < self.tail_start + 4:
            raise ValueError("product_cutoff must be >= tail_start + 4")
        if self.window_m is not None and self.product_cutoff < abs(self.window_m) + self.tail_start + 4:
            raise ValueError("product_cutoff too small for the shifted window")


def _char_fn_modes(spec: CharFnSpec) -> np.ndarray:
    """Explicit (signed) mode indices entering the truncated product."""
    n = np.arange(-spec.product_cutoff, spec.product_cutoff + 1)
    if spec.window_m is None:
        keep = np.abs(n) >= spec.tail_start
    else:
        keep = np.abs(n - spec.window_m) >= spec.tail_start
    return n[keep]


def char_fn(spec: CharFnSpec, s, t):
    """E[exp(i s X_N + i t Y_N)] for scalar or array (s, t).

    One factor 1/(1 - i(alpha_n s + gamma_n t)) per retained mode, the
    n = 0 mode contributing (1 - 2 i s)^{-1} when tail_start = 0, and an
    exp(2 i s A1 - s^2 A2 - t^2 G2) correction for the modes beyond the
    product cutoff.  Every explicit factor has modulus at most 1.
    """
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    s, t = np.broadcast_arrays(s, t)
    out = np.ones(s.shape, dtype=np.complex128)
    modes = _char_fn_modes(spec)
    for lo in range(0, modes.size, 256):
        chunk = modes[lo:lo + 256]
        a = _alpha(chunk)
        g = _gamma(chunk)
        den = 1.0 - 1j * (np.multiply.outer(s, a) + np.multiply.outer(t, g))
        out = out / np.prod(den, axis=-1)
    s1, s2, g2 = tail_sums(spec.product_cutoff)
    out = out * np.exp(2j * s * s1 - s ** 2 * s2 - t ** 2 * g2)
    if out.ndim == 0:
        return complex(out)
    return out


def char_fn_tail_residual_bound(spec: CharFnSpec, s_max: float, t_max: float) -> float:
    """Coarse bound on the log error of the beyond-cutoff correction."""
    m = spec.product_cutoff
    a1 = _alpha(m)
    g1 = abs(_gamma(m))
    # third-order terms of -log(1-z) summed over the tail, crudely majorized
    # by the n = m+1 magnitude times the harmonic-like tail count
    z = a1 * s_max + g1 * t_max
    return (z ** 3 / 3.0) * (m + 1) if z < 1 else np.inf


def _char_grid(spec: CharFnSpec, s: np.ndarray, t: np.ndarray,
               exact_block: int = 64) -> np.ndarray:
    """char_fn on the product grid s x t, organized for grid evaluation.

    Exact pair factors up to n_exact; for n_exact < n <= product_cutoff the
    momentum part of each factor is kept exactly while the (small) mass
    part is expanded to third order in w_n = ((1-i a_n s)^2 - 1) h_n(t),
    which separates into a handful of outer products.
    """
    if spec.window_m is not None:
        raise ValueError("grid evaluation supports centered windows only")
    n_lo = max(spec.tail_start, 1)
    n_exact = max(exact_block, n_lo + 4)
    n_exact = min(n_exact, spec.product_cutoff)
    prod = np.ones((s.size, t.size), dtype=np.complex128)
    for n in range(n_lo, n_exact + 1):
        sn = (1.0 - 1j * _alpha(n) * s) ** 2
        tn = (_gamma(n) * t) ** 2
        prod *= sn[:, None] + tn[None, :]
    log_f = np.zeros((s.size, t.size), dtype=np.complex128)
    if n_exact < spec.product_cutoff:
        nn = np.arange(n_exact + 1, spec.product_cutoff + 1)
        a = _alpha(nn)
        g = _gamma(nn)
        h = 1.0 / (1.0 + np.multiply.outer(g ** 2, t ** 2))  # (modes, Nt)
        log_f -= np.log(1.0 + np.multiply.outer(g ** 2, t ** 2)).sum(axis=0)[None, :]
        c1 = -2j * a
        c2 = -(a ** 2)
        h2 = h * h
        h3 = h2 * h
        # -w + w^2/2 - w^3/3 arranged by powers of s
        t_s1 = -(c1 @ h)
        t_s2 = -(c2 @ h) + 0.5 * ((c1 ** 2) @ h2)
        t_s3 = (c1 * c2) @ h2 - ((c1 ** 3) @ h3) / 3.0
        t_s4 = 0.5 * ((c2 ** 2) @ h2) - ((c1 ** 2) * c2) @ h3
        t_s5 = -(c1 * c2 ** 2) @ h3
        t_s6 = -((c2 ** 3) @ h3) / 3.0
        for k, row in enumerate((t_s1, t_s2, t_s3, t_s4, t_s5, t_s6), start=1):
            log_f += np.multiply.outer(s ** k, row)
    s1, s2, g2 = tail_sums(spec.product_cutoff)
    log_f += (2j * s * s1 - s ** 2 * s2)[:, None]
    log_f += (-(t ** 2) * g2)[None, :]
    out = np.exp(log_f) / prod
    if spec.tail_start == 0:
        out /= (1.0 - 2j * s)[:, None]
    return out


@dataclass(frozen=True)
class DensityGrid:
    """Tabulated joint density f_N(a, b) with inversion metadata.

    values[i, j] = f_N(a_axis[i], b_axis[j]).  meta records the quadrature
    (cutoffs, steps), error estimates, the measured ringing amplitude on a
    negative-mass probe strip, and the grid's normalization and symmetry
    defect.
    """

    a_axis: np.ndarray
    b_axis: np.ndarray
    values: np.ndarray
    tail_start: int
    meta: dict

    def __post_init__(self):
        a = np.ascontiguousarray(self.a_axis, dtype=float)
        b = np.ascontiguousarray(self.b_axis, dtype=float)
        v = np.ascontiguousarray(self.values, dtype=float)
        if v.shape != (a.size, b.size):
            raise ValueError("values shape does not match axes")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("density grid must be finite")
        tol_neg = float(self.meta.get("tol_neg", 1e-8))
        if v.min() < -tol_neg:
            raise ValueError(f"negative density {v.min():.3e} below ringing tolerance {tol_neg:.3e}")
        for arr in (a, b, v):
            arr.setflags(write=False)
        object.__setattr__(self, "a_axis", a)
        object.__setattr__(self, "b_axis", b)
        object.__setattr__(self, "values", v)

    @property
    def da(self) -> float:
        return float(self.a_axis[1] - self.a_axis[0])

    @property
    def db(self) -> float:
        return float(self.b_axis[1] - self.b_axis[0])

    def integral(self) -> float:
        return float(np.trapezoid(np.trapezoid(self.values, self.b_axis, axis=1), self.a_axis))

    def symmetry_defect(self) -> float:
        """max |f(a, b) - f(a, -b)| over grid nodes (b axis must be symmetric)."""
        return float(np.max(np.abs(self.values - self.values[:, ::-1])))

    def interpolate(self, a, b):
        """Bilinear interpolation, zero outside the grid (and for a < 0)."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        fa = (a - self.a_axis[0]) / self.da
        fb = (b - self.b_axis[0]) / self.db
        ia = np.floor(fa).astype(int)
        ib = np.floor(fb).astype(int)
        inside = (ia >= 0) & (ia < self.a_axis.size - 1) & (ib >= 0) & (ib < self.b_axis.size - 1)
        ia_c = np.clip(ia, 0, self.a_axis.size - 2)
        ib_c = np.clip(ib, 0, self.b_axis.size - 2)
        wa = fa - ia_c
        wb = fb - ib_c
        v = self.values
        out = ((1 - wa) * (1 - wb) * v[ia_c, ib_c]
               + wa * (1 - wb) * v[ia_c + 1, ib_c]
               + (1 - wa) * wb * v[ia_c, ib_c + 1]
               + wa * wb * v[ia_c + 1, ib_c + 1])
        return np.where(inside, out, 0.0)

    def value_at(self, a: float, b: float) -> float:
        return float(self.interpolate(a, b))

    def to_binary(self, path) -> None:
        """Little-endian dump: magic, version, tail_start, axes, meta, row-major f64."""
        meta_json = json.dumps(self.meta, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(MAGIC_GRID)
            fh.write(struct.pack("<IiII", GRID_VERSION, self.tail_start,
                                 self.a_axis.size, self.b_axis.size))
            fh.write(self.a_axis.astype("<f8").tobytes())
            fh.write(self.b_axis.astype("<f8").tobytes())
            fh.write(struct.pack("<I", len(meta_json)))
            fh.write(meta_json)
            fh.write(self.values.astype("<f8").tobytes())

    @classmethod
    def from_binary(cls, path) -> "DensityGrid":
        with open(path, "rb") as fh:
            if fh.read(4) != MAGIC_GRID:
                raise ValueError("not a density grid file")
            version, tail_start, na, nb = struct.unpack("<IiII", fh.read(16))
            if version != GRID_VERSION:
                raise ValueError(f"unsupported version {version}")
            a = np.frombuffer(fh.read(8 * na), dtype="<f8")
            b = np.frombuffer(fh.read(8 * nb), dtype="<f8")
            (mlen,) = struct.unpack("<I", fh.read(4))
            meta = json.loads(fh.read(mlen).decode())
            v = np.frombuffer(fh.read(8 * na * nb), dtype="<f8").reshape(na, nb)
        return cls(a, b, v, tail_start, meta)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("a,b,density\n")
            for i, a in enumerate(self.a_axis):
                for j, b in enumerate(self.b_axis):
                    fh.write(f"{a:.12g},{b:.12g},{self.values[i, j]:.12g}\n")


def default_axes(tail_start: int) -> tuple[np.ndarray, np.ndarray]:
    """Default inversion axes: wide enough that <= ~3e-4 of mass is outside."""
    if tail_start == 0:
        a_axis = np.linspace(0.0, 16.0, 1024)
    else:
        a_max = max(1.0, 12.0 * tail_mean_mass(tail_start))
        a_axis = np.linspace(0.0, a_max, 1024)
    b_axis = np.linspace(-6.0, 6.0, 512)
    return a_axis, b_axis


def _mass_tail_rate(tail_start: int) -> float:
    """Exponential decay rate of the a-tail (nearest pole of the mgf)."""
    if tail_start == 0:
        return 0.5
    return float(freq_weight_sq(tail_start)) / 2.0


_MOMENTUM_TAIL_RATE = 1.0 / abs(_gamma(1))  # slowest momentum factor, n = 1


def invert_density(
    spec: CharFnSpec,
    a_axis: np.ndarray | None = None,
    b_axis: np.ndarray | None = None,
    *,
    s_cutoff: float | None = None,
    t_cutoff: float = 36.0,
    tol: float = 1e-3,
    exact_block: int = 64,
) -> DensityGrid:
    """Invert the characteristic function to f_N(a, b) on a rectangular grid.

    Uniform trapezoid quadrature of (2 pi)^-2 iint e^{-i(sa+tb)} fhat ds dt
    over [-S, S] x [-T, T].  Steps are set so alias images (Poisson
    summation) sit where the density has decayed below ~1e-10; raises
    CutoffTooSmall when the boundary-anchored envelope estimate of the
    truncated tail exceeds tol.  A strip of negative a values is evaluated
    alongside the grid to measure the quadrature's ringing amplitude.
    """
    if a_axis is None or b_axis is None:
        da_def, db_def = default_axes(spec.tail_start)
        a_axis = da_def if a_axis is None else np.asarray(a_axis, float)
        b_axis = db_def if b_axis is None else np.asarray(b_axis, float)
    a_axis = np.asarray(a_axis, float)
    b_axis = np.asarray(b_axis, float)
    if s_cutoff is None:
        # sharper tail densities ring harder; push the cutoff out until the
        # boundary magnitude of the product is comparable in both cases
        s_cutoff = 400.0 if spec.tail_start == 0 else 800.0

    rate_a = _mass_tail_rate(spec.tail_start)
    probe_lo = -2.0
    period_a = (a_axis[-1] - min(probe_lo, 0.0)) + 25.0 / rate_a
    ds = TWO_PI / period_a
    period_b = 2.0 * max(abs(b_axis[0]), abs(b_axis[-1])) + 25.0 / _MOMENTUM_TAIL_RATE
    dt = TWO_PI / period_b

    ns = int(np.ceil(s_cutoff / ds))
    nt = int(np.ceil(t_cutoff / dt))
    s = ds * np.arange(-ns, ns + 1)
    t = dt * np.arange(-nt, nt + 1)

    fhat = _char_grid(spec, s, t, exact_block=exact_block)

    # boundary-anchored truncation estimate: extend the measured edge values
    # with the proved <s>^-2, <t>^-2 envelope decay
    ws = np.full(s.size, ds)
    ws[0] = ws[-1] = ds / 2.0
    wt = np.full(t.size, dt)
    wt[0] = wt[-1] = dt / 2.0
    s_edge = (np.abs(fhat[0, :]) + np.abs(fhat[-1, :])) @ wt
    t_edge = ws @ (np.abs(fhat[:, 0]) + np.abs(fhat[:, -1]))
    sb = abs(s[0])
    tb = abs(t[-1])
    ext_s = (1.0 + sb ** 2) * (np.pi / 2.0 - np.arctan(sb))  # int_{|s|>S} (<S>/<s>)^2 ds
    ext_t = (1.0 + tb ** 2) * (np.pi / 2.0 - np.arctan(tb))
    trunc_err = (s_edge * ext_s + t_edge * ext_t) / (TWO_PI ** 2)
    if trunc_err > tol:
        raise CutoffTooSmall(
            f"estimated truncation tail {trunc_err:.3e} exceeds tolerance {tol:.3e}; "
            f"raise s_cutoff/t_cutoff")
    alias_err = float(np.exp(-rate_a * (period_a - (a_axis[-1] - probe_lo)))
                      + np.exp(-_MOMENTUM_TAIL_RATE * (period_b - 2 * abs(b_axis[-1]))))

    # ringing probes concentrate near the support edge a = 0, where the
    # quadrature's oscillatory residue peaks
    probe_axis = np.concatenate([np.linspace(probe_lo, -0.3, 16),
                                 np.linspace(-0.25, -0.01, 32)])
    n_probe = probe_axis.size
    a_eval = np.concatenate([probe_axis, a_axis])
    ka = np.exp(-1j * np.multiply.outer(a_eval, s)) * ws[None, :]
    kb = np.exp(-1j * np.multiply.outer(t, b_axis)) * wt[:, None]
    vals = (ka @ fhat @ kb) / (TWO_PI ** 2)
    vals = np.real(vals)

    ringing = float(np.max(np.abs(vals[:n_probe, :])))
    grid_vals = vals[n_probe:, :]
    tol_neg = max(3.0 * ringing, 1e-12)

    meta = {
        "s_cutoff": float(sb),
        "t_cutoff": float(tb),
        "ds": float(ds),
        "dt": float(dt),
        "product_cutoff": spec.product_cutoff,
        "exact_block": int(exact_block),
        "truncation_error": float(trunc_err),
        "alias_error": alias_err,
        "ringing_amplitude": ringing,
        "tol_neg": float(tol_neg),
    }
    grid = DensityGrid(a_axis, b_axis, grid_vals, spec.tail_start, meta)
    meta["normalization"] = grid.integral()
    meta["symmetry_defect"] = grid.symmetry_defect()
    if abs(meta["normalization"] - 1.0) > 5e-3:
        raise CutoffTooSmall(
            f"grid mass {meta['normalization']:.6f} is off unity; axes too narrow "
            f"or cutoffs too small")
    return grid


@dataclass(frozen=True)
class PositivityReport:
    """Minimum of the density over a probed region versus the ringing floor."""

    min_value: float
    argmin: tuple[float, float]
    ringing_tolerance: float
    passed: bool
    region: dict
    below_tolerance: list
    expected_zero_region: bool = False


def positivity_report(
    grid: DensityGrid,
    a_min: float,
    a_max: float | None = None,
    b_abs_max: float | None = None,
) -> PositivityReport:
    """Scan f over {a >= a_min} (optionally clipped) for values at or below
    the ringing tolerance.  Passing a_min < 0 probes the region where the
    density vanishes identically, which is reported as an expected failure.
    """
    tol = float(grid.meta.get("tol_neg", 0.0))
    if a_min < 0:
        ring = float(grid.meta.get("ringing_amplitude", 0.0))
        return PositivityReport(
            min_value=ring, argmin=(a_min, 0.0), ringing_tolerance=tol,
            passed=False, region={"a_min": a_min}, below_tolerance=[],
            expected_zero_region=True)
    sel_a = grid.a_axis >= a_min
    if a_max is not None:
        sel_a &= grid.a_axis <= a_max
    sel_b = np.ones(grid.b_axis.size, dtype=bool)
    if b_abs_max is not None:
        sel_b = np.abs(grid.b_axis) <= b_abs_max
    sub = grid.values[np.ix_(sel_a, sel_b)]
    aa = grid.a_axis[sel_a]
    bb = grid.b_axis[sel_b]
    i, j = np.unravel_index(np.argmin(sub), sub.shape)
    below = [(float(aa[ii]), float(bb[jj]))
             for ii, jj in zip(*np.nonzero(sub <= tol))]
    return PositivityReport(
        min_value=float(sub[i, j]),
        argmin=(float(aa[i]), float(bb[j])),
        ringing_tolerance=tol,
        passed=bool(sub[i, j] > tol),
        region={"a_min": a_min, "a_max": a_max, "b_abs_max": b_abs_max},
        below_tolerance=below[:64],
    )


@dataclass(frozen=True)
class MomentumMarginal:
    """1D marginal density of the momentum sum on a symmetric axis."""

    b_axis: np.ndarray
    density: np.ndarray
    meta: dict

    def integral(self) -> float:
        return float(np.trapezoid(self.density, self.b_axis))

    def interpolate(self, b):
        return np.interp(b, self.b_axis, self.density, left=0.0, right=0.0)


def marginal_momentum_density(
    spec: CharFnSpec,
    b_axis: np.ndarray | None = None,
    *,
    bm_mode: bool = False,
    t_cutoff: float = 40.0,
    tol: float = 1e-3,
) -> MomentumMarginal:
    """Invert t -> char_fn(0, t) to the 1D momentum (loop area) marginal.

    With bm_mode the mode weights (2 pi n)^-2 of the plain Brownian loop
    replace the Sobolev weights, which is the variant comparable to the
    squared-hyperbolic-secant law after one fitted scale.
    """
    if b_axis is None:
        b_axis = np.linspace(-8.0, 8.0, 1024)
    b_axis = np.asarray(b_axis, float)
    rate = np.pi if bm_mode else _MOMENTUM_TAIL_RATE
    period = 2.0 * max(abs(b_axis[0]), abs(b_axis[-1])) + 25.0 / rate
    dt = TWO_PI / period
    nt = int(np.ceil(t_cutoff / dt))
    t = dt * np.arange(-nt, nt + 1)

    n_lo = max(spec.tail_start, 1)
    n = np.arange(n_lo, spec.product_cutoff + 1)
    g = 1.0 / (np.pi * n) if bm_mode else _gamma(n)
    phi = np.exp(-np.sum(np.log1p(np.multiply.outer(t ** 2, g ** 2)), axis=1))
    if bm_mode:
        g2_tail = zeta(2, spec.product_cutoff + 1) / np.pi ** 2
    else:
        g2_tail = tail_sums(spec.product_cutoff)[2]
    phi *= np.exp(-(t ** 2) * g2_tail)

    wt = np.full(t.size, dt)
    wt[0] = wt[-1] = dt / 2.0
    edge = (abs(phi[0]) + abs(phi[-1]))
    ext_t = (1.0 + t[-1] ** 2) * (np.pi / 2.0 - np.arctan(t[-1]))
    trunc_err = edge * ext_t / TWO_PI
    if trunc_err > tol:
        raise CutoffTooSmall(f"marginal truncation tail {trunc_err:.3e} > {tol:.3e}")

    dens = np.real(np.exp(-1j * np.multiply.outer(b_axis, t)) @ (phi * wt)) / TWO_PI
    meta = {
        "bm_mode": bm_mode,
        "t_cutoff": float(t[-1]),
        "dt": float(dt),
        "product_cutoff": spec.product_cutoff,
        "truncation_error": float(trunc_err),
        "tail_start": spec.tail_start,
    }
    return MomentumMarginal(b_axis, dens, meta)


def chi2_convolve_mass(grid_tail: DensityGrid, a_targets: np.ndarray,
                       gl_points: int = 96) -> np.ndarray:
    """Convolve f_{N} in its mass argument with the two-degree chi-square law.

    Returns values on a_targets x grid_tail.b_axis.  Gauss-Legendre in the
    convolution variable with the tail density linearly interpolated; used
    to check consistency between densities at consecutive tail starts
    (removing one independent |g_0|^2 summand is exactly this convolution).
    """
    a_targets = np.asarray(a_targets, float)
    nodes, weights = np.polynomial.legendre.leggauss(gl_points)
    # per target a: integrate x over [max(0, a - support), a], where the
    # kernel weight exp(-x/2)/2 multiplies f(a - x, b)
    lo = np.maximum(0.0, a_targets - grid_tail.a_axis[-1])
    hi = np.maximum(a_targets, 0.0)
    half = 0.5 * (hi - lo)
    x = lo[:, None] + half[:, None] * (nodes[None, :] + 1.0)   # (na, gl)
    w = half[:, None] * weights[None, :] * 0.5 * np.exp(-0.5 * x)
    y = a_targets[:, None] - x
    out = np.zeros((a_targets.size, grid_tail.b_axis.size))
    for j in range(grid_tail.b_axis.size):
        fy = np.interp(y.ravel(), grid_tail.a_axis, grid_tail.values[:, j],
                       left=0.0, right=0.0).reshape(y.shape)
        out[:, j] = np.sum(w * fy, axis=1)
    return out


def measure_envelope_constant(spec: CharFnSpec, s_vals, t_vals) -> float:
    """Smallest C with |fhat| <= C <s>^-2 <t>^-2 on the given lattice."""
    ss, tt = np.meshgrid(np.asarray(s_vals, float), np.asarray(t_vals, float), indexing="ij")
    vals = np.abs(char_fn(spec, ss, tt))
    return float(np.max(vals * (1.0 + ss ** 2) * (1.0 + tt ** 2)))
