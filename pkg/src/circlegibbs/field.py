"""Truncated Fourier fields on the unit circle and their scalar observables.

A field is the trigonometric polynomial u(x) = sum_{|n|<=N} c_n e^{2 pi i n x}
on the circle of unit length, so the angular frequency of mode n is 2*pi*n.
All observables below are pure functions of the stored coefficients.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi


class QuadratureOverflow(Exception):
    """Raised when a pointwise |u|^p quadrature leaves the double range."""


class Nonlinearity(enum.Enum):
    FOCUSING = "focusing"
    DEFOCUSING = "defocusing"


class AreaRule(enum.Enum):
    """Riemann rule used for the discrete loop-area sum."""

    LEFT_ENDPOINT = "left"
    MIDPOINT = "midpoint"
    TRAPEZOID = "trapezoid"


def next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


def default_grid_size(cutoff: int) -> int:
    """Smallest power of two >= 2*cutoff + 2 (room for alias-free |u|^2)."""
    return next_pow2(max(2 * cutoff + 2, 8))


def angular_freq(n):
    """2*pi*n for integer mode index n (scalar or array)."""
    return TWO_PI * np.asarray(n, dtype=float)


def freq_weight_sq(n):
    """1 + (2*pi*n)^2, the squared Sobolev weight of mode n."""
    return 1.0 + angular_freq(n) ** 2


@dataclass(frozen=True)
class FourierField:
    """Immutable value type holding the 2N+1 coefficients of a cutoff-N field.

    coeffs[k] stores c_n for n = k - cutoff.  grid_size is the default
    number of collocation points used for physical-space evaluation; it is
    a power of two with at least 2N+2 points so that products of the field
    with itself can be evaluated alias-free after zero padding.
    """

    cutoff: int
    coeffs: np.ndarray
    grid_size: int = 0

    def __post_init__(self):
        if self.cutoff < 0:
            raise ValueError("cutoff must be >= 0")
        c = np.ascontiguousarray(self.coeffs, dtype=np.complex128)
        if c.shape != (2 * self.cutoff + 1,):
            raise ValueError(
                f"expected {2 * self.cutoff + 1} coefficients, got {c.shape}"
            )
        if not np.all(np.isfinite(c.view(np.float64))):
            raise ValueError("coefficients must be finite")
        g = self.grid_size if self.grid_size else default_grid_size(self.cutoff)
        if g < 2 * self.cutoff + 2 or (g & (g - 1)) != 0:
            raise ValueError("grid_size must be a power of two >= 2N+2")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        object.__setattr__(self, "grid_size", g)

    @property
    def mode_numbers(self) -> np.ndarray:
        return np.arange(-self.cutoff, self.cutoff + 1)

    def coeff(self, n: int) -> complex:
        if abs(n) > self.cutoff:
            return 0.0 + 0.0j
        return complex(self.coeffs[n + self.cutoff])

    def values_on_grid(self, num_points: int | None = None, offset: float = 0.0) -> np.ndarray:
        """Evaluate u at x_j = j/num_points + offset, j = 0..num_points-1.

        Works for any num_points >= 1; mode indices fold modulo the grid,
        which is exactly the value of the series at those sample points.
        """
        k = int(num_points) if num_points else self.grid_size
        if k < 1:
            raise ValueError("num_points must be >= 1")
        n = self.mode_numbers
        c = self.coeffs
        if offset != 0.0:
            c = c * np.exp(TWO_PI * 1j * n * offset)
        spec = np.zeros(k, dtype=np.complex128)
        np.add.at(spec, n % k, c)
        return np.fft.ifft(spec) * k

    def scaled(self, alpha: complex) -> "FourierField":
        return FourierField(self.cutoff, alpha * self.coeffs, self.grid_size)

    def index_reversed(self) -> "FourierField":
        """Field with c_n replaced by c_{-n}."""
        return FourierField(self.cutoff, self.coeffs[::-1], self.grid_size)


def zero_field(cutoff: int, grid_size: int = 0) -> FourierField:
    return FourierField(cutoff, np.zeros(2 * cutoff + 1, dtype=np.complex128), grid_size)


def field_from_modes(cutoff: int, modes: dict[int, complex], grid_size: int = 0) -> FourierField:
    """Build a field from a {mode index: amplitude} mapping."""
    c = np.zeros(2 * cutoff + 1, dtype=np.complex128)
    for n, v in modes.items():
        if abs(n) > cutoff:
            raise ValueError(f"mode {n} outside cutoff {cutoff}")
        c[n + cutoff] = v
    return FourierField(cutoff, c, grid_size)


def mass(field: FourierField) -> float:
    """Integral of |u|^2 over the circle, evaluated as sum |c_n|^2."""
    return float(np.sum(np.abs(field.coeffs) ** 2))


def momentum(field: FourierField) -> float:
    """i * integral of u * conj(u_x), evaluated as sum 2*pi*n*|c_n|^2.

    Computed pairwise as sum_{n>=1} 2*pi*n*(|c_n|^2 - |c_{-n}|^2) in a fixed
    order, so index reversal negates the result exactly, term by term.
    """
    big_n = field.cutoff
    if big_n == 0:
        return 0.0
    mod2 = np.abs(field.coeffs) ** 2
    pos = mod2[big_n + 1:]
    neg = mod2[big_n - 1::-1]
    n = np.arange(1, big_n + 1)
    return float(np.sum(TWO_PI * n * (pos - neg)))


def lp_integral(field: FourierField, p: float) -> float:
    """Integral of |u|^p over the circle by trapezoid quadrature.

    The grid is zero padded so that for even integer p the quadrature is
    exact (the integrand is a trigonometric polynomial of bandwidth p*N).
    """
    if p <= 0:
        raise ValueError("p must be > 0")
    grid = max(field.grid_size, next_pow2(int(np.ceil(p)) * field.cutoff + 2))
    u = field.values_on_grid(grid)
    with np.errstate(over="ignore"):
        out = float(np.mean(np.abs(u) ** p))
    if not np.isfinite(out):
        raise QuadratureOverflow(f"|u|^{p} quadrature overflowed")
    return out


def lp_norm(field: FourierField, p: float) -> float:
    return lp_integral(field, p) ** (1.0 / p)


def hamiltonian(field: FourierField, p: float, sign: Nonlinearity) -> float:
    """(1/2) int |u_x|^2 +/- (1/p) int |u|^p, plus sign for defocusing."""
    if p <= 2:
        raise ValueError("p must be > 2")
    n = field.mode_numbers
    kinetic = 0.5 * float(np.sum((angular_freq(n) ** 2) * np.abs(field.coeffs) ** 2))
    pot = lp_integral(field, p) / p
    return kinetic + pot if sign is Nonlinearity.DEFOCUSING else kinetic - pot


def hs_norm(field: FourierField, s: float) -> float:
    """Sobolev norm (sum (1+4 pi^2 n^2)^s |c_n|^2)^(1/2) for s in [0, 1)."""
    if not 0.0 <= s < 1.0:
        raise ValueError("s must lie in [0, 1)")
    w = freq_weight_sq(field.mode_numbers) ** s
    return float(np.sqrt(np.sum(w * np.abs(field.coeffs) ** 2)))


def levy_area_discrete(field: FourierField, points: int, rule: AreaRule) -> float:
    """Discrete signed area of the closed planar loop (Re u, Im u).

    Sums (Re u) d(Im u) - (Im u) d(Re u) over K chords with the chosen
    evaluation rule; the last chord closes the loop (u is periodic, so the
    point after x_{K-1} is x_0).
    """
    if points < 4:
        raise ValueError("need at least 4 points")
    u = field.values_on_grid(points)
    x = u.real
    y = u.imag
    dx = np.roll(x, -1) - x
    dy = np.roll(y, -1) - y
    if rule is AreaRule.LEFT_ENDPOINT:
        fx, fy = x, y
    elif rule is AreaRule.TRAPEZOID:
        fx = 0.5 * (x + np.roll(x, -1))
        fy = 0.5 * (y + np.roll(y, -1))
    elif rule is AreaRule.MIDPOINT:
        um = field.values_on_grid(points, offset=0.5 / points)
        fx, fy = um.real, um.imag
    else:
        raise ValueError(f"unknown rule {rule}")
    return float(np.sum(fx * dy - fy * dx))


@dataclass(frozen=True)
class ObservableRecord:
    """Scalar observables of one field (p and s record how they were taken)."""

    mass: float
    momentum: float
    hamiltonian: float
    lp_norm_p: float
    hs_norm: float
    p: float
    s: float

    def __post_init__(self):
        vals = (self.mass, self.momentum, self.hamiltonian, self.lp_norm_p, self.hs_norm)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("observables must be finite")
        if self.mass < 0 or self.lp_norm_p < 0 or self.hs_norm < 0:
            raise ValueError("mass and norms must be nonnegative")


def observables(
    field: FourierField,
    p: float = 4.0,
    sign: Nonlinearity = Nonlinearity.DEFOCUSING,
    s: float = 0.25,
) -> ObservableRecord:
    return ObservableRecord(
        mass=mass(field),
        momentum=momentum(field),
        hamiltonian=hamiltonian(field, p, sign),
        lp_norm_p=lp_norm(field, p),
        hs_norm=hs_norm(field, s),
        p=p,
        s=s,
    )
