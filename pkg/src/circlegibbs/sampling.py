"""Reproducible draws from the circle Wiener measure.

Randomness comes from the counter-based Philox generator keyed by
(seed, stream_id).  Every variate is produced from exactly one 64-bit raw
output through the inverse CDF, so a draw with a given index always lands
at the same counter offset: samples are bit-reproducible given
(seed, stream_id, draw index) and streams can be consumed in parallel
without shared state.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.special import ndtri

from .field import FourierField, default_grid_size, freq_weight_sq, TWO_PI

_RAWS_PER_COUNTER = 4  # one Philox counter increment yields four 64-bit words
_INV_2_53 = 2.0 ** -53


def _raws(seed: int, stream_id: int, offset_raws: int, count: int) -> np.ndarray:
    """count raw 64-bit words starting at an absolute raw offset of a stream."""
    if offset_raws % _RAWS_PER_COUNTER:
        raise ValueError("raw offsets must be aligned to counter boundaries")
    bg = np.random.Philox(key=np.array([seed, stream_id], dtype=np.uint64))
    bg.advance(offset_raws // _RAWS_PER_COUNTER)
    return bg.random_raw(count)


def _uniforms(seed, stream_id, offset_raws, count):
    # (0,1) strictly: 53 high bits plus a half-ulp shift keeps ndtri finite
    raw = _raws(seed, stream_id, offset_raws, count)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _INV_2_53


def _normals(seed, stream_id, offset_raws, count):
    return ndtri(_uniforms(seed, stream_id, offset_raws, count))


def _exponentials(seed, stream_id, offset_raws, count):
    return -np.log(_uniforms(seed, stream_id, offset_raws, count))


def _block_raws(n_variates: int) -> int:
    """Raw words reserved per draw block, aligned to counter boundaries."""
    q, r = divmod(n_variates, _RAWS_PER_COUNTER)
    return (q + (1 if r else 0)) * _RAWS_PER_COUNTER


@dataclass(frozen=True)
class SamplerConfig:
    """Addressing for one reproducible sample stream."""

    cutoff: int
    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if self.cutoff < 0:
            raise ValueError("cutoff must be >= 0")
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not 0 <= int(v) < 2 ** 64:
                raise ValueError(f"{name} must fit in 64 unsigned bits")


class StreamAllocator:
    """Hands out stream ids so (seed, stream_id) pairs are never reused in a run.

    Thread safe; the counter only moves forward.
    """

    def __init__(self, seed: int, first_stream: int = 0):
        self.seed = int(seed)
        self._next = int(first_stream)
        self._lock = threading.Lock()

    def next_stream(self) -> int:
        with self._lock:
            sid = self._next
            self._next += 1
        return sid

    def next_config(self, cutoff: int) -> SamplerConfig:
        return SamplerConfig(cutoff=cutoff, seed=self.seed, stream_id=self.next_stream())


def gaussian_pairs(cfg: SamplerConfig, count: int, first_draw: int = 0) -> np.ndarray:
    """count x (2N+1) complex standard Gaussians g_n (Re, Im unit variance).

    Draw k occupies a fixed raw block, so any (count, first_draw) slicing of
    a stream returns identical values for the shared indices.  Within one
    draw the first 2N+1 raws feed the real parts (n = -N..N), the rest the
    imaginary parts.
    """
    modes = 2 * cfg.cutoff + 1
    block = _block_raws(2 * modes)
    raw0 = first_draw * block
    z = _normals(cfg.seed, cfg.stream_id, raw0, count * block).reshape(count, block)
    return z[:, :modes] + 1j * z[:, modes:2 * modes]


def sample_wiener(cfg: SamplerConfig, count: int | None = None, first_draw: int = 0):
    """Sample u with c_n = g_n / sqrt(1 + 4 pi^2 n^2).

    Returns a single FourierField when count is None, else a list.
    Deterministic given (seed, stream_id, draw index).
    """
    m = 1 if count is None else int(count)
    n = np.arange(-cfg.cutoff, cfg.cutoff + 1)
    scale = 1.0 / np.sqrt(freq_weight_sq(n))
    g = gaussian_pairs(cfg, m, first_draw)
    grid = default_grid_size(cfg.cutoff)
    fields = [FourierField(cfg.cutoff, g[k] * scale, grid) for k in range(m)]
    return fields[0] if count is None else fields


def sample_standard_bm_loop(cutoff: int, seed: int, stream_id: int = 0,
                            count: int | None = None, first_draw: int = 0):
    """Brownian-loop series c_n = g_n / (2 pi n) for n != 0, c_0 = 0."""
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    cfg = SamplerConfig(cutoff=cutoff, seed=seed, stream_id=stream_id)
    m = 1 if count is None else int(count)
    n = np.arange(-cutoff, cutoff + 1)
    scale = np.zeros(2 * cutoff + 1)
    nz = n != 0
    scale[nz] = 1.0 / (TWO_PI * n[nz])
    g = gaussian_pairs(cfg, m, first_draw)
    grid = default_grid_size(cutoff)
    fields = [FourierField(cutoff, g[k] * scale, grid) for k in range(m)]
    return fields[0] if count is None else fields


def sample_mass_momentum(cfg: SamplerConfig, count: int, first_draw: int = 0,
                         chunk: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """Fast joint draws of (mass, momentum) of Wiener samples.

    Uses |g_n|^2 ~ 2 Exp(1) directly (one raw per mode), which matches the
    law of the field-based pair without materializing coefficients.  The
    raw layout differs from sample_wiener, so use a dedicated stream.
    """
    modes = 2 * cfg.cutoff + 1
    block = _block_raws(modes)
    n = np.arange(-cfg.cutoff, cfg.cutoff + 1)
    w = 1.0 / freq_weight_sq(n)
    wn = w * TWO_PI * n
    xs = np.empty(count)
    ys = np.empty(count)
    done = 0
    while done < count:
        m = min(chunk, count - done)
        raw0 = (first_draw + done) * block
        e = _exponentials(cfg.seed, cfg.stream_id, raw0, m * block).reshape(m, block)
        sq = 2.0 * e[:, :modes]
        xs[done:done + m] = sq @ w
        ys[done:done + m] = sq @ wn
        done += m
    return xs, ys


def sample_loop_areas(cutoff: int, seed: int, stream_id: int, count: int,
                      first_draw: int = 0, chunk: int = 4096) -> np.ndarray:
    """Loop areas sum_{n>=1} (|g_n|^2 - |g_{-n}|^2) / (2 pi n), drawn directly."""
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    block = _block_raws(2 * cutoff)
    inv = 1.0 / (TWO_PI * np.arange(1, cutoff + 1))
    out = np.empty(count)
    done = 0
    while done < count:
        m = min(chunk, count - done)
        raw0 = (first_draw + done) * block
        e = _exponentials(seed, stream_id, raw0, m * block).reshape(m, block)
        diff = 2.0 * (e[:, :cutoff] - e[:, cutoff:2 * cutoff])
        out[done:done + m] = diff @ inv
        done += m
    return out
