"""Littlewood-Paley blocks, Bony paraproducts, and norm estimators.

The dyadic partition lives in log2 of the wavenumber.  Block j >= 0 is a
plateau bump centred at j + 1/2 (plateau half-width 1/4, support
half-width 3/4); block -1 sits at -1/2 and catches the lowest modes.
After evaluating the raw bumps the weights are renormalized at every
mode, so the partition of unity is exact and block reconstruction is
bit-true, not merely close.

The three Bony pieces of a product f*g split over block pairs (i, j):
"lower" takes i <= j - 2, "resonant" |i - j| <= 1, "upper" i >= j + 2.
The time-smoothed variant replaces the low-pass factor with a causal
moving average whose memory shrinks like 2^(-gamma*i) with the block
index, mirroring the dissipation time-scale of that frequency band.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.signal import fftconvolve

from .errors import BlockOutOfRange, GridMismatch, InsufficientBlocks
from .spectral import (
    FourierField,
    Grid,
    bump_profile,
    modes_to_physical,
    product_modes,
)
from .trajectory import Trajectory

# ---------------------------------------------------------------- partition

_PLATEAU = 0.25
_SUPPORT = 0.75


def _transition(t: np.ndarray) -> np.ndarray:
    """Smooth step: 0 at t<=0, 1 at t>=1, C-infinity in between."""
    t = np.clip(t, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.maximum(t, 1e-300)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.maximum(1.0 - t, 1e-300)), 0.0)
    return a / (a + b)


def _plateau_bump(d: np.ndarray) -> np.ndarray:
    """1 on |d| <= 1/4, 0 beyond |d| >= 3/4, smooth in between."""
    x = np.abs(d)
    return _transition((_SUPPORT - x) / (_SUPPORT - _PLATEAU))


@lru_cache(maxsize=32)
def _partition_weights(n_modes: int):
    """Rows j = -1..J of normalized block weights over modes 1..N."""
    logk = np.log2(np.arange(1, n_modes + 1, dtype=float))
    j_max = int(math.floor(logk[-1] + _PLATEAU))
    rows = np.arange(-1, j_max + 1)
    raw = _plateau_bump(logk[None, :] - (rows[:, None] + 0.5))
    raw /= raw.sum(axis=0, keepdims=True)
    raw.flags.writeable = False
    return rows, raw


@dataclass(frozen=True)
class DyadicPartition:
    """Exact smooth partition of unity over dyadic frequency blocks."""

    n_modes: int
    j_max: int = field(init=False)

    def __post_init__(self):
        rows, _ = _partition_weights(self.n_modes)
        object.__setattr__(self, "j_max", int(rows[-1]))

    @classmethod
    def for_grid(cls, grid: Grid) -> "DyadicPartition":
        return cls(grid.n_modes)

    @property
    def block_count(self) -> int:
        return self.j_max + 2  # blocks -1 .. j_max

    def weights(self, j: int) -> np.ndarray:
        if not (-1 <= j <= self.j_max):
            raise BlockOutOfRange(
                f"block {j} outside -1..{self.j_max}")
        _, w = _partition_weights(self.n_modes)
        return w[j + 1]

    def lowpass_weights(self, m: int) -> np.ndarray:
        """Multiplier of the strict low-pass: sum of blocks i <= m - 1."""
        _, w = _partition_weights(self.n_modes)
        hi = min(m - 1, self.j_max) + 2  # one past the row of block m-1
        if hi <= 0:
            return np.zeros(self.n_modes)
        return w[:hi].sum(axis=0)


def lp_block(f: FourierField, j: int) -> FourierField:
    part = DyadicPartition(f.grid.n_modes)
    return FourierField(f.modes * part.weights(j), f.grid)


def lowpass(f: FourierField, m: int) -> FourierField:
    part = DyadicPartition(f.grid.n_modes)
    return FourierField(f.modes * part.lowpass_weights(m), f.grid)


# ---------------------------------------------------------------- paraproducts


def _para_masks(n_modes: int):
    """Per output block j: (lowpass S_{j-1} mask, resonant window mask,
    block mask)."""
    part = DyadicPartition(n_modes)
    _, w = _partition_weights(n_modes)
    out = []
    for j in range(-1, part.j_max + 1):
        lo = part.lowpass_weights(j - 1)
        lo_row = max(j - 1 + 1, 0)
        hi_row = min(j + 1 + 1, part.j_max + 1)
        window = w[lo_row:hi_row + 1].sum(axis=0)
        out.append((lo, window, w[j + 1]))
    return out


def _bilinear(f_modes, g_modes, n_modes, which: str):
    """Shared engine: sums dealiased products of masked mode arrays.

    which = "lower": sum_j S_{j-1} f * Delta_j g
    which = "resonant": sum_{|i-j|<=1} Delta_i f * Delta_j g
    """
    acc = np.zeros_like(g_modes)
    for lo, window, blk in _para_masks(n_modes):
        left = f_modes * (lo if which == "lower" else window)
        acc = acc + product_modes(left, g_modes * blk, n_modes)
    return acc


def paraproduct_lower(f: FourierField, g: FourierField) -> FourierField:
    """Low-high pairing of f against g (f is the smoothed factor)."""
    if f.grid != g.grid:
        raise GridMismatch("paraproduct of fields on different grids")
    return FourierField(_bilinear(f.modes, g.modes, f.grid.n_modes, "lower"),
                        f.grid)


def resonant(f: FourierField, g: FourierField) -> FourierField:
    """Diagonal pairing over blocks at distance <= 1."""
    if f.grid != g.grid:
        raise GridMismatch("resonant product of fields on different grids")
    return FourierField(_bilinear(f.modes, g.modes, f.grid.n_modes,
                                  "resonant"), f.grid)


def paraproduct_upper(f: FourierField, g: FourierField) -> FourierField:
    """High-low pairing: mirror image of the lower paraproduct."""
    return paraproduct_lower(g, f)


def bony_decomposition(f: FourierField, g: FourierField):
    """(f lower g, f resonant g, f upper g); the three sum to f*g."""
    return paraproduct_lower(f, g), resonant(f, g), paraproduct_upper(f, g)


# ------------------------------------------------------- time-smoothed lower


def time_profile(u: np.ndarray) -> np.ndarray:
    """Causal mass-carrying profile supported in (0, 1)."""
    return bump_profile(2.0 * np.asarray(u, dtype=float) - 1.0)


@lru_cache(maxsize=256)
def _lag_weights(dt: float, gamma: float, j: int) -> np.ndarray:
    """Normalized causal lag weights for block j at step dt.

    The continuum kernel for block j has support (0, 2^(-gamma j)); the
    discrete weights sample it at lags l*dt and renormalize, so a
    constant-in-time input is reproduced exactly.  When the support
    holds no positive lag the kernel degenerates to a point mass at lag
    zero (no smoothing for bands faster than the time grid).
    """
    scale = 2.0 ** (-gamma * j)
    n_lags = int(math.floor(scale / dt))
    if n_lags >= 1:
        lags = np.arange(n_lags + 1, dtype=float)
        w = time_profile(lags * dt / scale)
        total = w.sum()
        if total > 0:
            w = w / total
            w.flags.writeable = False
            return w
    w = np.array([1.0])
    w.flags.writeable = False
    return w


@dataclass(frozen=True)
class TimeMollifierBank:
    """Causal per-block moving averages with memory 2^(-gamma j)."""

    dt: float
    gamma: float

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not (1.0 < self.gamma <= 2.0):
            raise ValueError(f"gamma must lie in (1, 2], got {self.gamma}")

    def lag_weights(self, j: int) -> np.ndarray:
        return _lag_weights(self.dt, self.gamma, j)

    def mean_lag(self, j: int) -> float:
        w = self.lag_weights(j)
        return float(np.dot(w, np.arange(len(w))) * self.dt)

    def smooth(self, values: np.ndarray, j: int) -> np.ndarray:
        """Apply the block-j average along axis 0, reading index 0 for
        times before the start (clamped history)."""
        w = self.lag_weights(j)
        if len(w) == 1:
            return values
        n = len(values)
        kernel = w.reshape((-1,) + (1,) * (values.ndim - 1))
        out = fftconvolve(values, kernel, axes=0)[:n]
        # lags reaching past the first node read the clamped value there
        cum = np.cumsum(w)
        tail = np.zeros(n)
        upto = min(n, len(w))
        tail[:upto] = np.clip(1.0 - cum[:upto], 0.0, None)
        out = out + tail.reshape((-1,) + (1,) * (values.ndim - 1)) * values[0]
        return out


def modified_paraproduct(f: Trajectory, g: Trajectory,
                         bank: TimeMollifierBank) -> Trajectory:
    """Lower paraproduct with a causally time-averaged low-pass factor."""
    f._check(g)
    acc = np.zeros_like(g.modes)
    for j, (lo, _, blk) in enumerate(_para_masks(g.grid.n_modes), start=-1):
        left = bank.smooth(f.modes * lo, j)
        acc = acc + product_modes(left, g.modes * blk, g.grid.n_modes)
    return Trajectory(g.times, acc, g.grid)


# ---------------------------------------------------------------- norms


@dataclass(frozen=True)
class NormRecord:
    holder_s: float
    sobolev_s: float
    value_holder: float
    value_sobolev: float
    time_holder_exponent: float = 0.0
    value_time: float = 0.0

    @property
    def value_w(self) -> float:
        """Norm of the intersection space: max of the two spatial reads."""
        return max(self.value_holder, self.value_sobolev)


_OVERSAMPLE = 8


def sobolev_norm(f: FourierField, s: float) -> float:
    k = f.grid.wavenumbers
    return float(np.sqrt(2.0 * np.sum(k ** (2 * s) * np.abs(f.modes) ** 2)))


def _block_sup_norms(modes: np.ndarray, n_modes: int) -> np.ndarray:
    """L-infinity of every block, batched over leading axes; the sup is
    read on an 8x-oversampled physical grid."""
    _, w = _partition_weights(n_modes)
    blocks = modes[..., None, :] * w  # (..., J+2, N)
    vals = modes_to_physical(blocks, _OVERSAMPLE * n_modes)
    return np.max(np.abs(vals), axis=-1)


def holder_norm(f: FourierField, s: float) -> float:
    """Besov sup-type norm: sup_j 2^(js) * block sup-norm."""
    part = DyadicPartition(f.grid.n_modes)
    sups = _block_sup_norms(f.modes, f.grid.n_modes)
    j = np.arange(-1, part.j_max + 1, dtype=float)
    return float(np.max(2.0 ** (j * s) * sups))


def estimate_norms(f: FourierField, s: float) -> NormRecord:
    return NormRecord(holder_s=s, sobolev_s=s,
                      value_holder=holder_norm(f, s),
                      value_sobolev=sobolev_norm(f, s))


_MAX_PAIR_NODES = 1024


def estimate_space_time(traj: Trajectory, alpha: float,
                        gamma: float) -> NormRecord:
    """Sup-in-time spatial norms plus a time-Hoelder seminorm.

    The spatial part reads max(holder, sobolev) at exponent alpha over
    every node.  The temporal part measures increments in the flat
    (s = 0) norms at exponent alpha/gamma: the sobolev side over all
    node pairs separated by at least two steps (subsampled to at most
    1024 nodes on long trajectories), the sup-norm side over a geometric
    ladder of separations.
    """
    n = traj.grid.n_modes
    value_sob = float(np.max(np.sqrt(
        2.0 * np.sum((traj.grid.wavenumbers ** (2 * alpha))[None, :]
                     * np.abs(traj.modes) ** 2, axis=-1))))
    part = DyadicPartition(n)
    j = np.arange(-1, part.j_max + 1, dtype=float)
    sups = _block_sup_norms(traj.modes, n)  # (T, J+2)
    value_hold = float(np.max(2.0 ** (j * alpha)[None, :] * sups))

    a_t = alpha / gamma
    times = traj.times
    idx = np.arange(len(times))
    if len(times) > _MAX_PAIR_NODES:
        idx = np.unique(np.linspace(0, len(times) - 1,
                                    _MAX_PAIR_NODES).astype(int))
    m = traj.modes[idx]
    t = times[idx]
    gram = m @ m.conj().T
    d = np.real(np.diag(gram))
    sq = 2.0 * np.maximum(d[:, None] + d[None, :] - 2.0 * np.real(gram), 0.0)
    gaps = np.abs(t[:, None] - t[None, :])
    min_gap = 2.0 * np.min(np.diff(times))
    mask = gaps >= min_gap - 1e-12 * min_gap
    ratio_h0 = 0.0
    if np.any(mask):
        ratio_h0 = float(np.max(np.sqrt(sq[mask]) / gaps[mask] ** a_t))

    ratio_c0 = 0.0
    t_len = len(times)
    gap = 2
    while gap < t_len:
        starts = np.arange(0, t_len - gap, max(1, (t_len - gap) // 48))
        diff = traj.modes[starts + gap] - traj.modes[starts]
        sup = np.max(np.abs(modes_to_physical(diff, _OVERSAMPLE * n)), axis=-1)
        dt_gap = times[starts + gap] - times[starts]
        ratio_c0 = max(ratio_c0, float(np.max(sup / dt_gap ** a_t)))
        gap = max(gap + 1, int(gap * 1.6))

    return NormRecord(holder_s=alpha, sobolev_s=alpha,
                      value_holder=value_hold, value_sobolev=value_sob,
                      time_holder_exponent=a_t,
                      value_time=max(ratio_h0, ratio_c0))


# ---------------------------------------------------------------- slope


def regularity_slope_report(f: FourierField, j_range: tuple) -> dict:
    part = DyadicPartition(f.grid.n_modes)
    j_lo, j_hi = int(j_range[0]), int(j_range[1])
    if j_lo < -1 or j_hi > part.j_max:
        raise BlockOutOfRange(
            f"range {j_range} outside -1..{part.j_max}")
    if j_hi - j_lo + 1 < 4:
        raise InsufficientBlocks("need at least 4 blocks for a slope fit")
    sups = _block_sup_norms(f.modes, f.grid.n_modes)[j_lo + 1:j_hi + 2]
    top = float(np.max(sups))
    if top == 0.0:
        return {"slope": 0.0, "exponent": 0.0, "saturated": True,
                "blocks_used": 0}
    floor = top * 1e-14
    saturated = bool(np.any(sups < floor))
    logs = np.log2(np.maximum(sups, floor))
    js = np.arange(j_lo, j_hi + 1, dtype=float)
    slope = float(np.polyfit(js, logs, 1)[0])
    return {"slope": slope, "exponent": -slope, "saturated": saturated,
            "blocks_used": int(np.sum(sups >= floor))}


def regularity_slope(f: FourierField, j_range: tuple) -> float:
    """Least-squares slope of log2 block sup-norms against block index;
    minus the slope estimates the Hoelder exponent."""
    return regularity_slope_report(f, j_range)["slope"]


def block_profile(modes: np.ndarray, n_modes: int) -> np.ndarray:
    """Mean block sup-norms over the leading axes (for slope fits against
    sampled trajectories)."""
    sups = _block_sup_norms(modes, n_modes)
    return sups.reshape(-1, sups.shape[-1]).mean(axis=0)
