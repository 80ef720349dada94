"""Spectral representation of mean-zero real fields on the torus.

Fields are stored as the complex coefficients of modes k = 1..N only; the
k = 0 mode is structurally absent (everything here is mean-zero) and
negative modes are implied by conjugate symmetry.  With the convention

    f(x) = sum_{k=1}^{N} ( c_k e^{ikx} + conj(c_k) e^{-ikx} ),

every stored field is exactly real-valued and mean-zero by construction.

All linear operators are diagonal Fourier multipliers.  Products are
computed on an oversampled physical grid so the retained modes are exact
(no aliasing); the mean and above-cutoff content generated by a product
are discarded and reported.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, GridMismatch, NegativeTime

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class Grid:
    """Mode count, dissipation exponent, and torus length."""

    n_modes: int
    gamma: float
    domain_length: float = TWO_PI

    def __post_init__(self):
        if self.n_modes < 2:
            raise ValueError(f"need at least 2 modes, got {self.n_modes}")
        if not (1.0 < self.gamma <= 2.0):
            raise ValueError(f"gamma must lie in (1, 2], got {self.gamma}")
        if self.domain_length <= 0:
            raise ValueError("domain_length must be positive")

    @property
    def wavenumbers(self) -> np.ndarray:
        return np.arange(1, self.n_modes + 1, dtype=float)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.complex128)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class FourierField:
    """Immutable mean-zero real field, stored as modes k = 1..N."""

    modes: np.ndarray
    grid: Grid

    def __post_init__(self):
        if self.modes.shape != (self.grid.n_modes,):
            raise ValueError(
                f"modes shape {self.modes.shape} != ({self.grid.n_modes},)")
        object.__setattr__(self, "modes", _frozen(self.modes))

    # ------------------------------------------------------------ factories

    @classmethod
    def zero(cls, grid: Grid) -> "FourierField":
        return cls(np.zeros(grid.n_modes, dtype=np.complex128), grid)

    @classmethod
    def pure_mode(cls, grid: Grid, k: int, coeff: complex = 1.0) -> "FourierField":
        """Field c e^{ikx} + conj, i.e. 2|c| cos(kx + arg c)."""
        if not (1 <= k <= grid.n_modes):
            raise ValueError(f"mode {k} outside 1..{grid.n_modes}")
        m = np.zeros(grid.n_modes, dtype=np.complex128)
        m[k - 1] = coeff
        return cls(m, grid)

    @classmethod
    def random(cls, grid: Grid, rng, scale=1.0, decay=0.0) -> "FourierField":
        """Gaussian random field; optional |k|^-decay spectral envelope."""
        n = grid.n_modes
        z = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / np.sqrt(2.0)
        env = scale * grid.wavenumbers ** (-decay) if decay else scale
        return cls(z * env, grid)

    # ------------------------------------------------------------ evaluation

    def to_physical(self, n_points: int | None = None) -> np.ndarray:
        """Sample on a uniform grid of n_points (default 4N)."""
        if n_points is None:
            n_points = 4 * self.grid.n_modes
        return modes_to_physical(self.modes, n_points)

    def __add__(self, other):
        self._check(other)
        return FourierField(self.modes + other.modes, self.grid)

    def __sub__(self, other):
        self._check(other)
        return FourierField(self.modes - other.modes, self.grid)

    def __mul__(self, scalar):
        return FourierField(self.modes * scalar, self.grid)

    __rmul__ = __mul__

    def __neg__(self):
        return FourierField(-self.modes, self.grid)

    def _check(self, other):
        if not isinstance(other, FourierField) or other.grid != self.grid:
            raise GridMismatch("fields live on different grids")

    def l2(self) -> float:
        """Physical L2 norm (unitary convention, counts both +-k)."""
        return float(np.sqrt(2.0 * np.sum(np.abs(self.modes) ** 2)))


# ---------------------------------------------------------------- transforms


def modes_to_physical(modes: np.ndarray, n_points: int) -> np.ndarray:
    """Synthesize real samples from k=1..N coefficients (batched over
    leading axes)."""
    n = modes.shape[-1]
    if n_points < 2 * n + 1:
        raise ValueError(f"{n_points} points cannot carry {n} modes")
    spec = np.zeros(modes.shape[:-1] + (n_points // 2 + 1,), dtype=np.complex128)
    spec[..., 1:n + 1] = modes * n_points
    return np.fft.irfft(spec, n=n_points, axis=-1)


def physical_to_modes(values: np.ndarray, n_modes: int) -> np.ndarray:
    """Analyze real samples back to k=1..N coefficients (batched)."""
    n_points = values.shape[-1]
    spec = np.fft.rfft(values, axis=-1) / n_points
    return np.ascontiguousarray(spec[..., 1:n_modes + 1])


def product_modes(a: np.ndarray, b: np.ndarray, n_modes: int,
                  with_report: bool = False):
    """Dealiased product of two mode arrays (batched over leading axes).

    The physical grid has 4(N+1) points, so every mode up to 2N of the
    product is represented exactly; the result keeps modes 1..N.  With
    ``with_report`` also returns the discarded (mean + above-cutoff)
    energy, |c0|^2 + 2 sum_{k>N} |c_k|^2, per batch element.
    """
    m = 4 * (n_modes + 1)
    pa = modes_to_physical(a, m)
    pb = modes_to_physical(b, m)
    spec = np.fft.rfft(pa * pb, axis=-1) / m
    out = np.ascontiguousarray(spec[..., 1:n_modes + 1])
    if not with_report:
        return out
    zero = np.abs(spec[..., 0]) ** 2
    high = 2.0 * np.sum(np.abs(spec[..., n_modes + 1:]) ** 2, axis=-1)
    return out, (zero, high)


def pointwise_product(f: FourierField, g: FourierField,
                      with_report: bool = False):
    """Exact dealiased product, truncated back to the shared grid."""
    if f.grid != g.grid:
        raise GridMismatch("product of fields on different grids")
    if with_report:
        out, (zero, high) = product_modes(f.modes, g.modes, f.grid.n_modes,
                                          with_report=True)
        return FourierField(out, f.grid), {"zero_mode_energy": float(zero),
                                           "high_mode_energy": float(high)}
    return FourierField(product_modes(f.modes, g.modes, f.grid.n_modes), f.grid)


# ---------------------------------------------------------------- multipliers


def _apply(f: FourierField, mult: np.ndarray) -> FourierField:
    return FourierField(f.modes * mult, f.grid)


def laplacian_symbol(grid: Grid, gamma: float) -> np.ndarray:
    """Multiplier of the fractional dissipation: -|k|^gamma."""
    return -grid.wavenumbers ** gamma


def apply_fractional_laplacian(f: FourierField, gamma: float) -> FourierField:
    if not (1.0 < gamma <= 2.0):
        raise ValueError(f"gamma must lie in (1, 2], got {gamma}")
    return _apply(f, laplacian_symbol(f.grid, gamma))


def apply_fractional_derivative(f: FourierField, beta: float) -> FourierField:
    """|D|^beta: even multiplier |k|^beta."""
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    return _apply(f, f.grid.wavenumbers ** beta)


def derivative_symbol(grid: Grid) -> np.ndarray:
    """Multiplier of d/dx on the stored (positive) modes."""
    return 1j * grid.wavenumbers * (TWO_PI / grid.domain_length)


def apply_derivative(f: FourierField) -> FourierField:
    return _apply(f, derivative_symbol(f.grid))


def semigroup_factors(grid: Grid, t: float, gamma: float) -> np.ndarray:
    if t < 0:
        raise NegativeTime(f"semigroup needs t >= 0, got {t}")
    return np.exp(-t * grid.wavenumbers ** gamma)


def semigroup(f: FourierField, t: float, gamma: float) -> FourierField:
    """Heat flow of the fractional dissipation: factor e^{-t |k|^gamma}."""
    return _apply(f, semigroup_factors(f.grid, t, gamma))


# ---------------------------------------------------------------- mollifier


def bump_profile(y: np.ndarray) -> np.ndarray:
    """Smooth even bump: exp(1 - 1/(1-y^2)) for |y| < 1, else 0."""
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    inside = np.abs(y) < 1.0
    yi = y[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - yi * yi))
    return out


_PROFILES = {"bump": (bump_profile, 1.0)}


@dataclass(frozen=True)
class Mollifier:
    """Spectral cutoff phi(eps k); eps = 0 means no mollification."""

    epsilon: float
    profile: str = "bump"

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.profile not in _PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}")

    @property
    def support_radius(self) -> float:
        return _PROFILES[self.profile][1]

    def factors(self, k: np.ndarray) -> np.ndarray:
        """phi(eps k) on an array of wavenumbers."""
        if self.epsilon == 0.0:
            return np.ones_like(np.asarray(k, dtype=float))
        fn = _PROFILES[self.profile][0]
        return fn(self.epsilon * np.asarray(k, dtype=float))

    def resolved_by(self, grid: Grid) -> bool:
        """True when every mode inside the support is carried by the grid."""
        if self.epsilon == 0.0:
            return True
        return grid.n_modes >= self.support_radius / self.epsilon


def mollify(f: FourierField, m: Mollifier) -> FourierField:
    return _apply(f, m.factors(f.grid.wavenumbers))


# ---------------------------------------------------------------- snapshots

_MAGIC = b"GFSB"
_VERSION = 1


def write_snapshot(f: FourierField, path, beta: float = 0.0) -> None:
    """Binary snapshot: magic, version u16, N u32, gamma f64, beta f64,
    then re/im interleaved f64 little-endian for k = 1..N."""
    n = f.grid.n_modes
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HId d", _VERSION, n, f.grid.gamma, beta))
        inter = np.empty(2 * n, dtype="<f8")
        inter[0::2] = f.modes.real
        inter[1::2] = f.modes.imag
        fh.write(inter.tobytes())


def read_snapshot(path):
    """Returns (FourierField, beta)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}")
    version, n, gamma, beta = struct.unpack("<HId d", raw[4:4 + 22])
    if version != _VERSION:
        raise FormatError(f"unsupported snapshot version {version}")
    body = np.frombuffer(raw[4 + 22:], dtype="<f8")
    if body.size != 2 * n:
        raise FormatError(f"expected {2*n} floats, found {body.size}")
    modes = body[0::2] + 1j * body[1::2]
    return FourierField(modes, Grid(n, gamma)), beta


def field_to_csv(f: FourierField, path) -> None:
    """Rows (k, re, im)."""
    with open(path, "w") as fh:
        fh.write("k,re,im\n")
        for k, c in zip(range(1, f.grid.n_modes + 1), f.modes):
            fh.write(f"{k},{float(c.real)!r},{float(c.imag)!r}\n")
