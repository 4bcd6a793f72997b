"""Periodic cubic grid, FFTs, spectral differential operators and the Leray projection.

Fields live on the box [-L, L]^3 sampled at x_j = -L + j*h, h = 2L/n, so the
origin is the grid node j = n/2.  In memory a field is an array of shape
(ncomp, n, n, n) indexed [component, ix, iy, iz]; the on-disk layout (x-index
fastest) is handled in :mod:`ssns.io`.

Spectral coefficients are the unnormalized real DFT along (x, y, z), with the
z axis halved (``scipy.fft.rfftn``).  Integer wavevector k maps to the physical
wavenumber xi = pi*k/L.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.fft as sfft
from scipy import ndimage
from scipy.special import erf

from .errors import ConfigError

ALLOWED_N = (32, 64, 128, 256)


class GridError(ConfigError):
    """Raised on inconsistent grids or field sizes."""


def workers() -> int:
    """Thread count for FFTs, capped by the SSNS_THREADS environment variable."""
    val = os.environ.get("SSNS_THREADS")
    if val:
        try:
            return max(1, int(val))
        except ValueError:
            pass
    return 1


@dataclass(frozen=True)
class GridSpec:
    n: int
    L: float

    def __post_init__(self):
        if self.n not in ALLOWED_N:
            raise GridError(f"n must be one of {ALLOWED_N}, got {self.n}")
        if not (np.isfinite(self.L) and self.L > 0):
            raise GridError(f"L must be positive, got {self.L}")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def shape(self) -> Tuple[int, int, int]:
        return (self.n, self.n, self.n)

    @property
    def kshape(self) -> Tuple[int, int, int]:
        return (self.n, self.n, self.n // 2 + 1)

    def axis(self) -> np.ndarray:
        """1D coordinates -L + j h."""
        return -self.L + self.h * np.arange(self.n)

    def coords(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable coordinate arrays (x, y, z)."""
        a = self.axis()
        return a[:, None, None], a[None, :, None], a[None, None, :]

    def radius(self) -> np.ndarray:
        x, y, z = self.coords()
        return np.sqrt(x * x + y * y + z * z)

    def inner_mask(self, frac: float = 0.5) -> np.ndarray:
        """Boolean mask of the inner ball |x| <= frac*L."""
        return self.radius() <= frac * self.L + 1e-12

    def int_wavenumbers(self):
        """Broadcastable integer wavenumbers (kx, ky, kz) for the rfft layout."""
        n = self.n
        kx = np.fft.fftfreq(n, 1.0 / n)
        kz = np.fft.rfftfreq(n, 1.0 / n)
        return kx[:, None, None], kx[None, :, None], kz[None, None, :]

    def wavenumbers(self):
        """Broadcastable physical wavenumbers xi = pi k / L."""
        s = np.pi / self.L
        kx, ky, kz = self.int_wavenumbers()
        return s * kx, s * ky, s * kz


@dataclass(frozen=True, eq=False)
class RealField:
    spec: GridSpec
    data: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        d = np.asarray(self.data, dtype=float)
        if d.ndim == 3:
            d = d[None]
        if d.ndim != 4 or d.shape[1:] != self.spec.shape or d.shape[0] not in (1, 3):
            raise GridError(f"field shape {d.shape} inconsistent with n={self.spec.n}")
        if not np.all(np.isfinite(d)):
            raise GridError("field contains non-finite samples")
        object.__setattr__(self, "data", d)

    @property
    def ncomp(self) -> int:
        return self.data.shape[0]

    def __add__(self, other: "RealField") -> "RealField":
        _check_same(self.spec, other.spec)
        return RealField(self.spec, self.data + other.data)

    def __sub__(self, other: "RealField") -> "RealField":
        _check_same(self.spec, other.spec)
        return RealField(self.spec, self.data - other.data)

    def scaled(self, c: float) -> "RealField":
        return RealField(self.spec, c * self.data)

    def magnitude(self) -> np.ndarray:
        return np.sqrt(np.sum(self.data ** 2, axis=0))


@dataclass(frozen=True, eq=False)
class SpectralField:
    spec: GridSpec
    coeffs: np.ndarray
    dealiased: bool = False

    def __post_init__(self):
        c = np.asarray(self.coeffs)
        if c.ndim == 3:
            c = c[None]
        if c.ndim != 4 or c.shape[1:] != self.spec.kshape or c.shape[0] not in (1, 3):
            raise GridError(f"spectral shape {c.shape} inconsistent with n={self.spec.n}")
        object.__setattr__(self, "coeffs", c.astype(complex, copy=False))

    @property
    def ncomp(self) -> int:
        return self.coeffs.shape[0]


def _check_same(a: GridSpec, b: GridSpec):
    if a != b:
        raise GridError(f"grid mismatch: {a} vs {b}")


def zeros(spec: GridSpec, ncomp: int = 3) -> RealField:
    return RealField(spec, np.zeros((ncomp,) + spec.shape))


# ---------------------------------------------------------------------------
# transforms


def transform(f: RealField) -> SpectralField:
    c = sfft.rfftn(f.data, axes=(1, 2, 3), workers=workers())
    return SpectralField(f.spec, c)


def inverse(f: SpectralField) -> RealField:
    n = f.spec.n
    d = sfft.irfftn(f.coeffs, s=(n, n, n), axes=(1, 2, 3), workers=workers())
    return RealField(f.spec, d)


def _rfft_weights(spec: GridSpec) -> np.ndarray:
    """Multiplicity of each stored rfft mode in the full spectrum."""
    n = spec.n
    w = np.full(n // 2 + 1, 2.0)
    w[0] = 1.0
    w[-1] = 1.0
    return w[None, None, :]


def energy(f: RealField) -> float:
    """Discrete L2 energy sum |f|^2 h^3."""
    return float(np.sum(f.data ** 2) * f.spec.h ** 3)


def spectral_energy(f: SpectralField) -> float:
    """Energy computed from coefficients (Parseval counterpart of :func:`energy`)."""
    s = f.spec
    tot = np.sum(_rfft_weights(s) * np.abs(f.coeffs) ** 2)
    return float(tot * s.h ** 3 / s.n ** 3)


def inner(f: SpectralField, g: SpectralField) -> complex:
    """Discrete inner product <f, g> = sum f conj(g) h^3 from coefficients."""
    s = f.spec
    tot = np.sum(_rfft_weights(s) * f.coeffs * np.conj(g.coeffs))
    return complex(tot * s.h ** 3 / s.n ** 3)


# ---------------------------------------------------------------------------
# dealiasing and projection


@lru_cache(maxsize=8)
def dealias_mask(spec: GridSpec) -> np.ndarray:
    """True on modes kept by the 2/3 rule (all |k_i| <= n/3)."""
    kx, ky, kz = spec.int_wavenumbers()
    c = spec.n / 3.0
    return (np.abs(kx) <= c) & (np.abs(ky) <= c) & (np.abs(kz) <= c)


def dealias(f: SpectralField) -> SpectralField:
    return SpectralField(f.spec, f.coeffs * dealias_mask(f.spec), dealiased=True)


def _xi_list(spec: GridSpec):
    return spec.wavenumbers()


def helmholtz_project(f: SpectralField) -> SpectralField:
    """Apply I - xi xi^T/|xi|^2 mode by mode; the zero mode passes through."""
    if f.ncomp != 3:
        raise GridError("helmholtz_project needs a 3-component field")
    xi = _xi_list(f.spec)
    k2 = xi[0] ** 2 + xi[1] ** 2 + xi[2] ** 2
    inv = np.where(k2 > 0, 1.0 / np.where(k2 > 0, k2, 1.0), 0.0)
    dot = xi[0] * f.coeffs[0] + xi[1] * f.coeffs[1] + xi[2] * f.coeffs[2]
    out = np.empty_like(f.coeffs)
    for i in range(3):
        out[i] = f.coeffs[i] - xi[i] * dot * inv
    return SpectralField(f.spec, out, f.dealiased)


def divergence_spectral(f: SpectralField) -> np.ndarray:
    """Per-mode divergence multiplier i xi . f."""
    xi = _xi_list(f.spec)
    return 1j * (xi[0] * f.coeffs[0] + xi[1] * f.coeffs[1] + xi[2] * f.coeffs[2])


def max_divergence(f: SpectralField) -> float:
    """Max over modes of |i xi . f| divided by max over modes of |xi||f|."""
    xi = _xi_list(f.spec)
    k = np.sqrt(xi[0] ** 2 + xi[1] ** 2 + xi[2] ** 2)
    scale = np.max(k * np.sqrt(np.sum(np.abs(f.coeffs) ** 2, axis=0)))
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(divergence_spectral(f))) / scale)


# ---------------------------------------------------------------------------
# derivatives


def _odd_nyquist_zero(spec: GridSpec, arr: np.ndarray) -> np.ndarray:
    n = spec.n
    arr = arr.copy()
    arr[..., n // 2, :, :] = 0
    arr[..., :, n // 2, :] = 0
    arr[..., :, :, n // 2] = 0
    return arr


def derivative(f: SpectralField, axis: int, order: int = 1) -> SpectralField:
    """d^order/dx_axis^order spectrally; Nyquist modes dropped for odd orders."""
    xi = _xi_list(f.spec)[axis]
    c = f.coeffs * (1j * xi) ** order
    if order % 2:
        c = _odd_nyquist_zero(f.spec, c)
    return SpectralField(f.spec, c, f.dealiased)


def gradient(f: SpectralField) -> SpectralField:
    """Gradient of a scalar field (3 components)."""
    if f.ncomp != 1:
        raise GridError("gradient expects a scalar field")
    xi = _xi_list(f.spec)
    c = np.stack([_odd_nyquist_zero(f.spec, 1j * x * f.coeffs[0]) for x in xi])
    return SpectralField(f.spec, c, f.dealiased)


def jacobian(f: SpectralField) -> np.ndarray:
    """Physical-space derivatives J[i, j] = d f_i / d x_j, shape (ncomp, 3, n, n, n)."""
    xi = _xi_list(f.spec)
    n = f.spec.n
    out = np.empty((f.ncomp, 3) + f.spec.shape)
    for i in range(f.ncomp):
        for j in range(3):
            c = _odd_nyquist_zero(f.spec, 1j * xi[j] * f.coeffs[i])
            out[i, j] = sfft.irfftn(c, s=(n, n, n), workers=workers())
    return out


def divergence(f: SpectralField) -> SpectralField:
    xi = _xi_list(f.spec)
    c = sum(_odd_nyquist_zero(f.spec, 1j * xi[j] * f.coeffs[j]) for j in range(3))
    return SpectralField(f.spec, c[None], f.dealiased)


def laplacian(f: SpectralField) -> SpectralField:
    xi = _xi_list(f.spec)
    k2 = xi[0] ** 2 + xi[1] ** 2 + xi[2] ** 2
    return SpectralField(f.spec, -k2 * f.coeffs, f.dealiased)


def scale_drift(f: SpectralField) -> RealField:
    """x . grad f, differentiated spectrally and multiplied by x in physical space.

    Only meaningful on the inner box |x| <= L/2; the returned field records this
    in ``meta['valid_radius']``.
    """
    spec = f.spec
    n = spec.n
    xi = _xi_list(spec)
    x = spec.coords()
    out = np.zeros((f.ncomp,) + spec.shape)
    for i in range(f.ncomp):
        for j in range(3):
            c = _odd_nyquist_zero(spec, 1j * xi[j] * f.coeffs[i])
            out[i] += x[j] * sfft.irfftn(c, s=(n, n, n), workers=workers())
    return RealField(spec, out, {"valid_radius": 0.5 * spec.L})


def heat(f: SpectralField, t: float) -> SpectralField:
    """Periodic heat semigroup e^{t Delta}."""
    xi = _xi_list(f.spec)
    k2 = xi[0] ** 2 + xi[1] ** 2 + xi[2] ** 2
    return SpectralField(f.spec, np.exp(-t * k2) * f.coeffs, f.dealiased)


# ---------------------------------------------------------------------------
# products and pressure


def products(U: RealField, B: RealField) -> SpectralField:
    """Transforms of all products U_i B_j as a (9,...) coefficient array, dealiased."""
    _check_same(U.spec, B.spec)
    spec = U.spec
    m = dealias_mask(spec)
    out = np.empty((9,) + spec.kshape, dtype=complex)
    for i in range(3):
        for j in range(3):
            out[3 * i + j] = sfft.rfftn(U.data[i] * B.data[j], workers=workers()) * m
    return out


def pressure_from_velocity(U: SpectralField, B: SpectralField) -> SpectralField:
    """Scalar p with Delta p + div div(U (x) B) = 0; zero mode set to 0.

    Inputs are dealiased before the pointwise product and the result is
    dealiased, so the identity holds exactly mode by mode.
    """
    _check_same(U.spec, B.spec)
    spec = U.spec
    u = inverse(dealias(U))
    b = inverse(dealias(B))
    T = products(u, b)
    return pressure_from_products(spec, T)


def pressure_from_products(spec: GridSpec, T: np.ndarray) -> SpectralField:
    xi = _xi_list(spec)
    k2 = xi[0] ** 2 + xi[1] ** 2 + xi[2] ** 2
    inv = np.where(k2 > 0, 1.0 / np.where(k2 > 0, k2, 1.0), 0.0)
    acc = np.zeros(spec.kshape, dtype=complex)
    for i in range(3):
        for j in range(3):
            acc += xi[i] * xi[j] * T[3 * i + j]
    p = -acc * inv
    p[0, 0, 0] = 0.0
    return SpectralField(spec, p, True)


def divdiv_products(spec: GridSpec, T: np.ndarray) -> np.ndarray:
    """Coefficients of div div(T) = d_i d_j T_ij."""
    xi = _xi_list(spec)
    acc = np.zeros(spec.kshape, dtype=complex)
    for i in range(3):
        for j in range(3):
            acc -= xi[i] * xi[j] * T[3 * i + j]
    return acc


def div_products(spec: GridSpec, T: np.ndarray) -> SpectralField:
    """Coefficients of the vector div(T)_i = d_j T_ij."""
    xi = _xi_list(spec)
    out = np.zeros((3,) + spec.kshape, dtype=complex)
    for i in range(3):
        for j in range(3):
            out[i] += 1j * xi[j] * T[3 * i + j]
    return SpectralField(spec, out, True)


# ---------------------------------------------------------------------------
# windowing and interpolation


def taper_1d(x: np.ndarray, L: float, a: float = 0.75, width: float = 0.05) -> np.ndarray:
    """Smooth plateau equal to 1 on |x| < a L, decaying to ~0 at the faces."""
    s = width * L
    return 0.5 * (erf((x + a * L) / s) - erf((x - a * L) / s))


def taper(spec: GridSpec, a: float = 0.75, width: float = 0.05) -> np.ndarray:
    """Separable window used to make slowly decaying fields periodic."""
    w = taper_1d(spec.axis(), spec.L, a, width)
    return w[:, None, None] * w[None, :, None] * w[None, None, :]


def sample(spec: GridSpec, func, ncomp: int = 3) -> RealField:
    """Evaluate func(points[N,3]) -> (N, ncomp) on every grid node, slab by slab."""
    a = spec.axis()
    n = spec.n
    out = np.empty((ncomp, n, n, n))
    Y, Z = np.meshgrid(a, a, indexing="ij")
    for i in range(n):
        pts = np.column_stack([np.full(n * n, a[i]), Y.ravel(), Z.ravel()])
        v = np.asarray(func(pts), dtype=float).reshape(n * n, ncomp)
        out[:, i] = v.T.reshape(ncomp, n, n)
    return RealField(spec, out)


class Interpolator:
    """Periodic B-spline interpolation of a grid field (cubic by default)."""

    def __init__(self, f: RealField, order: int = 3):
        self.spec = f.spec
        self.order = order
        self.coef = [ndimage.spline_filter(f.data[c], order=order, mode="grid-wrap")
                     for c in range(f.ncomp)]

    def __call__(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        idx = (pts.T + self.spec.L) / self.spec.h
        vals = [ndimage.map_coordinates(c, idx, order=self.order, mode="grid-wrap", prefilter=False)
                for c in self.coef]
        return np.stack(vals, axis=-1)


def interpolate(f: RealField, pts, order: int = 3) -> np.ndarray:
    """Spline interpolation (tricubic by default) of f at points (N,3); returns (N, ncomp)."""
    return Interpolator(f, order)(pts)
