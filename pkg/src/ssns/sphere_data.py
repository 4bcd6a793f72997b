"""(-1)-homogeneous initial data described by its trace on the unit sphere.

The sphere is discretized by an equiangular colatitude/longitude grid with
Fejer (first rule) weights in cos(theta).  Off-node values come from a
double-Fourier-sphere interpolant: each Cartesian component is continued to
theta in (pi, 2 pi) via (theta, phi) -> (2 pi - theta, phi + pi), refined by
FFT zero padding and then read with a periodic quintic spline.  For band
limited traces this is exact up to the spline error on the refined grid.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import ndimage, signal
from scipy.spatial import cKDTree

from . import grid_spectral as gs
from .errors import DomainError, ResolutionError


# ---------------------------------------------------------------------------
# grid and fields


def fejer_weights(n: int) -> np.ndarray:
    """Fejer first-rule weights for nodes cos((j+1/2) pi/n) on [-1, 1]."""
    th = (np.arange(n) + 0.5) * np.pi / n
    m = np.arange(1, n // 2 + 1)
    s = np.cos(2.0 * np.outer(th, m)) / (4.0 * m * m - 1.0)
    return (2.0 / n) * (1.0 - 2.0 * s.sum(axis=1))


@dataclass(frozen=True, eq=False)
class SphereGrid:
    n_theta: int
    n_phi: int

    def __post_init__(self):
        if self.n_theta < 8 or self.n_phi < 16:
            raise ValueError("need n_theta >= 8 and n_phi >= 16")
        if self.n_phi % 2:
            raise ValueError("n_phi must be even")
        th = (np.arange(self.n_theta) + 0.5) * np.pi / self.n_theta
        ph = 2.0 * np.pi * np.arange(self.n_phi) / self.n_phi
        T, P = np.meshgrid(th, ph, indexing="ij")
        st = np.sin(T)
        nodes = np.stack([st * np.cos(P), st * np.sin(P), np.cos(T)], axis=-1).reshape(-1, 3)
        nodes /= np.linalg.norm(nodes, axis=1, keepdims=True)
        w = np.repeat(fejer_weights(self.n_theta) * (2.0 * np.pi / self.n_phi), self.n_phi)
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "phi", ph)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.n_theta * self.n_phi

    def __eq__(self, other):
        return isinstance(other, SphereGrid) and (self.n_theta, self.n_phi) == (other.n_theta, other.n_phi)

    def __hash__(self):
        return hash((self.n_theta, self.n_phi))

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Quadrature of node values over the unit sphere."""
        return np.tensordot(self.weights, values, axes=(0, 0))


@dataclass(frozen=True, eq=False)
class SphereField:
    grid: SphereGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.grid.size:
            raise ValueError(f"{v.shape[0]} values for {self.grid.size} nodes")
        if not np.all(np.isfinite(v)):
            raise ValueError("trace contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def ncomp(self) -> int:
        return self.values.shape[1]

    def sup_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.values, axis=1)))

    def scaled(self, c: float) -> "SphereField":
        return SphereField(self.grid, c * self.values)


class _DFSInterpolant:
    """Double-Fourier-sphere spline interpolant of a SphereField."""

    order = 5

    def __init__(self, f: SphereField, fine: int = 512):
        g = f.grid
        nt, npf = g.n_theta, g.n_phi
        V = f.values.reshape(nt, npf, -1)
        ext = np.concatenate([V, np.roll(V[::-1], npf // 2, axis=1)], axis=0)
        mt = max(1, int(math.ceil(fine / (2 * nt))))
        mp = max(1, int(math.ceil(fine / npf)))
        ext = signal.resample(ext, 2 * nt * mt, axis=0)
        ext = signal.resample(ext, npf * mp, axis=1)
        self.dth = np.pi / (nt * mt)
        self.dph = 2.0 * np.pi / (npf * mp)
        self.th0 = 0.5 * np.pi / nt
        self.coef = [ndimage.spline_filter(ext[..., c], order=self.order, mode="grid-wrap")
                     for c in range(ext.shape[-1])]

    def __call__(self, dirs: np.ndarray) -> np.ndarray:
        rho = np.hypot(dirs[:, 0], dirs[:, 1])
        th = np.arctan2(rho, dirs[:, 2])
        ph = np.mod(np.arctan2(dirs[:, 1], dirs[:, 0]), 2.0 * np.pi)
        idx = np.vstack([(th - self.th0) / self.dth, ph / self.dph])
        out = [ndimage.map_coordinates(c, idx, order=self.order, mode="grid-wrap", prefilter=False)
               for c in self.coef]
        return np.stack(out, axis=-1)


@dataclass(frozen=True, eq=False)
class HomogeneousField:
    """u0(x) = trace(x/|x|)/|x|."""

    trace: SphereField
    singularity_cutoff: Optional[float] = None
    div_residual: Optional[float] = None

    def __post_init__(self):
        if self.singularity_cutoff is not None and not self.singularity_cutoff > 0:
            raise ValueError("singularity cutoff must be positive")
        object.__setattr__(self, "_interp", None)

    def interpolant(self) -> _DFSInterpolant:
        if self._interp is None:
            object.__setattr__(self, "_interp", _DFSInterpolant(self.trace))
        return self._interp

    def trace_at(self, dirs) -> np.ndarray:
        """Interpolated trace at unit directions (N,3)."""
        return self.interpolant()(np.atleast_2d(np.asarray(dirs, dtype=float)))

    def scaled(self, c: float) -> "HomogeneousField":
        return HomogeneousField(self.trace.scaled(c), self.singularity_cutoff)

    def __call__(self, x) -> np.ndarray:
        return eval_homogeneous(self, x)


def eval_homogeneous(f: HomogeneousField, x) -> np.ndarray:
    """trace(x/|x|)/|x| for one point (3,) or many (N,3)."""
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    r = np.linalg.norm(pts, axis=1)
    if np.any(r == 0):
        raise DomainError("homogeneous data is singular at the origin")
    out = f.trace_at(pts / r[:, None]) / r[:, None]
    return out[0] if single else out


def eval_clamped(f: HomogeneousField, pts: np.ndarray, r_min: float) -> np.ndarray:
    """Homogeneous evaluation with |x| < r_min clamped along the ray; 0 at the origin."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    r = np.linalg.norm(pts, axis=1)
    out = np.zeros((len(pts), f.trace.ncomp))
    nz = r > 0
    d = pts[nz] / r[nz, None]
    out[nz] = f.trace_at(d) / np.maximum(r[nz], r_min)[:, None]
    return out


def sample_on_grid(f: HomogeneousField, spec: gs.GridSpec, r_min: Optional[float] = None) -> gs.RealField:
    """Sample u0 on the grid with the singularity cutoff (default 2h)."""
    if r_min is None:
        r_min = f.singularity_cutoff or 2.0 * spec.h
    return gs.sample(spec, lambda p: eval_clamped(f, p, r_min), ncomp=f.trace.ncomp)


# ---------------------------------------------------------------------------
# mollification


def bump(gamma: np.ndarray, eps: float) -> np.ndarray:
    """exp(-1/(1-(gamma/eps)^2)) for gamma < eps, else 0."""
    s = np.asarray(gamma) / eps
    out = np.zeros_like(s, dtype=float)
    m = s < 1.0
    out[m] = np.exp(-1.0 / (1.0 - s[m] ** 2))
    return out


def mollify_sphere(f: SphereField, eps: float) -> SphereField:
    """Average against a normalized bump of geodesic radius eps.

    Each output node is a convex combination of input node values (kernel times
    quadrature weight, normalized per node), so constants are reproduced exactly
    and sup norms cannot grow.
    """
    if not (0.0 < eps < np.pi / 4):
        raise ValueError("eps must lie in (0, pi/4)")
    g = f.grid
    nodes = g.nodes
    tree = cKDTree(nodes)
    chord = 2.0 * np.sin(eps / 2.0)
    nbrs = tree.query_ball_point(nodes, chord, return_sorted=False)
    rows = np.repeat(np.arange(g.size), [len(b) for b in nbrs])
    cols = np.concatenate([np.asarray(b, dtype=int) for b in nbrs])
    cosg = np.clip(np.einsum("ij,ij->i", nodes[rows], nodes[cols]), -1.0, 1.0)
    k = bump(np.arccos(cosg), eps) * g.weights[cols]
    norm = np.bincount(rows, weights=k, minlength=g.size)
    out = np.empty_like(f.values)
    for c in range(f.ncomp):
        out[:, c] = np.bincount(rows, weights=k * f.values[cols, c], minlength=g.size)
    out /= norm[:, None]
    # convex combinations: remove rounding excursions outside the input range
    lo, hi = f.values.min(axis=0), f.values.max(axis=0)
    out = np.clip(out, lo, hi)
    return SphereField(g, out)


def mollifier_damping(ell: int, eps: float, nquad: int = 400) -> float:
    """Funk-Hecke factor of the normalized bump on degree-ell harmonics."""
    from scipy.special import eval_legendre
    x, w = np.polynomial.legendre.leggauss(nquad)
    gam = 0.5 * eps * (x + 1.0)
    w = 0.5 * eps * w
    k = bump(gam, eps) * np.sin(gam)
    return float(np.sum(w * k * eval_legendre(ell, np.cos(gam))) / np.sum(w * k))


# ---------------------------------------------------------------------------
# divergence and projection


def divergence_on_sphere(f: HomogeneousField, dirs: Optional[np.ndarray] = None,
                         delta: float = 1e-5) -> np.ndarray:
    """div u0 at unit directions by central differences of the homogeneous evaluator.

    For u0 = g/r this equals (g_r + div_S g_t) at |x| = 1.
    """
    if dirs is None:
        dirs = f.trace.grid.nodes
    div = np.zeros(len(dirs))
    for i in range(3):
        e = np.zeros(3)
        e[i] = delta
        div += (eval_homogeneous(f, dirs + e)[:, i] - eval_homogeneous(f, dirs - e)[:, i]) / (2 * delta)
    return div


def _divergence_source(hfield: "HomogeneousField", spec: gs.GridSpec, r_min: float) -> np.ndarray:
    """Sampled h(x/|x|)/|x|^2 for a scalar sphere function h, regularized and windowed.

    The hard clamp used for velocity sampling rings at grid scale here and feeds
    high angular degrees back into the trace, so the source is multiplied by the
    smooth factor 1 - exp(-(r/r_min)^6) instead.  The result has zero mean.
    """
    R_w = 0.75 * spec.L
    width = 0.05 * spec.L

    def src(p):
        r = np.linalg.norm(p, axis=1)
        out = np.zeros(len(p))
        nz = r > 0
        hval = hfield.trace_at(p[nz] / r[nz, None])[:, 0]
        win = 0.5 * (1.0 - np.tanh((r[nz] - R_w) / width))
        reg = -np.expm1(-(r[nz] / r_min) ** 6)
        out[nz] = hval * win * reg / r[nz] ** 2
        return out[:, None]

    s = gs.sample(spec, src, ncomp=1).data[0]
    return s - s.mean()


def project_divfree(f: HomogeneousField, grid: gs.GridSpec, tol: float = 1e-4,
                    max_iter: int = 40, radius: float = 1.0, strict: bool = False) -> HomogeneousField:
    """Remove the divergence of u0 while keeping exact (-1)-homogeneity.

    div u0 = h(x/|x|)/|x|^2.  The spherical mean h0 of h is the divergence of
    h0 x/|x|^2 and is removed in closed form.  The rest drives a spectral
    Poisson solve on ``grid``; the gradient of the potential is read back on the
    sphere of radius ``radius`` and rescaled homogeneously.  Steps repeat until
    max |h| <= tol * sup|trace|, so a result that met the tolerance is returned
    unchanged by a second call.  The final relative divergence is stored in
    ``div_residual``; with ``strict`` a stalled iteration raises ResolutionError.
    """
    g = f.trace.grid
    if f.trace.ncomp != 3:
        raise ValueError("need a vector trace")
    if grid.h > min(0.25 * radius, 2.0 * np.pi * radius / g.n_theta) or grid.L < 3.0 * radius:
        raise ResolutionError(
            f"grid spacing {grid.h:.3g} / half-width {grid.L:.3g} cannot resolve the sphere "
            f"of radius {radius} with n_theta = {g.n_theta}")
    r_min = 4.0 * grid.h
    scale = max(f.trace.sup_norm(), 1e-300)
    cur = HomogeneousField(f.trace, f.singularity_cutoff)
    sigma = g.nodes
    xi = grid.wavenumbers()
    k2 = xi[0] ** 2 + xi[1] ** 2 + xi[2] ** 2
    inv = np.where(k2 > 0, -1.0 / np.where(k2 > 0, k2, 1.0), 0.0)
    best = (np.inf, cur)
    last = np.inf
    for _ in range(max_iter):
        hdiv = divergence_on_sphere(cur)
        res = float(np.max(np.abs(hdiv)) / scale)
        if res < best[0]:
            best = (res, cur)
        if res <= tol or res > 0.8 * last:
            break
        last = res
        h0 = float(g.integrate(hdiv) / (4.0 * np.pi))
        vals = cur.trace.values - h0 * sigma
        rest = hdiv - h0
        if np.max(np.abs(rest)) > 0.5 * tol * scale:
            hf = HomogeneousField(SphereField(g, rest))
            s = _divergence_source(hf, grid, r_min)
            phi = gs.SpectralField(grid, inv * np.fft.rfftn(s))
            grad = gs.inverse(gs.gradient(phi))
            vals = vals - gs.interpolate(grad, radius * sigma, order=5) * radius
        cur = HomogeneousField(SphereField(g, vals), f.singularity_cutoff)
    res, cur = best
    if strict and res > tol:
        raise ResolutionError(f"divergence stalled at {res:.3g} > tol {tol:.3g}; refine the grid")
    if cur.trace is f.trace and f.div_residual is not None:
        return f
    return HomogeneousField(cur.trace, f.singularity_cutoff, div_residual=res)


# ---------------------------------------------------------------------------
# standard traces


def trace_from_function(grid: SphereGrid, func: Callable[[np.ndarray], np.ndarray]) -> SphereField:
    return SphereField(grid, func(grid.nodes))


def rotational_trace(grid: SphereGrid, amplitude: float = 1.0) -> SphereField:
    """(-s2, s1, 0): a swirl with sup norm ``amplitude`` on the sphere."""
    s = grid.nodes
    return SphereField(grid, amplitude * np.column_stack([-s[:, 1], s[:, 0], np.zeros(len(s))]))


def swirl_corner_trace(grid: SphereGrid, alpha: float = 0.5, amplitude: float = 1.0) -> SphereField:
    """Swirl (-s2, s1, 0) * (1 + |s3|^alpha)/2.

    Axisymmetric swirls are divergence free for any profile in s3, and the
    factor |s3|^alpha makes the trace exactly C^alpha across the equator.
    """
    s = grid.nodes
    w = 0.5 * amplitude * (1.0 + np.abs(s[:, 2]) ** alpha)
    return SphereField(grid, w[:, None] * np.column_stack([-s[:, 1], s[:, 0], np.zeros(len(s))]))


def toroidal_trace(grid: SphereGrid, coeffs: np.ndarray) -> SphereField:
    """sigma x grad(psi) for psi(x) = sum_ab c_ab x_a x_b + sum_a c_a x_a (cubic part in coeffs[12:]).

    ``coeffs`` has length 3 + 9 + 27 (linear, quadratic, cubic tensors).
    """
    s = grid.nodes
    c1 = coeffs[:3]
    c2 = coeffs[3:12].reshape(3, 3)
    c3 = coeffs[12:39].reshape(3, 3, 3)
    grad = (c1[None, :] + s @ (c2 + c2.T)
            + np.einsum("abc,nb,nc->na", c3, s, s)
            + np.einsum("bac,nb,nc->na", c3, s, s)
            + np.einsum("bca,nb,nc->na", c3, s, s))
    return SphereField(grid, np.cross(s, grad))


# ---------------------------------------------------------------------------
# plain-text trace tables


def write_trace(path, f: SphereField) -> None:
    g = f.grid
    th = np.repeat(g.theta, g.n_phi)
    ph = np.tile(g.phi, g.n_theta)
    with open(path, "w") as fh:
        fh.write(f"# sphere trace n_theta={g.n_theta} n_phi={g.n_phi}\n")
        fh.write("# theta phi v1 v2 v3\n")
        for row in zip(th, ph, *f.values.T):
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_trace(path) -> SphereField:
    """Read a 'theta phi v1 v2 v3' table laid out on an equiangular grid."""
    rows = []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 5:
                raise ValueError(f"{path}:{ln}: expected 5 columns, got {len(parts)}")
            rows.append([float(p) for p in parts])
    if not rows:
        raise ValueError(f"{path}: empty trace table")
    a = np.asarray(rows)
    n_theta = len(np.unique(np.round(a[:, 0], 12)))
    n_phi = len(np.unique(np.round(a[:, 1], 12)))
    if n_theta * n_phi != len(a):
        raise ValueError(f"{path}: nodes do not form a {n_theta} x {n_phi} grid")
    grid = SphereGrid(n_theta, n_phi)
    order = np.lexsort((a[:, 1], a[:, 0]))
    a = a[order]
    th = np.repeat(grid.theta, n_phi)
    ph = np.tile(grid.phi, n_theta)
    if np.max(np.abs(a[:, 0] - th)) > 1e-9 or np.max(np.abs(a[:, 1] - ph)) > 1e-9:
        raise ValueError(f"{path}: nodes are not on the equiangular grid")
    return SphereField(grid, a[:, 2:])
