"""Solution operator G of the Stokes system with self-similar forcing, and its checks.

For forcing t^{-3/2} F(x/sqrt(t)) and zero data at t = 0 the solution at t = 1 is

    V^(xi) = int_0^1 exp(-|xi|^2 (1-s)) P(xi) F^(sqrt(s) xi) ds.

With s = tau^2 the integrand is smooth in tau.  F^(tau xi) is evaluated at the
grid wavevectors by a separable scaled DFT of the samples of F (exact for the
trapezoid representation of F, no resampling in physical space), and the tau
integral uses Gauss-Legendre nodes with product weights that integrate the
factor exp(-|xi|^2 (1 - tau^2)) exactly against the interpolating polynomial
of F^(tau xi).  Output modes are restricted to the 2/3-dealiased range.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, List, Optional, Sequence

import numpy as np
import scipy.fft as sfft

from . import grid_spectral as gs
from .caloric import Residual, relative_residual
from .errors import AccuracyError, DomainError


@dataclass(frozen=True)
class DuhamelQuadrature:
    """Gauss-Legendre nodes in tau on (0,1), s = tau^2; weights integrate ds."""

    n_s: int = 64

    def __post_init__(self):
        if self.n_s < 32:
            raise ValueError("n_s must be at least 32")

    @property
    def tau(self) -> np.ndarray:
        x, _ = np.polynomial.legendre.leggauss(self.n_s)
        return 0.5 * (x + 1.0)

    @property
    def nodes(self) -> np.ndarray:
        return self.tau ** 2

    @property
    def weights(self) -> np.ndarray:
        """Weights for int_0^1 f(s) ds = sum w_q f(s_q); they sum to 1."""
        x, w = np.polynomial.legendre.leggauss(self.n_s)
        return (x + 1.0) * 0.5 * w

    def bary(self) -> np.ndarray:
        x, w = np.polynomial.legendre.leggauss(self.n_s)
        return (-1.0) ** np.arange(self.n_s) * np.sqrt((1.0 - x * x) * w)


def lagrange_basis(quad: DuhamelQuadrature, t: np.ndarray) -> np.ndarray:
    """Values l_q(t) of the Lagrange basis on the tau nodes, shape (len(t), n_s)."""
    tau = quad.tau
    b = quad.bary()
    d = t[:, None] - tau[None, :]
    exact = d == 0
    d[exact] = 1.0
    q = b[None, :] / d
    out = q / q.sum(axis=1, keepdims=True)
    rows = exact.any(axis=1)
    if rows.any():
        out[rows] = exact[rows].astype(float)
    return out


@lru_cache(maxsize=8)
def fitted_weights(quad: DuhamelQuadrature, lam_unit: float, m_max: int) -> np.ndarray:
    """W[m, q] = int_0^1 exp(-lam (1 - tau^2)) l_q(tau) 2 tau dtau for lam = lam_unit * m.

    Panels accumulate near tau = 1 at the scale 1/lam of the exponential, with
    40 Gauss points each, enough for the degree n_s polynomial part.
    """
    gx, gw = np.polynomial.legendre.leggauss(40)
    cs = np.array([64.0, 16.0, 4.0, 1.0, 0.25])
    out = np.empty((m_max + 1, quad.n_s))
    chunk = 256
    for start in range(0, m_max + 1, chunk):
        m = np.arange(start, min(m_max + 1, start + chunk))
        lam = lam_unit * m
        with np.errstate(divide="ignore"):
            inner = np.sqrt(np.clip(1.0 - cs[None, :] / np.where(lam > 0, lam, 1e-300)[:, None], 0.0, 1.0))
        brk = np.concatenate([np.zeros((len(m), 1)), inner, np.ones((len(m), 1))], axis=1)
        a, b = brk[:, :-1], brk[:, 1:]
        half = 0.5 * (b - a)
        t = (half[..., None] * gx + 0.5 * (a + b)[..., None]).reshape(len(m), -1)
        w = (half[..., None] * gw).reshape(len(m), -1)
        f = np.exp(-lam[:, None] * (1.0 - t * t)) * 2.0 * t * w
        Lb = lagrange_basis(quad, t.ravel()).reshape(len(m), t.shape[1], quad.n_s)
        out[m] = np.einsum("mp,mpq->mq", f, Lb)
    return out


# ---------------------------------------------------------------------------
# scaled transforms


def output_modes(spec: gs.GridSpec):
    """Integer wavenumbers kept in the output (|k_i| <= n/3, kz >= 0)."""
    kc = spec.n // 3
    k = np.arange(-kc, kc + 1)
    kz = np.arange(0, kc + 1)
    return k, kz


def _phase_matrix(spec: gs.GridSpec, k: np.ndarray, tau: float) -> np.ndarray:
    x = spec.axis()
    return np.exp(-1j * tau * (np.pi / spec.L) * np.outer(k, x))


def scaled_transform(data: np.ndarray, spec: gs.GridSpec, tau: float) -> np.ndarray:
    """Continuous Fourier transform F^(tau xi_k) of grid samples, for the output modes.

    F^(eta) ~ h^3 sum_j F(x_j) exp(-i eta . x_j); returns (ncomp, 2kc+1, 2kc+1, kc+1).
    """
    k, kz = output_modes(spec)
    n = spec.n
    Ex = _phase_matrix(spec, k, tau)
    Ez = _phase_matrix(spec, kz, tau)
    nc = data.shape[0]
    nk, nz = len(k), len(kz)
    # z: one real matmul against the stacked real and imaginary parts
    Ecat = np.ascontiguousarray(np.concatenate([Ez.real, Ez.imag]).T)
    t = data.reshape(-1, n) @ Ecat
    t = (t[:, :nz] + 1j * t[:, nz:]).reshape(nc * n, n, nz)
    t = np.matmul(Ex, t)                                   # (c x, ky, kz)
    t = t.reshape(nc, n, nk * nz)
    t = np.matmul(Ex, t).reshape(nc, nk, nk, nz)           # (c, kx, ky, kz)
    return spec.h ** 3 * t


def _mode_layout(spec: gs.GridSpec):
    k, kz = output_modes(spec)
    n = spec.n
    ix = np.where(k >= 0, k, n + k)
    return k, kz, ix


def _to_grid(spec: gs.GridSpec, Vhat: np.ndarray) -> np.ndarray:
    """Continuous transform on the output modes -> physical samples on the grid."""
    k, kz, ix = _mode_layout(spec)
    n = spec.n
    sign = ((-1.0) ** np.abs(k))[:, None, None] * ((-1.0) ** np.abs(k))[None, :, None] \
        * ((-1.0) ** kz)[None, None, :]
    C = np.zeros((Vhat.shape[0],) + spec.kshape, dtype=complex)
    C[:, ix[:, None, None], ix[None, :, None], kz[None, None, :]] = Vhat * sign / spec.h ** 3
    return sfft.irfftn(C, s=(n, n, n), axes=(1, 2, 3), workers=gs.workers())


def _from_grid(spec: gs.GridSpec, data: np.ndarray) -> np.ndarray:
    """Physical samples -> continuous transform h^3 (-1)^k DFT on the output modes."""
    k, kz, ix = _mode_layout(spec)
    sign = ((-1.0) ** np.abs(k))[:, None, None] * ((-1.0) ** np.abs(k))[None, :, None] \
        * ((-1.0) ** kz)[None, None, :]
    C = sfft.rfftn(data, axes=(1, 2, 3), workers=gs.workers())
    return C[:, ix[:, None, None], ix[None, :, None], kz[None, None, :]] * sign * spec.h ** 3


def _project_modes(spec: gs.GridSpec, V: np.ndarray) -> np.ndarray:
    k, kz = output_modes(spec)
    s = np.pi / spec.L
    xi = (s * k[:, None, None], s * k[None, :, None], s * kz[None, None, :])
    k2 = xi[0] ** 2 + xi[1] ** 2 + xi[2] ** 2
    inv = np.where(k2 > 0, 1.0 / np.where(k2 > 0, k2, 1.0), 0.0)
    dot = xi[0] * V[0] + xi[1] * V[1] + xi[2] * V[2]
    out = np.stack([V[i] - xi[i] * dot * inv for i in range(3)])
    # P has no limit at xi = 0; its average over directions is 2/3 of the identity
    out[:, kc_index(spec), kc_index(spec), 0] *= 2.0 / 3.0
    return out


def kc_index(spec: gs.GridSpec) -> int:
    return spec.n // 3


def duhamel_apply(F: gs.RealField, grid: Optional[gs.GridSpec] = None,
                  quad: Optional[DuhamelQuadrature] = None, taper: bool = True,
                  far_field: Optional[gs.RealField] = None, check: bool = False,
                  check_tol: float = 1e-6) -> gs.RealField:
    """V = G(F): the t = 1 value of the Stokes flow driven by t^{-3/2} F(x/sqrt t).

    ``taper`` multiplies F by the box window first (needed unless F already
    vanishes near the faces).  ``far_field`` is an optional sample of the
    degree -3 homogeneous tail F_h of F; see :func:`far_field_response`.
    With ``check`` the result is recomputed with n_s/2 nodes and a relative
    change above ``check_tol`` raises AccuracyError.
    """
    spec = F.spec if grid is None else grid
    gs._check_same(spec, F.spec)
    quad = quad or DuhamelQuadrature()
    if F.ncomp != 3:
        raise ValueError("forcing must have 3 components")
    data = F.data * _win3(spec) if taper else F.data
    V = _duhamel_modes(spec, data, quad)
    if far_field is not None:
        V = V + _far_modes(spec, quad, forcing=far_field.data, power=1)
    out = gs.RealField(spec, _to_grid(spec, V))
    if check:
        half = DuhamelQuadrature(max(32, quad.n_s // 2))
        V2 = _duhamel_modes(spec, data, half)
        if far_field is not None:
            V2 = V2 + _far_modes(spec, half, forcing=far_field.data, power=1)
        rel = float(np.linalg.norm(V2 - V) / max(np.linalg.norm(V), 1e-300))
        out.meta["quad_change"] = rel
        if rel > check_tol:
            raise AccuracyError(f"Duhamel quadrature ratio test failed: relative change {rel:.3g}")
    return out


def _win3(spec: gs.GridSpec, scale: float = 1.0, a: float = 0.75, width: float = 0.05) -> np.ndarray:
    w = gs.taper_1d(spec.axis() / scale, spec.L, a, width)
    return w[:, None, None] * w[None, :, None] * w[None, None, :]


def _weights_for(spec: gs.GridSpec, quad: DuhamelQuadrature):
    k, kz = output_modes(spec)
    m = (k[:, None, None] ** 2 + k[None, :, None] ** 2 + kz[None, None, :] ** 2).astype(int)
    return m, fitted_weights(quad, (np.pi / spec.L) ** 2, int(m.max()))


def _duhamel_modes(spec: gs.GridSpec, data: np.ndarray, quad: DuhamelQuadrature) -> np.ndarray:
    m, W = _weights_for(spec, quad)
    acc = np.zeros((3,) + m.shape, dtype=complex)
    for q, tau in enumerate(quad.tau):
        acc += W[:, q][m] * scaled_transform(data, spec, tau)
    return _project_modes(spec, acc)


# far box: the homogeneous tail is kept out to 0.9 L, beyond the core window
FAR_BOX = (0.9, 0.03)
TENSOR_INDEX = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


def _far_modes(spec: gs.GridSpec, quad: DuhamelQuadrature, forcing=None, tensor=None,
               power: int = 1) -> np.ndarray:
    m, W = _weights_for(spec, quad)
    k, kz = output_modes(spec)
    s = np.pi / spec.L
    xi = (s * k[:, None, None], s * k[None, :, None], s * kz[None, None, :])
    box = _win3(spec, 1.0, *FAR_BOX)
    acc = np.zeros((3,) + m.shape, dtype=complex)
    for q, tau in enumerate(quad.tau):
        outer = box * (1.0 - _win3(spec, tau) ** power)
        if forcing is not None:
            Fh = _from_grid(spec, forcing * outer)
        else:
            Th = _from_grid(spec, tensor * outer)
            Fh = np.zeros_like(acc)
            for c, (i, j) in enumerate(TENSOR_INDEX):
                Fh[i] -= 1j * xi[j] * Th[c]
                if i != j:
                    Fh[j] -= 1j * xi[i] * Th[c]
        acc += W[:, q][m] * Fh
    return _project_modes(spec, acc)


def far_field_response(spec: gs.GridSpec, quad: Optional[DuhamelQuadrature] = None,
                       forcing: Optional[np.ndarray] = None, tensor: Optional[np.ndarray] = None,
                       power: int = 1) -> gs.RealField:
    """Response to the homogeneous tail of a forcing outside the rescaled core window.

    The core forcing chi^power F is treated by :func:`duhamel_apply`; at scale s
    the part removed by the window is (1 - chi^power(y/sqrt s)) F_h(y), using
    s^{-3/2} F_h(y/sqrt s) = F_h(y) for a degree -3 tail F_h.  Give either
    ``forcing`` (3 components, F_h) or ``tensor`` (6 components xx, yy, zz,
    xy, xz, yz of a degree -2 tail T_h, with F_h = -div T_h).  The tail is
    truncated by a window at 0.9 L.  It does not depend on the core forcing,
    so callers can compute it once.
    """
    quad = quad or DuhamelQuadrature()
    if (forcing is None) == (tensor is None):
        raise ValueError("give exactly one of forcing and tensor")
    return gs.RealField(spec, _to_grid(spec, _far_modes(spec, quad, forcing, tensor, power)))


# ---------------------------------------------------------------------------
# analytic test forcing and the time-stepping oracle


@dataclass(frozen=True)
class GaussianCurlForcing:
    """F = curl(psi e) summed over terms psi = A exp(-|x-c|^2/(2 w^2)); divergence free."""

    terms: tuple = ((1.0, 1.0, (0.0, 0.0, 0.0), (0.0, 0.0, 1.0)),
                    (0.7, 1.3, (0.8, -0.5, 0.3), (1.0, 0.5, 0.0)))

    def sample(self, spec: gs.GridSpec) -> gs.RealField:
        x = spec.coords()
        out = np.zeros((3,) + spec.shape)
        for A, w, c, e in self.terms:
            d = [x[i] - c[i] for i in range(3)]
            psi = A * np.exp(-(d[0] ** 2 + d[1] ** 2 + d[2] ** 2) / (2 * w * w))
            g = [-d[i] / (w * w) * psi for i in range(3)]
            out[0] += g[1] * e[2] - g[2] * e[1]
            out[1] += g[2] * e[0] - g[0] * e[2]
            out[2] += g[0] * e[1] - g[1] * e[0]
        return gs.RealField(spec, out)

    def fourier(self, eta: Sequence[np.ndarray]) -> np.ndarray:
        """Continuous transform F^(eta) for broadcastable components eta."""
        shape = np.broadcast(*eta).shape
        out = np.zeros((3,) + shape, dtype=complex)
        for A, w, c, e in self.terms:
            e2 = eta[0] ** 2 + eta[1] ** 2 + eta[2] ** 2
            ph = np.exp(-1j * (eta[0] * c[0] + eta[1] * c[1] + eta[2] * c[2]))
            psi = A * (2 * np.pi) ** 1.5 * w ** 3 * np.exp(-0.5 * w * w * e2) * ph
            g = [1j * eta[i] * psi for i in range(3)]
            out[0] += g[1] * e[2] - g[2] * e[1]
            out[1] += g[2] * e[0] - g[0] * e[2]
            out[2] += g[0] * e[1] - g[1] * e[0]
        return out


def stokes_time_stepping(forcing_hat: Callable, spec: gs.GridSpec, delta: float,
                         steps: int = 600) -> gs.RealField:
    """Integrate v_t = Delta v + P t^{-3/2} F(x/sqrt t) from v(delta) = 0 to t = 1.

    Runs in tau = sqrt(t) with a Lawson (integrating-factor) RK4 scheme on the
    output modes; ``forcing_hat(eta)`` must return the continuous transform of F.
    Step sizes are graded (uniform in log tau near the start, then uniform).
    """
    k, kz = output_modes(spec)
    s = np.pi / spec.L
    xi = (s * k[:, None, None], s * k[None, :, None], s * kz[None, None, :])
    lam = xi[0] ** 2 + xi[1] ** 2 + xi[2] ** 2
    t0 = math.sqrt(delta)
    n_log = steps // 3
    grid_log = np.geomspace(t0, min(0.1, 0.5), n_log + 1) if t0 < 0.1 else np.array([t0])
    grid_lin = np.linspace(grid_log[-1], 1.0, steps - len(grid_log) + 2)
    taus = np.concatenate([grid_log, grid_lin[1:]])

    def rhs(tau, shift):
        Fh = _project_modes(spec, forcing_hat((tau * xi[0], tau * xi[1], tau * xi[2])))
        return 2.0 * tau * np.exp(lam * (tau * tau - shift)) * Fh

    v = np.zeros((3,) + lam.shape, dtype=complex)
    for a, b in zip(taus[:-1], taus[1:]):
        H = b - a
        base = a * a
        k1 = rhs(a, base)
        k2 = rhs(a + H / 2, base)
        k3 = k2
        k4 = rhs(b, base)
        # the integrating factor makes the stage values independent of v, so the
        # RK4 update reduces to Simpson's rule on the transformed forcing
        u = v + H / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        v = np.exp(-lam * (b * b - base)) * u
    return gs.RealField(spec, _to_grid(spec, v))


# ---------------------------------------------------------------------------
# elliptic residual


def stokes_elliptic_residual(V: gs.RealField, P: Optional[gs.RealField], F: gs.RealField,
                             taper: bool = True) -> Residual:
    """Relative L2 norm over |x| <= L/2 of -Delta V - x.grad V/2 - V/2 + grad P - F.

    P = None uses the pressure of the forcing, Delta P = div F.  The forcing is
    windowed like in :func:`duhamel_apply` when ``taper`` is set.
    """
    spec = V.spec
    Fd = F.data * gs.taper(spec) if taper else F.data
    S = gs.transform(V)
    lap = gs.inverse(gs.laplacian(S)).data
    drift = gs.scale_drift(S).data
    if P is None:
        Fs = gs.transform(gs.RealField(spec, Fd))
        xi = spec.wavenumbers()
        k2 = xi[0] ** 2 + xi[1] ** 2 + xi[2] ** 2
        inv = np.where(k2 > 0, 1.0 / np.where(k2 > 0, k2, 1.0), 0.0)
        Ph = -gs.divergence(Fs).coeffs[0] * inv
        gP = gs.inverse(gs.gradient(gs.SpectralField(spec, Ph))).data
    else:
        gP = gs.inverse(gs.gradient(gs.transform(P))).data
    terms = {"-lap": -lap, "-drift/2": -0.5 * drift, "-V/2": -0.5 * V.data, "gradP": gP, "-F": -Fd}
    return relative_residual(spec, terms)


# ---------------------------------------------------------------------------
# decay fits


@dataclass(frozen=True)
class DecayFit:
    exponent: float
    prefactor: float
    r2: float
    shells: tuple
    values: tuple = ()
    grad: Optional["DecayFit"] = None
    flag: str = ""


def shell_maxima(mag: np.ndarray, spec: gs.GridSpec, radii: Sequence[float],
                 thickness: Optional[float] = None) -> np.ndarray:
    r = spec.radius()
    dr = thickness or spec.h
    out = []
    for R in radii:
        m = np.abs(r - R) <= 0.5 * dr
        if not m.any():
            raise DomainError(f"shell at r = {R} contains no grid points")
        out.append(float(mag[m].max()))
    return np.array(out)


def fit_power_law(radii: Sequence[float], values: Sequence[float], offset: float = 0.0) -> DecayFit:
    """Least squares fit of values ~ C (offset + r)^{-p}, in log-log form."""
    r = np.asarray(radii, float)
    v = np.asarray(values, float)
    if np.all(v == 0):
        return DecayFit(math.inf, 0.0, 1.0, tuple(r), tuple(v), flag="zero")
    if np.any(v <= 0):
        raise DomainError("non-positive shell maxima cannot be fitted")
    X = np.log(offset + r)
    Y = np.log(v)
    A = np.vstack([X, np.ones_like(X)]).T
    (slope, icept), *_ = np.linalg.lstsq(A, Y, rcond=None)
    pred = A @ np.array([slope, icept])
    ss = np.sum((Y - Y.mean()) ** 2)
    r2 = 1.0 - np.sum((Y - pred) ** 2) / ss if ss > 0 else 1.0
    return DecayFit(float(-slope), float(math.exp(icept)), float(min(max(r2, 0.0), 1.0)), tuple(r), tuple(v))


def default_shells(spec: gs.GridSpec, r0: float = 4.0, r1: Optional[float] = None, count: int = 9):
    r1 = 0.5 * spec.L if r1 is None else r1
    return tuple(np.geomspace(r0, r1, count))


def decay_fit(V: gs.RealField, shells: Optional[Sequence[float]] = None, gradient: bool = True,
              offset: float = 0.0) -> DecayFit:
    """Fit max-over-shell |V| ~ C (offset + r)^{-p} by least squares in log-log; also |grad V|.

    The default fits against log r, which measures the asymptotic power; offset 1
    fits against log(1 + r) and recovers envelopes (1+|x|)^{-k} exactly.
    """
    spec = V.spec
    shells = tuple(shells) if shells is not None else default_shells(spec)
    if len(shells) < 4:
        raise DomainError("need at least 4 shells")
    if min(shells) < 4.0 - 1e-9 or max(shells) > 0.5 * spec.L + 1e-9:
        raise DomainError("shells must lie within [4, L/2]")
    fit = fit_power_law(shells, shell_maxima(V.magnitude(), spec, shells), offset)
    if not gradient:
        return fit
    J = gs.jacobian(gs.transform(V))
    gmag = np.sqrt(np.sum(J ** 2, axis=(0, 1)))
    gfit = fit_power_law(shells, shell_maxima(gmag, spec, shells), offset)
    return DecayFit(fit.exponent, fit.prefactor, fit.r2, fit.shells, fit.values, gfit, fit.flag)


def holder_quotient(V: gs.RealField, R: float = 2.0, alpha: float = 0.5,
                    steps: Sequence[int] = (1, 2, 4, 8)) -> float:
    """Discrete C^{1,alpha} seminorm of V on B_R.

    max |grad V(x + s h e_i) - grad V(x)| / (s h)^alpha over axis shifts of
    ``steps`` grid cells with both points in B_R.  Only finiteness and
    stability under refinement are meaningful; the constant is not.
    """
    spec = V.spec
    if not 0.0 < alpha < 1.0:
        raise DomainError("alpha must lie in (0, 1)")
    if not 0.0 < R <= 0.5 * spec.L:
        raise DomainError("R must lie in (0, L/2]")
    J = gs.jacobian(gs.transform(V)).reshape((9,) + spec.shape)
    inside = spec.radius() <= R
    worst = 0.0
    for s in steps:
        if s >= spec.n // 2:
            continue
        for ax in range(3):
            lo = [slice(None)] * 3
            hi = [slice(None)] * 3
            lo[ax] = slice(0, spec.n - s)
            hi[ax] = slice(s, spec.n)
            lo, hi = tuple(lo), tuple(hi)
            both = inside[lo] & inside[hi]
            if not both.any():
                continue
            d = np.sqrt(np.sum((J[(slice(None),) + hi] - J[(slice(None),) + lo]) ** 2, axis=0))
            worst = max(worst, float(d[both].max()) / (s * spec.h) ** alpha)
    return worst


def envelope_forcing(spec: gs.GridSpec, power: float, direction=(0.0, 0.0, 1.0)) -> gs.RealField:
    """F = e (1+|x|)^{-power} with a constant direction e."""
    r = spec.radius()
    env = (1.0 + r) ** (-power)
    e = np.asarray(direction, float)
    return gs.RealField(spec, e[:, None, None, None] * env[None])


def envelope_far_field(spec: gs.GridSpec, power: float, direction=(0.0, 0.0, 1.0)) -> Optional[gs.RealField]:
    """Degree -3 homogeneous tail of :func:`envelope_forcing` (None when it decays faster)."""
    if power > 3:
        return None
    r = np.maximum(spec.radius(), 2 * spec.h)
    e = np.asarray(direction, float)
    return gs.RealField(spec, e[:, None, None, None] * r[None] ** -3.0)


# ---------------------------------------------------------------------------
# kernel integral


class KernelIntegral(float):
    """I(R) over the ball |y| <= 8R with the analytic tail bound and quadrature change."""

    def __new__(cls, value, tail_bound=0.0, quad_change=0.0, alpha=0, beta=0, R=0.0):
        obj = float.__new__(cls, value)
        obj.tail_bound = tail_bound
        obj.quad_change = quad_change
        obj.alpha, obj.beta, obj.R = alpha, beta, R
        return obj


def _angular_primitive(d, a, alpha):
    # antiderivative of d (d + a)^-alpha in d
    return (d + a) ** (2 - alpha) / (2 - alpha) - a * (d + a) ** (1 - alpha) / (1 - alpha)


def _graded(lo, hi, scale, ratio=2.0):
    """Breakpoints in [lo, hi] refined geometrically towards lo on the given scale."""
    pts = [lo]
    s = scale
    while lo + s < hi:
        pts.append(lo + s)
        s *= ratio
    pts.append(hi)
    return pts


def _kernel_integral(alpha, beta, R, ng):
    gx, gw = np.polynomial.legendre.leggauss(ng)

    def gl(a, b):
        return 0.5 * (b - a) * gx + 0.5 * (a + b), 0.5 * (b - a) * gw

    def rho_integral(t):
        s, a = math.sqrt(t), math.sqrt(1.0 - t)
        brk = set(_graded(0.0, 0.5 * R, max(s, 1e-6) / 4))
        near = max(a, 1e-6) / 4
        left = [R - x for x in _graded(0.0, 0.5 * R, near)]
        right = [R + x for x in _graded(0.0, R, near)]
        brk.update(left)
        brk.update(right)
        brk.update(_graded(2.0 * R, 8.0 * R, R, 1.5))
        b = sorted(brk)
        tot = 0.0
        for lo, hi in zip(b[:-1], b[1:]):
            if hi - lo <= 0:
                continue
            rho, w = gl(lo, hi)
            ang = (_angular_primitive(R + rho, a, alpha) - _angular_primitive(np.abs(R - rho), a, alpha)) / (R * rho)
            tot += np.sum(w * 2.0 * np.pi * rho ** 2 * (rho + s) ** (-beta) * ang)
        return tot

    # t = u^2 on [0, 1/2], t = 1 - v^2 on [1/2, 1], graded towards u, v = 0
    tot = 0.0
    edge = math.sqrt(0.5)
    for var in ("u", "v"):
        b = [0.0] + list(np.geomspace(1e-7, edge, 24))
        for lo, hi in zip(b[:-1], b[1:]):
            x, w = gl(lo, hi)
            for xi_, wi in zip(x, w):
                t = xi_ * xi_ if var == "u" else 1.0 - xi_ * xi_
                tot += wi * 2.0 * xi_ * rho_integral(t)
    return tot


def kernel_bound_check(alpha: int, beta: int, R: float, tol: float = 1e-6) -> KernelIntegral:
    """I(R) = int_0^1 int (|x-y| + sqrt(1-t))^-alpha (|y| + sqrt t)^-beta dy dt at |x| = R.

    The y integral is reduced to (|y|, angle) with the angular part in closed
    form; the radial and time integrals use graded Gauss-Legendre panels.  The
    ball |y| <= 8R is integrated and the analytic bound
    4 pi (8/7)^alpha (8R)^(3-alpha-beta) / (alpha+beta-3) for the rest is
    reported as ``tail_bound``.
    """
    if alpha not in (3, 4) or beta not in (3, 4):
        raise DomainError("alpha and beta must be 3 or 4")
    if not R > 8:
        raise DomainError("R must exceed 8")
    I1 = _kernel_integral(alpha, beta, R, 8)
    I2 = _kernel_integral(alpha, beta, R, 12)
    change = abs(I2 - I1) / abs(I2)
    if change > tol:
        raise AccuracyError(f"kernel quadrature did not converge: relative change {change:.3g}")
    tail = 4.0 * np.pi * (8.0 / 7.0) ** alpha * (8.0 * R) ** (3 - alpha - beta) / (alpha + beta - 3)
    return KernelIntegral(I2, tail, change, alpha, beta, R)


def expected_ratio(alpha: int, beta: int, R1: float, R2: float) -> float:
    if alpha == 3 and beta == 3:
        return (R2 / R1) ** -3 * math.log(R2) / math.log(R1)
    return (R2 / R1) ** (4 - alpha - beta)


def kernel_ratio_rows(alpha: int, beta: int, radii: Sequence[float]) -> List[dict]:
    """Rows alpha,beta,R,I,expected_ratio,measured_ratio (ratios relative to the first radius)."""
    vals = [kernel_bound_check(alpha, beta, R) for R in radii]
    rows = []
    for R, I in zip(radii, vals):
        rows.append({"alpha": alpha, "beta": beta, "R": R, "I": float(I),
                     "expected_ratio": expected_ratio(alpha, beta, radii[0], R),
                     "measured_ratio": float(I) / float(vals[0])})
    return rows


def write_kernel_csv(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["alpha", "beta", "R", "I", "expected_ratio", "measured_ratio"])
        w.writeheader()
        for r in rows:
            w.writerow(r)
