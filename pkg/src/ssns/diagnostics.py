"""Functionals and checks on constructed profiles: Y, local energy, decay, scaling, Landau.

Space-time quantities are evaluated through the self-similar reconstruction
u(x,t) = t^{-1/2} U(x/sqrt t), p(x,t) = t^{-1} P(x/sqrt t), so only the 3D
profile is stored.  Integrals over balls use tensor-product midpoint rules in
(r, cos theta, phi) and in t.
"""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import grid_spectral as gs
from . import stokes_duhamel as sd
from .caloric import CaloricProfile, Residual, linear_profile_terms, relative_residual
from .errors import ConfigError, DomainError
from .profile_solver import ProfileSolution, leray_residual, profile_terms
from .sphere_data import HomogeneousField, eval_homogeneous, sample_on_grid

Sampler = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class ParabolicCylinder:
    """Q(R, z0) = B_R(x0) x (t0 - R^2, t0]."""

    center: Tuple[float, float, float]
    t0: float
    R: float

    def __post_init__(self):
        if not self.R > 0:
            raise DomainError("cylinder radius must be positive")

    @property
    def t_start(self) -> float:
        return self.t0 - self.R ** 2

    def scaled(self, lam: float) -> "ParabolicCylinder":
        """Image under x -> lam x, t -> lam^2 t."""
        return ParabolicCylinder(tuple(lam * c for c in self.center), lam * lam * self.t0, lam * self.R)


@dataclass(frozen=True)
class YReport:
    cylinder: ParabolicCylinder
    y_value: float
    velocity_part: float
    pressure_part: float
    resolution: tuple


@dataclass(frozen=True)
class EnergyReport:
    center: tuple
    R: float
    window: tuple
    kinetic_sup: float
    dissipation: float


# ---------------------------------------------------------------------------
# quadrature


def _rule_1d(n: int, kind: str):
    """Nodes and weights on (0, 1): midpoint or Gauss-Legendre."""
    if kind == "midpoint":
        return (np.arange(n) + 0.5) / n, np.full(n, 1.0 / n)
    if kind == "gauss":
        x, w = np.polynomial.legendre.leggauss(n)
        return 0.5 * (x + 1.0), 0.5 * w
    raise ConfigError(f"unknown quadrature {kind!r}")


def ball_rule(R: float, n_r: int = 16, n_c: int = 16, n_phi: int = 32, kind: str = "midpoint"):
    """Product rule on B_R in (r, cos theta, phi): offsets and weights.

    phi always uses equispaced nodes (periodic); r and cos theta use ``kind``.
    """
    r, wr = _rule_1d(n_r, kind)
    c, wc = _rule_1d(n_c, kind)
    c, wc = 2.0 * c - 1.0, 2.0 * wc
    ph = (np.arange(n_phi) + 0.5) * 2.0 * np.pi / n_phi
    rr, cc, pp = np.meshgrid(r, c, ph, indexing="ij")
    s = np.sqrt(1.0 - cc ** 2)
    pts = np.stack([rr * s * np.cos(pp), rr * s * np.sin(pp), rr * cc], axis=-1).reshape(-1, 3)
    w = (rr ** 2 * wr[:, None, None] * wc[None, :, None]).ravel() * (2.0 * np.pi / n_phi)
    return R * pts, w * R ** 3


def time_rule(a: float, b: float, n_t: int, kind: str = "midpoint"):
    t, w = _rule_1d(n_t, kind)
    return a + (b - a) * t, (b - a) * w


# ---------------------------------------------------------------------------
# samplers from a profile


class ProfileSampler:
    """u(x,t), grad u(x,t) and p(x,t) from a profile by self-similar reconstruction.

    Points with |x|/sqrt(t) beyond the inner box use ``far`` (a homogeneous
    field, e.g. mu u0) when given and raise DomainError otherwise.
    """

    def __init__(self, U: gs.RealField, P: Optional[gs.RealField] = None,
                 window: Optional[np.ndarray] = None, far: Optional[HomogeneousField] = None):
        self.spec = U.spec
        data = U.data if window is None else U.data * window
        self._u = gs.Interpolator(U)
        S = gs.transform(gs.RealField(self.spec, data))
        J = gs.jacobian(S)
        self._j = [gs.Interpolator(gs.RealField(self.spec, J[i])) for i in range(3)]
        self._p = gs.Interpolator(P) if P is not None else None
        self.far = far
        self.limit = 0.5 * self.spec.L

    def _split(self, x, t):
        if not t > 0:
            raise DomainError("t must be positive")
        x = np.atleast_2d(np.asarray(x, float))
        xi = x / math.sqrt(t)
        inside = np.linalg.norm(xi, axis=1) <= self.limit
        if not inside.all() and self.far is None:
            raise DomainError("sample outside the inner box of the profile")
        return x, xi, inside

    def velocity(self, x, t: float) -> np.ndarray:
        x, xi, inside = self._split(x, t)
        out = np.empty((len(x), 3))
        out[inside] = self._u(xi[inside]) / math.sqrt(t)
        if not inside.all():
            out[~inside] = eval_homogeneous(self.far, x[~inside])
        return out

    def gradient(self, x, t: float) -> np.ndarray:
        """(N, 3, 3) array d_j u_i."""
        x, xi, inside = self._split(x, t)
        out = np.empty((len(x), 3, 3))
        out[inside] = np.stack([ip(xi[inside]) for ip in self._j], axis=1) / t
        if not inside.all():
            out[~inside] = homogeneous_gradient(self.far, x[~inside])
        return out

    def pressure(self, x, t: float) -> np.ndarray:
        x, xi, inside = self._split(x, t)
        if self._p is None:
            return np.zeros(len(x))
        out = np.zeros(len(x))
        out[inside] = self._p(xi[inside])[:, 0] / t
        return out


def homogeneous_gradient(f: HomogeneousField, x: np.ndarray, rel: float = 1e-5) -> np.ndarray:
    x = np.atleast_2d(x)
    h = rel * np.linalg.norm(x, axis=1)[:, None]
    out = np.empty((len(x), 3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = 1.0
        out[:, :, j] = (eval_homogeneous(f, x + h * e) - eval_homogeneous(f, x - h * e)) / (2 * h)
    return out


# ---------------------------------------------------------------------------
# Y functional


def y_functional(u: Sampler, p: Optional[Sampler], Q: ParabolicCylinder,
                 res: tuple = (16, 16, 32, 16)) -> YReport:
    """Y = (avg_Q |u - (u)_Q|^3)^{1/3} + R (avg_Q |p - (p)_B(t)|^{3/2})^{2/3}."""
    if Q.t_start < 0:
        raise DomainError("cylinder reaches below t = 0")
    n_r, n_c, n_phi, n_t = res
    off, w = ball_rule(Q.R, n_r, n_c, n_phi)
    pts = off + np.asarray(Q.center, float)
    ts, wt = time_rule(Q.t_start, Q.t0, n_t)
    vol = w.sum() * wt.sum()
    U = np.stack([np.asarray(u(pts, t), float).reshape(len(pts), -1) for t in ts])
    U = U - U[0, 0]  # shift first so that constant fields give exactly zero
    mean = np.einsum("t,n,tnc->c", wt, w, U) / vol
    dev = np.linalg.norm(U - mean, axis=2) ** 3
    vpart = (np.einsum("t,n,tn->", wt, w, dev) / vol) ** (1.0 / 3.0)
    ppart = 0.0
    if p is not None:
        Pv = np.stack([np.asarray(p(pts, t), float).reshape(len(pts)) for t in ts])
        Pv = Pv - Pv[0, 0]
        pm = (Pv @ w) / w.sum()
        dev = np.abs(Pv - pm[:, None]) ** 1.5
        ppart = Q.R * (np.einsum("t,n,tn->", wt, w, dev) / vol) ** (2.0 / 3.0)
    return YReport(Q, float(vpart + ppart), float(vpart), float(ppart), tuple(res))


def rescaled(u: Sampler, lam: float, power: int = 1) -> Sampler:
    """u_lam(x,t) = lam^power u(lam x, lam^2 t) (power 1 for velocity, 2 for pressure)."""
    return lambda x, t: lam ** power * np.asarray(u(lam * np.asarray(x), lam * lam * t))


# ---------------------------------------------------------------------------
# local energy


def bump(s: np.ndarray) -> np.ndarray:
    """exp(1 - 1/(1 - s^2)) on |s| < 1, zero outside."""
    out = np.zeros_like(s, dtype=float)
    m = np.abs(s) < 1
    out[m] = np.exp(1.0 - 1.0 / (1.0 - s[m] ** 2))
    return out


def _bump_derivs(s: np.ndarray):
    """Values, first and second derivatives of :func:`bump`."""
    b = bump(s)
    m = np.abs(s) < 1
    d1 = np.zeros_like(b)
    d2 = np.zeros_like(b)
    q = 1.0 - s[m] ** 2
    g1 = -2.0 * s[m] / q ** 2
    g2 = -2.0 / q ** 2 - 8.0 * s[m] ** 2 / q ** 3
    d1[m] = b[m] * g1
    d2[m] = b[m] * (g1 * g1 + g2)
    return b, d1, d2


@dataclass(frozen=True)
class SpaceTimeBump:
    """phi(x,t) = psi(|x - x0|/r) eta(t) with psi, eta the standard bump; support B_r(x0) x (t_a, t_b)."""

    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 1.0
    t_a: float = 0.5
    t_b: float = 1.0

    def __post_init__(self):
        if not (0 < self.t_a < self.t_b) or not self.radius > 0:
            raise DomainError("bump support must lie in t > 0 with positive radius")

    def parts(self, x: np.ndarray, t: float):
        """phi, d_t phi, Delta phi and grad phi at points x and time t."""
        d = x - np.asarray(self.center)
        rho = np.linalg.norm(d, axis=1)
        s = rho / self.radius
        b, b1, b2 = _bump_derivs(s)
        tm, th = 0.5 * (self.t_a + self.t_b), 0.5 * (self.t_b - self.t_a)
        e, e1, _ = _bump_derivs(np.array([(t - tm) / th]))
        e, e1 = e[0], e1[0] / th
        safe = np.where(rho > 0, rho, 1.0)
        psi_r = b1 / self.radius
        psi_rr = b2 / self.radius ** 2
        # Laplacian of a radial function: psi'' + 2 psi'/rho (psi' ~ rho near 0)
        lap = np.where(rho > 0, psi_rr + 2.0 * psi_r / safe, 3.0 * psi_rr)
        grad = (psi_r / safe)[:, None] * d
        return b * e, b * e1, lap * e, grad * e


def local_energy_residual(sampler, phi: SpaceTimeBump, res: tuple = (32, 24, 48, 32),
                          nonlinear: bool = True, pressure: bool = True) -> Residual:
    """RHS - LHS of the local energy relation for test function phi.

    ``sampler`` provides velocity, gradient and pressure at (x, t), e.g.
    :class:`ProfileSampler` or :class:`LandauSampler`.
    LHS = int |grad u|^2 phi, RHS = int |u|^2/2 (phi_t + Delta phi) + (|u|^2/2 + p) u.grad phi.
    The Delta phi term is evaluated as -grad(|u|^2/2).grad phi, which is
    exact for compactly supported phi and much kinder to the quadrature.
    Returns the difference with the terms in ``terms``; the 'dissipation'
    entry is the LHS.  With ``nonlinear=False`` the flux terms are dropped
    (heat-equation identity).
    """
    n_r, n_c, n_phi, n_t = res
    off, w = ball_rule(phi.radius, n_r, n_c, n_phi, kind="gauss")
    pts = off + np.asarray(phi.center, float)
    ts, wt = time_rule(phi.t_a, phi.t_b, n_t, kind="gauss")
    D = A = Fl = Pf = 0.0
    for t, wti in zip(ts, wt):
        val, dt, lap, grad = phi.parts(pts, t)
        u = sampler.velocity(pts, t)
        J = sampler.gradient(pts, t)
        e = 0.5 * np.sum(u * u, axis=1)
        D += wti * np.sum(w * np.sum(J * J, axis=(1, 2)) * val)
        # |u|^2/2 Delta phi integrated by parts: - grad(|u|^2/2) . grad phi
        A += wti * np.sum(w * (e * dt - np.einsum("ni,nij,nj->n", u, J, grad)))
        if nonlinear:
            ug = np.sum(u * grad, axis=1)
            Fl += wti * np.sum(w * e * ug)
            if pressure:
                Pf += wti * np.sum(w * sampler.pressure(pts, t) * ug)
    rhs = A + Fl + Pf
    return Residual(rhs - D, {"dissipation": D, "energy": A, "flux": Fl, "pressure": Pf}, D == 0)


# ---------------------------------------------------------------------------
# Leray a priori quantities


def leray_apriori_check(sampler: ProfileSampler, R: float, centers: Sequence, t_end: Optional[float] = None,
                        res: tuple = (16, 12, 24, 24)) -> List[EnergyReport]:
    """sup_t int_{B_R(x0)} |u|^2/2 and int_0^T int_{B_R(x0)} |grad u|^2 for each center.

    Time nodes are midpoints in sqrt(t) on (0, T] (T = R^2 by default);
    points outside the profile's inner box use the sampler's far field.
    """
    T = R * R if t_end is None else t_end
    if not T > 0:
        raise DomainError("time window must be positive")
    n_r, n_c, n_phi, n_t = res
    off, w = ball_rule(R, n_r, n_c, n_phi)
    sq = (np.arange(n_t) + 0.5) / n_t * math.sqrt(T)
    wt = 2.0 * sq * math.sqrt(T) / n_t
    out = []
    for c in centers:
        pts = off + np.asarray(c, float)
        ksup, diss = 0.0, 0.0
        for s, wti in zip(sq, wt):
            t = s * s
            u = sampler.velocity(pts, t)
            ksup = max(ksup, float(np.sum(w * 0.5 * np.sum(u * u, axis=1))))
            J = sampler.gradient(pts, t)
            diss += wti * float(np.sum(w * np.sum(J * J, axis=(1, 2))))
        if not (math.isfinite(ksup) and math.isfinite(diss)):
            raise DomainError("non-finite energy quantities")
        out.append(EnergyReport(tuple(float(v) for v in c), R, (0.0, T), ksup, diss))
    return out


# ---------------------------------------------------------------------------
# profile residual


def profile_residual(U: gs.RealField, P: Optional[gs.RealField] = None, window: Optional[np.ndarray] = None,
                     nonlinear: bool = True, mode: str = "spectral", annulus: tuple = (1.0, 4.0),
                     tail: Optional[np.ndarray] = None) -> Residual:
    """Relative L2 residual of -Delta U - U/2 - x.grad U/2 + U.grad U + grad P.

    ``mode='spectral'``: over the inner ball, spectral derivatives of
    ``window * U`` (stress completed by ``tail``, see
    :func:`profile_solver.completed_stress`); the attribute ``leray`` holds
    the Leray projected residual, which does not depend on P.
    ``mode='fd'``: second order central differences on grid nodes of the
    annulus a <= |x| <= b.
    """
    if mode == "fd":
        return _fd_residual(U, P, nonlinear, annulus)
    if mode != "spectral":
        raise ConfigError(f"unknown residual mode {mode!r}")
    spec = U.spec
    if nonlinear:
        terms = profile_terms(U, window, pressure=False, tail=tail)
    else:
        terms = linear_profile_terms(U, window)
    if P is not None:
        terms["grad P"] = gs.inverse(gs.gradient(gs.transform(P))).data
    full = relative_residual(spec, terms)
    proj = profile_terms(U, window, tail=tail) if nonlinear else linear_profile_terms(U, window)
    full.leray = float(leray_residual(spec, proj))
    return full


def _fd_residual(U: gs.RealField, P: Optional[gs.RealField], nonlinear: bool, annulus: tuple) -> Residual:
    spec = U.spec
    h = spec.h
    u = U.data

    def d1(f, ax):
        return (np.roll(f, -1, ax) - np.roll(f, 1, ax)) / (2 * h)

    def d2(f, ax):
        return (np.roll(f, -1, ax) - 2 * f + np.roll(f, 1, ax)) / (h * h)

    x = np.broadcast_arrays(*spec.coords())
    grad = np.stack([np.stack([d1(u[i], j) for j in range(3)]) for i in range(3)])
    lap = np.stack([sum(d2(u[i], j) for j in range(3)) for i in range(3)])
    drift = np.einsum("jxyz,ijxyz->ixyz", np.stack(x), grad)
    terms = {"-lap": -lap, "-U/2": -0.5 * u, "-x.grad/2": -0.5 * drift}
    if nonlinear:
        terms["U.grad U"] = np.einsum("jxyz,ijxyz->ixyz", u, grad)
    if P is not None:
        terms["grad P"] = np.stack([d1(P.data[0], j) for j in range(3)])
    r = spec.radius()
    a, b = annulus
    if b + 2 * h > spec.L:
        raise DomainError("annulus does not fit in the box")
    mask = (r >= a) & (r <= b)
    norms = {k: float(np.sqrt(np.sum(v[:, mask] ** 2) * h ** 3)) for k, v in terms.items()}
    total = sum(terms.values())
    rn = float(np.sqrt(np.sum(total[:, mask] ** 2) * h ** 3))
    scale = max(norms.values())
    return Residual(rn / scale if scale else 0.0, norms, scale == 0)


# ---------------------------------------------------------------------------
# Landau solutions


@dataclass(frozen=True)
class LandauField:
    """Axisymmetric (-1)-homogeneous stationary solution (viscosity 1) with axis e3, parameter b > 1.

    u_r = (2/r) ((b^2 - 1)/(b - cos)^2 - 1), u_theta = -2 sin/(r (b - cos)),
    p = 4 (b cos - 1)/(r^2 (b - cos)^2).
    """

    b: float

    def __post_init__(self):
        if not self.b > 1:
            raise ConfigError("Landau parameter b must exceed 1")

    def _frame(self, x):
        x = np.atleast_2d(np.asarray(x, float))
        r = np.linalg.norm(x, axis=1)
        if np.any(r == 0):
            raise DomainError("Landau field is singular at the origin")
        c = x[:, 2] / r
        s = np.sqrt(np.maximum(1.0 - c * c, 0.0))
        rho = np.hypot(x[:, 0], x[:, 1])
        safe = np.where(rho > 0, rho, 1.0)
        cp = np.where(rho > 0, x[:, 0] / safe, 1.0)
        sp = np.where(rho > 0, x[:, 1] / safe, 0.0)
        return x, r, c, s, cp, sp

    def velocity(self, x) -> np.ndarray:
        x, r, c, s, cp, sp = self._frame(x)
        b = self.b
        ur = 2.0 / r * ((b * b - 1.0) / (b - c) ** 2 - 1.0)
        ut = -2.0 * s / (r * (b - c))
        er = x / r[:, None]
        et = np.column_stack([c * cp, c * sp, -s])
        return ur[:, None] * er + ut[:, None] * et

    def pressure(self, x) -> np.ndarray:
        x, r, c, s, cp, sp = self._frame(x)
        return 4.0 * (self.b * c - 1.0) / (r * r * (self.b - c) ** 2)

    def __call__(self, x) -> np.ndarray:
        return self.velocity(x)


class LandauSampler:
    """Stationary Landau solution as a space-time sampler (gradient by central differences)."""

    def __init__(self, b: float, step: float = 1e-5):
        self.field = LandauField(b)
        self.step = step

    def velocity(self, x, t: float) -> np.ndarray:
        return self.field.velocity(x)

    def pressure(self, x, t: float) -> np.ndarray:
        return self.field.pressure(x)

    def gradient(self, x, t: float) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        out = np.empty((len(x), 3, 3))
        for j in range(3):
            e = np.zeros(3)
            e[j] = self.step
            out[:, :, j] = (self.field.velocity(x + e) - self.field.velocity(x - e)) / (2 * self.step)
        return out


def landau_field(b: float) -> LandauField:
    return LandauField(b)


def landau_on_grid(b: float, spec: gs.GridSpec, r_min: float = 0.5):
    """Landau velocity and pressure sampled on a grid (clamped to 0 inside |x| < r_min)."""
    f = LandauField(b)
    x = np.stack([c.ravel() for c in np.broadcast_arrays(*spec.coords())], axis=1)
    r = np.linalg.norm(x, axis=1)
    ok = r >= r_min
    u = np.zeros((len(x), 3))
    p = np.zeros(len(x))
    u[ok] = f.velocity(x[ok])
    p[ok] = f.pressure(x[ok])
    n = spec.n
    return (gs.RealField(spec, u.T.reshape(3, n, n, n).copy()),
            gs.RealField(spec, p.reshape(1, n, n, n)))


def landau_refinement(b: float = 2.0, L: float = 5.0, ns: Sequence[int] = (64, 128)) -> List[float]:
    """FD profile residual of the Landau field on 1 <= |x| <= 4 for each grid size."""
    out = []
    for n in ns:
        U, P = landau_on_grid(b, gs.GridSpec(n, L))
        out.append(float(profile_residual(U, P, mode="fd")))
    return out


# ---------------------------------------------------------------------------
# decay and scaling


def asymptotics_check(sol: ProfileSolution, U0: CaloricProfile, alpha="smooth",
                      shells: Optional[Sequence[float]] = None) -> sd.DecayFit:
    """Decay fit of |U - mu e^Delta u0| over shells in [4, L/2].

    Targets: exponent 3 for smooth data, 1 + alpha for C^alpha data (stored
    in ``flag``).  A vanishing difference gives exponent inf with flag 'zero'.
    """
    spec = sol.U.spec
    shells = tuple(shells) if shells is not None else sd.default_shells(spec)
    if len(shells) < 4:
        raise DomainError("need at least 4 shells")
    D = gs.RealField(spec, sol.U.data - U0.with_mu(sol.mu).scaled().data)
    target = 3.0 if alpha == "smooth" else 1.0 + float(alpha)
    if not np.any(D.data):
        return sd.DecayFit(math.inf, 0.0, 1.0, shells, flag="zero")
    fit = sd.decay_fit(D, shells, gradient=False)
    return sd.DecayFit(fit.exponent, fit.prefactor, fit.r2, fit.shells, fit.values, None, f"target={target:g}")


def caloric_difference_fit(U0: CaloricProfile, shells: Optional[Sequence[float]] = None) -> sd.DecayFit:
    """Decay fit of |U0 - u0| (the caloric correction alone)."""
    spec = U0.spec
    if U0.source is None:
        raise ConfigError("profile has no source datum")
    u0 = sample_on_grid(U0.source, spec, 2 * spec.h)
    D = gs.RealField(spec, U0.field.data - u0.data)
    return sd.decay_fit(D, shells, gradient=False)


def scaling_invariance_check(U: gs.RealField, lam: float, samples: Iterable, interp=None) -> float:
    """max |lam u(lam x, lam^2 t) - u(x, t)| over (x, t) samples, u reconstructed from U."""
    from .caloric import reconstruct

    ip = interp or gs.Interpolator(U)
    worst = 0.0
    for x, t in samples:
        a = reconstruct(U, x, t, ip)
        b = lam * reconstruct(U, lam * np.asarray(x, float), lam * lam * t, ip)
        worst = max(worst, float(np.max(np.abs(b - a))))
    return worst


# ---------------------------------------------------------------------------
# reports


REPORT_FIELDS = ["check", "value", "threshold", "passed", "config_hash"]


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def write_report(path, rows: Sequence[dict], cfg_hash: str) -> None:
    """CSV with header check,value,threshold,passed,config_hash."""
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({"check": r["check"], "value": repr(float(r["value"])),
                        "threshold": r.get("threshold", ""), "passed": bool(r["passed"]),
                        "config_hash": cfg_hash})
