"""Fixed-point form V + K(V, mu) = 0 of the profile equation and continuation in mu.

U = mu U0 + V solves -Delta U - U/2 - x.grad U/2 + U.grad U + grad P = 0 when
V = G(F) with F = -div(U (x) U).  The nonlinearity is evaluated in divergence
form from the windowed field chi U, which makes the stress chi^2 U (x) U
compactly supported inside the box.  The part of the stress removed by the
window is replaced by its homogeneous tail mu^2 u0 (x) u0 (degree -2), whose
response does not depend on V and is computed once per datum.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import grid_spectral as gs
from . import stokes_duhamel as sd
from .caloric import CaloricProfile, Residual, heat_extend, linear_profile_terms, relative_residual
from .errors import ConfigError
from .sphere_data import HomogeneousField, sample_on_grid

log = logging.getLogger(__name__)

DEFAULT_SCHEDULE = tuple(round(0.1 * k, 10) for k in range(1, 11))


@dataclass(frozen=True)
class ContinuationConfig:
    mu_schedule: tuple = DEFAULT_SCHEDULE
    theta: float = 0.5
    anderson_depth: int = 3
    tol: float = 1e-5
    max_iter: int = 200
    n_s: int = 64
    max_halvings: int = 6

    def __post_init__(self):
        mus = tuple(float(m) for m in self.mu_schedule)
        object.__setattr__(self, "mu_schedule", mus)
        if not mus:
            raise ConfigError("mu_schedule is empty")
        if any(b <= a for a, b in zip(mus[:-1], mus[1:])):
            raise ConfigError("mu_schedule must be strictly increasing")
        if mus[0] < 0 or mus[-1] > 1:
            raise ConfigError("mu_schedule must lie in [0, 1]")
        if mus[0] > 0.1:
            raise ConfigError("mu_schedule must start at or below 0.1")
        if not (0 < self.theta <= 1):
            raise ConfigError("theta must lie in (0, 1]")
        if not (0 <= int(self.anderson_depth) <= 5):
            raise ConfigError("anderson_depth must be between 0 and 5")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if int(self.max_iter) < 10:
            raise ConfigError("max_iter must be at least 10")
        if int(self.n_s) < 32:
            raise ConfigError("n_s must be at least 32")


@dataclass
class ProfileSolution:
    mu: float
    V: gs.RealField
    U: Optional[gs.RealField] = None
    P: Optional[gs.RealField] = None
    x_norm: float = 0.0
    fp_residual: float = math.inf
    profile_residual: float = math.nan
    iterations: int = 0
    converged: bool = False
    status: str = "failed"
    history: List[dict] = field(default_factory=list)


# ---------------------------------------------------------------------------
# norms and the nonlinearity


def weighted_norm_X(V: gs.RealField, frac: float = 0.5) -> float:
    """sup (1+|x|)^2 |V| + sup (1+|x|)^3 |grad V| over |x| <= frac L (sum of sups)."""
    spec = V.spec
    mask = spec.inner_mask(frac)
    w = 1.0 + spec.radius()[mask]
    a = float(np.max(w ** 2 * V.magnitude()[mask]))
    J = gs.jacobian(gs.transform(V))
    g = np.sqrt(np.sum(J[:, :, mask] ** 2, axis=(0, 1)))
    return a + float(np.max(w ** 3 * g))


def _windowed_total(V: gs.RealField, U0mu: CaloricProfile) -> gs.RealField:
    w = U0mu.window()
    U = U0mu.scaled().data + V.data
    return gs.RealField(V.spec, U * w)


def nonlinearity(V: gs.RealField, U0mu: CaloricProfile) -> gs.RealField:
    """F = -div(U (x) U) for U = mu U0 + V, pseudospectral with 2/3 dealiasing.

    The product is formed from the windowed field chi U, so outside the
    periodic case F is -div(chi^2 U (x) U).
    """
    Uw = _windowed_total(V, U0mu)
    T = gs.products(Uw, Uw)
    return gs.inverse(gs.div_products(V.spec, T)).scaled(-1.0)


class FixedPointMap:
    """K(V, mu) = -G(F(V, mu)) for one datum, with the far-field tail precomputed."""

    def __init__(self, U0: CaloricProfile, n_s: int = 64, far_field: bool = True):
        self.U0 = U0.with_mu(1.0)
        self.spec = U0.spec
        self.quad = sd.DuhamelQuadrature(n_s)
        self.tail = None
        self._u0 = None
        if far_field and not U0.periodic and U0.source is not None:
            self._u0 = sample_on_grid(U0.source, self.spec, 2 * self.spec.h).data
            T = np.stack([self._u0[i] * self._u0[j] for i, j in sd.TENSOR_INDEX])
            self.tail = sd.far_field_response(self.spec, self.quad, tensor=T, power=2)
        self.evaluations = 0

    def tail_stress(self, mu: float) -> Optional[np.ndarray]:
        """mu^2 (1 - chi^2) u0 (x) u0 inside the far box (9 components), or None."""
        if self._u0 is None:
            return None
        return tail_stress(self._u0, self.spec, self.U0.window(), mu)

    def forcing(self, V: gs.RealField, mu: float) -> gs.RealField:
        return nonlinearity(V, self.U0.with_mu(mu))

    def __call__(self, V: gs.RealField, mu: float) -> gs.RealField:
        self.evaluations += 1
        if mu == 0 and not np.any(V.data):
            return gs.zeros(self.spec)
        F = self.forcing(V, mu)
        G = sd.duhamel_apply(F, quad=self.quad, taper=False).data
        if self.tail is not None and mu != 0:
            G = G + mu * mu * self.tail.data
        return gs.RealField(self.spec, -G)


def tail_stress(u0_samples: np.ndarray, spec: gs.GridSpec, window: np.ndarray, mu: float) -> np.ndarray:
    """Stress of the homogeneous tail outside the window, cut off by the far box."""
    u = u0_samples
    cut = sd._win3(spec, 1.0, *sd.FAR_BOX) * (1.0 - window * window) * mu * mu
    return np.stack([u[i] * u[j] * cut for i in range(3) for j in range(3)])


def K_map(V: gs.RealField, mu: float, U0: CaloricProfile, kmap: Optional[FixedPointMap] = None) -> gs.RealField:
    """K(V, mu) = G(U.grad U) for U = mu U0 + V, so that V + K(V, mu) = 0 at a solution."""
    kmap = kmap or FixedPointMap(U0)
    return kmap(V, mu)


# ---------------------------------------------------------------------------
# residuals of the profile equation


def completed_stress(U: gs.RealField, window: Optional[np.ndarray] = None,
                     tail: Optional[np.ndarray] = None) -> np.ndarray:
    """Transformed stress chi^2 U (x) U plus an optional tail (9 components, physical).

    With the tail of :meth:`FixedPointMap.tail_stress` this is the stress the
    fixed-point map actually integrates, so its pressure includes the far field.
    """
    spec = U.spec
    Uw = gs.RealField(spec, U.data if window is None else U.data * window)
    T = gs.products(Uw, Uw)
    if tail is not None:
        m = gs.dealias_mask(spec)
        for c in range(9):
            T[c] += gs.transform(gs.RealField(spec, tail[c:c + 1])).coeffs[0] * m
    return T


def profile_terms(U: gs.RealField, window: Optional[np.ndarray] = None, pressure: bool = True,
                  tail: Optional[np.ndarray] = None) -> dict:
    """Terms of -Delta U - U/2 - x.grad U/2 + div(U (x) U) + grad P as physical arrays.

    Derivatives act on ``window * U``; P is the box pressure of the windowed
    stress plus ``tail`` (see :func:`completed_stress`), so the summed terms
    are divergence free wherever the window equals 1.
    """
    spec = U.spec
    terms = linear_profile_terms(U, window)
    T = completed_stress(U, window, tail)
    terms["div(UU)"] = gs.inverse(gs.div_products(spec, T)).data
    if pressure:
        P = gs.pressure_from_products(spec, T)
        terms["grad P"] = gs.inverse(gs.gradient(P)).data
    return terms


INNER_WINDOW = (0.6, 0.02)


def leray_residual(spec: gs.GridSpec, terms: dict, frac: float = 0.5) -> Residual:
    """Relative L2 norm over |x| <= frac L of P(chi_in * sum of terms).

    chi_in equals 1 on the inner ball and cuts off at 0.6 L, inside the region
    where the box window of U is 1, so nothing from the window edge reaches
    the projection.  The normalization is the largest single-term norm.
    """
    total = sum(terms.values()) * gs.taper(spec, *INNER_WINDOW)
    S = gs.helmholtz_project(gs.transform(gs.RealField(spec, total)))
    proj = gs.inverse(S).data
    mask = spec.inner_mask(frac)
    norms = {k: float(np.sqrt(np.sum(v[:, mask] ** 2) * spec.h ** 3)) for k, v in terms.items()}
    scale = max(norms.values())
    if scale == 0.0:
        return Residual(0.0, norms, True)
    rnorm = float(np.sqrt(np.sum(proj[:, mask] ** 2) * spec.h ** 3))
    return Residual(rnorm / scale, norms, False)


def profile_residual_of(U: gs.RealField, window: Optional[np.ndarray],
                        tail: Optional[np.ndarray] = None) -> Residual:
    return leray_residual(U.spec, profile_terms(U, window, tail=tail))


# ---------------------------------------------------------------------------
# fixed-point iteration


class _Anderson:
    """Damped Anderson mixing on iterates x and residuals f = g(x) - x."""

    def __init__(self, depth: int, theta: float):
        self.depth = depth
        self.theta = theta
        self.xs: List[np.ndarray] = []
        self.fs: List[np.ndarray] = []

    def reset(self):
        self.xs.clear()
        self.fs.clear()

    def step(self, x: np.ndarray, f: np.ndarray) -> np.ndarray:
        self.xs.append(x)
        self.fs.append(f)
        if len(self.xs) > self.depth + 1:
            self.xs.pop(0)
            self.fs.pop(0)
        new = x + self.theta * f
        m = len(self.xs) - 1
        if m == 0 or self.depth == 0:
            return new
        dF = np.stack([(self.fs[i + 1] - self.fs[i]).ravel() for i in range(m)], axis=1)
        dX = np.stack([(self.xs[i + 1] - self.xs[i]).ravel() for i in range(m)], axis=1)
        gamma, *_ = np.linalg.lstsq(dF, f.ravel(), rcond=1e-10)
        return new - ((dX + self.theta * dF) @ gamma).reshape(x.shape)


def solve_fixed_point(mu: float, V_init: Optional[gs.RealField], cfg: ContinuationConfig,
                      U0: Optional[CaloricProfile] = None, kmap: Optional[FixedPointMap] = None,
                      finalize: bool = True) -> ProfileSolution:
    """Damped Picard/Anderson iteration for V + K(V, mu) = 0.

    Success iff ||V + K(V, mu)||_X <= tol within max_iter evaluations of K.
    On failure the last iterate and the residual history are returned with
    ``converged = False``.
    """
    if not (0.0 <= mu <= 1.0):
        raise ConfigError("mu must lie in [0, 1]")
    if kmap is None:
        if U0 is None:
            raise ConfigError("need U0 or a fixed-point map")
        kmap = FixedPointMap(U0, cfg.n_s)
    spec = kmap.spec
    V = V_init if V_init is not None else gs.zeros(spec)
    acc = _Anderson(int(cfg.anderson_depth), cfg.theta)
    history = []
    best = (math.inf, V)
    res = math.inf
    for it in range(1, int(cfg.max_iter) + 1):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                f = kmap(V, mu).scaled(-1.0).data - V.data
        except gs.GridError:
            # an overflowing iterate produced non-finite samples inside K
            f = np.full_like(V.data, np.nan)
        if not np.all(np.isfinite(f)):
            history.append({"mu": mu, "iter": it, "fp_residual": math.inf, "x_norm": math.inf})
            break
        with np.errstate(over="ignore"):
            res = weighted_norm_X(gs.RealField(spec, f))
            xn = weighted_norm_X(V)
        history.append({"mu": mu, "iter": it, "fp_residual": res, "x_norm": xn})
        log.info("mu=%.4f iter=%d fp_residual=%.3e x_norm=%.4e", mu, it, res, xn)
        if res < best[0]:
            best = (res, V)
        if res <= cfg.tol:
            break
        if res > 10.0 * best[0]:
            acc.reset()
        V = gs.RealField(spec, acc.step(V.data, f))
    converged = res <= cfg.tol
    if not converged:
        res, V = best
    sol = ProfileSolution(mu, V, fp_residual=res, iterations=len(history), converged=converged,
                          status="ok" if converged else "failed", history=history)
    sol.x_norm = weighted_norm_X(V) if np.all(np.isfinite(V.data)) else math.inf
    if finalize and np.all(np.isfinite(V.data)):
        _finalize(sol, kmap)
    return sol


def _finalize(sol: ProfileSolution, kmap: FixedPointMap) -> None:
    U0 = kmap.U0.with_mu(sol.mu)
    spec = kmap.spec
    U = gs.RealField(spec, U0.scaled().data + sol.V.data)
    w = None if U0.periodic else U0.window()
    tail = kmap.tail_stress(sol.mu)
    sol.U = U
    sol.P = gs.inverse(gs.pressure_from_products(spec, completed_stress(U, w, tail)))
    sol.profile_residual = float(profile_residual_of(U, w, tail))


# ---------------------------------------------------------------------------
# continuation


def continuation(u0: Optional[HomogeneousField], grid: gs.GridSpec, cfg: ContinuationConfig,
                 U0: Optional[CaloricProfile] = None, kmap: Optional[FixedPointMap] = None,
                 solutions: Optional[list] = None) -> ProfileSolution:
    """Solve along the mu schedule, warm-starting every step.

    The start value of a step is the secant extrapolation of the last two
    accepted solutions (the previous V when only one exists).  A failed step
    halves the mu increment, at most ``max_halvings`` times in a row; the
    best solution reached is then returned with status 'partial'.
    ``solutions`` collects every accepted step.
    """
    if kmap is None:
        if U0 is None:
            if u0 is None:
                raise ConfigError("need u0 or U0")
            U0 = heat_extend(u0, grid)
        kmap = FixedPointMap(U0, cfg.n_s)
    spec = kmap.spec
    history: List[dict] = []
    accepted: List[ProfileSolution] = []
    targets = list(cfg.mu_schedule)
    mu_prev = 0.0
    V_prev = gs.zeros(spec)
    halvings = 0
    while targets:
        mu = targets[0]
        if len(accepted) >= 2:
            a, b = accepted[-2], accepted[-1]
            c = (mu - b.mu) / (b.mu - a.mu)
            V_start = gs.RealField(spec, b.V.data + c * (b.V.data - a.V.data))
        else:
            V_start = V_prev
        sol = solve_fixed_point(mu, V_start, cfg, kmap=kmap, finalize=False)
        history.extend(sol.history)
        if sol.converged:
            accepted.append(sol)
            if solutions is not None:
                solutions.append(sol)
            mu_prev, V_prev = mu, sol.V
            targets.pop(0)
            halvings = 0
            continue
        if halvings >= cfg.max_halvings:
            break
        halvings += 1
        targets.insert(0, 0.5 * (mu_prev + mu))
    if accepted:
        last = accepted[-1]
        _finalize(last, kmap)
        last.status = "ok" if last.mu >= cfg.mu_schedule[-1] else "partial"
    else:
        last = ProfileSolution(0.0, gs.zeros(spec), fp_residual=math.inf, status="partial")
    last.history = history
    last.iterations = len(history)
    return last


def write_iteration_csv(path, history: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["mu", "iter", "fp_residual", "x_norm"])
        w.writeheader()
        for row in history:
            w.writerow({k: row[k] for k in ("mu", "iter", "fp_residual", "x_norm")})
