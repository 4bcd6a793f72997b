import csv
import math

import numpy as np
import pytest

from ssns import caloric as cal
from ssns import diagnostics as dg
from ssns import grid_spectral as gs
from ssns import profile_solver as ps
from ssns import sphere_data as sph
from ssns.errors import ConfigError, DomainError

SG = sph.SphereGrid(32, 64)


@pytest.fixture(scope="module")
def caloric64():
    u0 = sph.HomogeneousField(sph.rotational_trace(SG))
    return u0, cal.heat_extend(u0, gs.GridSpec(64, 16.0))


def smooth_field(x, t):
    # not self-similar; used for change-of-variables checks
    x = np.atleast_2d(x)
    return np.column_stack([np.sin(x[:, 1] + t), np.cos(x[:, 2]) * t, x[:, 0] ** 2 - t * x[:, 1]])


def smooth_pressure(x, t):
    x = np.atleast_2d(x)
    return np.exp(-np.sum(x * x, axis=1)) * (1 + t) + x[:, 2] * t


# ---------------------------------------------------------------------------
# Y functional


def test_cylinder_invariants():
    with pytest.raises(DomainError):
        dg.ParabolicCylinder((0, 0, 0), 1.0, 0.0)
    Q = dg.ParabolicCylinder((1.0, 0.0, 0.0), 1.0, 0.5)
    assert Q.t_start == 0.75
    assert Q.scaled(2.0) == dg.ParabolicCylinder((2.0, 0.0, 0.0), 4.0, 1.0)
    with pytest.raises(DomainError):
        dg.y_functional(smooth_field, None, dg.ParabolicCylinder((0, 0, 0), 0.5, 1.0))


def test_y_constants_exact():
    Q = dg.ParabolicCylinder((0.3, -0.2, 0.1), 2.0, 1.0)
    rep = dg.y_functional(lambda x, t: np.tile([0.7, -1.3, 2.9], (len(x), 1)),
                          lambda x, t: np.full(len(x), 5.1), Q)
    assert rep.y_value == 0.0 and rep.velocity_part == 0.0 and rep.pressure_part == 0.0


def test_y_strain_closed_form():
    # u = (g x1, -g x2, 0) on B_1: mean 0 and avg |u|^3 = g^3 avg (x1^2+x2^2)^{3/2}
    # = g^3 * (pi^2/8)/(4 pi/3) = g^3 * 3 pi/32.
    g = 1.7
    Q = dg.ParabolicCylinder((0.0, 0.0, 0.0), 1.0, 1.0)
    u = lambda x, t: np.column_stack([g * x[:, 0], -g * x[:, 1], 0 * x[:, 0]])
    rep = dg.y_functional(u, None, Q, res=(64, 64, 64, 4))
    exact = g * (3 * math.pi / 32) ** (1 / 3)
    assert abs(rep.velocity_part - exact) < 1e-3 * exact
    assert rep.y_value == rep.velocity_part + rep.pressure_part >= 0


def test_y_scaling_identity():
    lam = 2.0
    Q = dg.ParabolicCylinder((0.0, 0.0, 0.0), 1.0, 0.6)
    a = dg.y_functional(dg.rescaled(smooth_field, lam), dg.rescaled(smooth_pressure, lam, 2), Q)
    b = dg.y_functional(smooth_field, smooth_pressure, Q.scaled(lam))
    assert abs(a.y_value - lam * b.y_value) <= 1e-3 * a.y_value
    assert a.pressure_part > 0


# ---------------------------------------------------------------------------
# local energy


class _Zero:
    def velocity(self, x, t):
        return np.zeros((len(x), 3))

    def gradient(self, x, t):
        return np.zeros((len(x), 3, 3))

    def pressure(self, x, t):
        return np.zeros(len(x))


def test_bump_support():
    with pytest.raises(DomainError):
        dg.SpaceTimeBump(t_a=0.0)
    with pytest.raises(DomainError):
        dg.SpaceTimeBump(radius=0.0)


def test_local_energy_zero():
    r = dg.local_energy_residual(_Zero(), dg.SpaceTimeBump())
    assert float(r) == 0.0 and r.degenerate


def test_local_energy_landau():
    # a stationary smooth solution satisfies the local energy relation with equality
    phi = dg.SpaceTimeBump((2.0, 0.5, 0.3), 1.0, 0.5, 1.0)
    r = dg.local_energy_residual(dg.LandauSampler(1.5), phi, res=(48, 32, 64, 24))
    assert abs(float(r)) <= 1e-6 * r.terms["dissipation"]
    assert r.terms["flux"] != 0 and r.terms["pressure"] != 0


def test_local_energy_heat_field(caloric64):
    u0, U0 = caloric64
    S = dg.ProfileSampler(U0.field, None, window=U0.window(), far=u0)
    r = dg.local_energy_residual(S, dg.SpaceTimeBump(), nonlinear=False)
    assert abs(float(r)) <= 1e-3 * r.terms["dissipation"]


def test_sampler_domain(caloric64):
    _, U0 = caloric64
    S = dg.ProfileSampler(U0.field)
    with pytest.raises(DomainError):
        S.velocity(np.array([[7.0, 0, 0]]), 0.5)
    with pytest.raises(DomainError):
        S.velocity(np.array([[1.0, 0, 0]]), 0.0)


# ---------------------------------------------------------------------------
# Leray a priori quantities


def test_apriori_zero():
    reps = dg.leray_apriori_check(_Zero(), 1.0, [(0, 0, 0), (1, 0, 0)])
    assert all(e.kinetic_sup == 0 and e.dissipation == 0 for e in reps)


def test_apriori_monotone_in_R(caloric64):
    u0, U0 = caloric64
    S = dg.ProfileSampler(U0.field, None, window=U0.window(), far=u0)
    c = [(0.5, -0.3, 0.2)]
    a = dg.leray_apriori_check(S, 1.0, c, t_end=1.0)[0]
    b = dg.leray_apriori_check(S, 2.0, c, t_end=1.0)[0]
    assert 0 < a.kinetic_sup <= b.kinetic_sup
    assert 0 < a.dissipation <= b.dissipation


# ---------------------------------------------------------------------------
# profile residual and the Landau oracle


def test_profile_residual_caloric(caloric64):
    _, U0 = caloric64
    r = dg.profile_residual(U0.field, None, window=U0.window(), nonlinear=False)
    assert r < 1e-3
    assert r.leray < 1e-3


def test_profile_residual_mode():
    with pytest.raises(ConfigError):
        dg.profile_residual(gs.zeros(gs.GridSpec(32, 8.0)), mode="nope")


def test_landau_refinement_second_order():
    r = dg.landau_refinement(2.0, ns=(64, 128))
    assert r[0] / r[1] >= 3.5


def test_landau_parameter():
    for b in (1.0, 0.5):
        with pytest.raises(ConfigError):
            dg.landau_field(b)


def test_landau_homogeneity():
    f = dg.landau_field(2.0)
    x = np.random.default_rng(0).normal(size=(50, 3))
    np.testing.assert_array_equal(f(2 * x), f(x) / 2)
    np.testing.assert_allclose(f.pressure(2 * x), f.pressure(x) / 4, rtol=1e-15)


def _fd_div_and_ns(f, x, h):
    # divergence and stationary residual -Delta u + u.grad u + grad p by central differences
    div = np.zeros(len(x))
    lap = np.zeros((len(x), 3))
    adv = np.zeros((len(x), 3))
    gp = np.zeros((len(x), 3))
    u = f(x)
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        up, um = f(x + e), f(x - e)
        div += (up[:, j] - um[:, j]) / (2 * h)
        lap += (up - 2 * u + um) / h ** 2
        adv += u[:, j:j + 1] * (up - um) / (2 * h)
        gp[:, j] = (f.pressure(x + e) - f.pressure(x - e)) / (2 * h)
    return div, -lap + adv + gp


def test_landau_fd_divergence_and_equation():
    f = dg.landau_field(2.0)
    rng = np.random.default_rng(4)
    x = rng.normal(size=(100, 3))
    x *= (1 + rng.uniform(0, 2, 100) / np.linalg.norm(x, axis=1))[:, None]
    d1, n1 = _fd_div_and_ns(f, x, 1e-2)
    d2, n2 = _fd_div_and_ns(f, x, 5e-3)
    for a, b in ((d1, d2), (n1, n2)):
        ratio = np.max(np.abs(a)) / np.max(np.abs(b))
        assert 3.5 <= ratio <= 4.5


def test_landau_near_singular_finite():
    f = dg.landau_field(1.01)
    x = np.random.default_rng(5).normal(size=(200, 3))
    assert np.all(np.isfinite(f(x))) and np.all(np.isfinite(f.pressure(x)))
    assert np.max(np.abs(f(x) * np.linalg.norm(x, axis=1)[:, None])) > 10


def test_landau_on_grid():
    U, P = dg.landau_on_grid(2.0, gs.GridSpec(32, 4.0))
    x = np.array([[1.0, 0.5, -0.75]])
    j = tuple(np.round((x[0] + 4.0) / 0.25).astype(int))
    np.testing.assert_allclose(U.data[(slice(None),) + j], dg.landau_field(2.0)(x)[0], rtol=1e-14)
    assert P.ncomp == 1


# ---------------------------------------------------------------------------
# decay and scaling


def test_asymptotics_zero_difference(caloric64):
    _, U0 = caloric64
    sol = ps.ProfileSolution(1.0, gs.zeros(U0.spec), U=U0.field)
    fit = dg.asymptotics_check(sol, U0)
    assert math.isinf(fit.exponent) and fit.flag == "zero"


def test_scaling_invariance(caloric64):
    _, U0 = caloric64
    rng = np.random.default_rng(1)
    pts = [(rng.uniform(-1, 1, 3), float(rng.uniform(0.5, 1))) for _ in range(10)]
    assert dg.scaling_invariance_check(U0.field, 1.0, pts) == 0.0
    assert dg.scaling_invariance_check(U0.field, 2.0, pts) <= 1e-6
    edge = [(np.array([3.9, 0.0, 0.0]), 1.0), (np.array([0.0, -3.0, 2.5]), 1.0)]
    assert np.isfinite(dg.scaling_invariance_check(U0.field, 0.5, edge))


def test_report_csv(tmp_path):
    p = tmp_path / "report.csv"
    h = dg.config_hash("grid.n = 32\n")
    dg.write_report(p, [{"check": "scaling", "value": 0.0, "threshold": 1e-6, "passed": True}], h)
    rows = list(csv.DictReader(open(p)))
    assert list(rows[0]) == dg.REPORT_FIELDS
    assert rows[0]["config_hash"] == h and rows[0]["passed"] == "True"
