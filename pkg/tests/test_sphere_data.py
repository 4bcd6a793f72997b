import numpy as np
import pytest
from scipy import integrate
from scipy.special import eval_legendre

from ssns import grid_spectral as gs
from ssns import sphere_data as sph
from ssns.errors import DomainError, ResolutionError

G = sph.SphereGrid(32, 64)


def test_sphere_weights_sum_to_area():
    for nt, npf in [(8, 16), (32, 64), (33, 70)]:
        g = sph.SphereGrid(nt, npf)
        assert abs(g.weights.sum() - 4 * np.pi) / (4 * np.pi) < 1e-12


def test_sphere_grid_limits():
    with pytest.raises(ValueError):
        sph.SphereGrid(6, 16)
    with pytest.raises(ValueError):
        sph.SphereGrid(8, 12)


def test_sphere_field_rejects_bad_values():
    with pytest.raises(ValueError):
        sph.SphereField(G, np.zeros((G.size - 1, 3)))
    bad = np.zeros((G.size, 3))
    bad[3, 1] = np.nan
    with pytest.raises(ValueError):
        sph.SphereField(G, bad)


def test_rotational_value():
    f = sph.HomogeneousField(sph.rotational_trace(G))
    np.testing.assert_allclose(sph.eval_homogeneous(f, [2.0, 0.0, 0.0]), [0.0, 0.5, 0.0], atol=1e-12)


def test_origin_is_domain_error():
    f = sph.HomogeneousField(sph.rotational_trace(G))
    with pytest.raises(DomainError):
        sph.eval_homogeneous(f, [0.0, 0.0, 0.0])


def test_homogeneity_random_pairs():
    rng = np.random.default_rng(1)
    f = sph.HomogeneousField(sph.swirl_corner_trace(G))
    x = rng.normal(size=(100, 3))
    lam = np.exp(rng.uniform(-3, 3, size=100))
    a = f(lam[:, None] * x)
    b = f(x) / lam[:, None]
    assert np.max(np.abs(a - b)) <= 1e-15 * np.max(np.abs(b)) * 10


def _quadratic_toroidal(A, b):
    def func(s):
        grad = s @ (A + A.T).T + b
        return np.cross(s, grad)
    return func


def test_interpolation_matches_closed_form():
    # sigma x grad(psi) for a quadratic psi is a degree-2 vector harmonic
    # expansion; its closed form is the oracle for the off-node value.
    rng = np.random.default_rng(7)
    A, b = rng.normal(size=(3, 3)), rng.normal(size=3)
    func = _quadratic_toroidal(A, b)
    f = sph.HomogeneousField(sph.trace_from_function(G, func))
    x = np.array([1.0, 1.0, 1.0])
    expected = func((x / np.linalg.norm(x))[None])[0] / np.linalg.norm(x)
    assert np.max(np.abs(f(x) - expected)) < 1e-6
    pts = rng.normal(size=(50, 3))
    r = np.linalg.norm(pts, axis=1)[:, None]
    assert np.max(np.abs(f(pts) - func(pts / r) / r)) < 1e-6


def test_mollify_constant():
    c = np.tile([0.3, -1.2, 2.0], (G.size, 1))
    for eps in (0.05, 0.2, 0.7):
        out = sph.mollify_sphere(sph.SphereField(G, c), eps)
        np.testing.assert_allclose(out.values, c, atol=1e-14)


def test_mollify_precondition():
    f = sph.rotational_trace(G)
    for eps in (0.0, np.pi / 4, -0.1):
        with pytest.raises(ValueError):
            sph.mollify_sphere(f, eps)


def test_mollify_converges_on_lipschitz_field():
    # eps = 0.05 spans only a couple of nodes near the poles of a 64-row grid
    g = sph.SphereGrid(128, 256)
    f = sph.swirl_corner_trace(g, alpha=1.0)
    d = [np.max(np.abs(sph.mollify_sphere(f, e).values - f.values)) for e in (0.2, 0.1, 0.05)]
    assert d[0] > d[1] > d[2]
    assert all(sph.mollify_sphere(f, e).sup_norm() <= f.sup_norm() + 1e-15 for e in (0.2, 0.1))


def test_mollify_damps_harmonic_by_funk_hecke_factor():
    # zonal P_ell about an off-axis pole; the damping factor is the
    # Funk-Hecke integral of the normalized bump, evaluated here with QUADPACK.
    g = sph.SphereGrid(96, 192)
    ell, eps = 4, 0.3
    pole = np.array([0.3, -0.2, 0.9])
    pole /= np.linalg.norm(pole)
    vals = eval_legendre(ell, g.nodes @ pole)
    out = sph.mollify_sphere(sph.SphereField(g, vals), eps).values[:, 0]

    def kern(gam):
        s = gam / eps
        return np.exp(-1 / (1 - s * s)) * np.sin(gam) if s < 1 else 0.0

    num = integrate.quad(lambda t: kern(t) * eval_legendre(ell, np.cos(t)), 0, eps)[0]
    den = integrate.quad(kern, 0, eps)[0]
    lam = num / den
    fit = np.dot(out, vals) / np.dot(vals, vals)
    assert abs(fit - lam) < 5e-3
    assert abs(sph.mollifier_damping(ell, eps) - lam) < 1e-10


def test_mollify_linear_and_positive():
    rng = np.random.default_rng(3)
    a = sph.SphereField(G, rng.uniform(0, 1, size=(G.size, 3)))
    b = sph.SphereField(G, rng.uniform(0, 1, size=(G.size, 3)))
    ma, mb = sph.mollify_sphere(a, 0.2), sph.mollify_sphere(b, 0.2)
    mab = sph.mollify_sphere(sph.SphereField(G, 2 * a.values + 3 * b.values), 0.2)
    np.testing.assert_allclose(mab.values, 2 * ma.values + 3 * mb.values, atol=1e-13)
    assert np.all(ma.values >= 0)


def test_project_keeps_rotational():
    f = sph.HomogeneousField(sph.rotational_trace(G))
    p = sph.project_divfree(f, gs.GridSpec(64, 4.0))
    assert np.max(np.abs(p.trace.values - f.trace.values)) < 1e-6


def test_project_reduces_gradient_divergence():
    f = sph.HomogeneousField(sph.trace_from_function(G, lambda s: s.copy()))
    before = np.max(np.abs(sph.divergence_on_sphere(f)))
    p = sph.project_divfree(f, gs.GridSpec(64, 4.0))
    after = np.max(np.abs(sph.divergence_on_sphere(p)))
    assert after * 100 <= before


def test_project_idempotent():
    rng = np.random.default_rng(11)
    A, b = rng.normal(size=(3, 3)), rng.normal(size=3)
    f = sph.HomogeneousField(sph.trace_from_function(G, lambda s: s @ A.T + b))
    spec = gs.GridSpec(64, 4.0)
    p1 = sph.project_divfree(f, spec)
    p2 = sph.project_divfree(p1, spec)
    assert np.max(np.abs(p2.trace.values - p1.trace.values)) < 1e-8


def test_project_coarse_grid_is_resolution_error():
    f = sph.HomogeneousField(sph.rotational_trace(G))
    with pytest.raises(ResolutionError):
        sph.project_divfree(f, gs.GridSpec(32, 16.0))


def test_sample_clamps_inside_cutoff():
    spec = gs.GridSpec(32, 4.0)
    f = sph.HomogeneousField(sph.rotational_trace(G))
    s = sph.sample_on_grid(f, spec)
    assert np.all(np.isfinite(s.data))
    assert np.max(s.magnitude()) <= 1.0 / (2 * spec.h) + 1e-12


def test_trace_table_round_trip(tmp_path):
    f = sph.swirl_corner_trace(G)
    p = tmp_path / "t.txt"
    sph.write_trace(p, f)
    g = sph.read_trace(p)
    assert g.grid == f.grid
    np.testing.assert_array_equal(g.values, f.values)
