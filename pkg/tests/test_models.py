import numpy as np
import pytest
from scipy import integrate

from conftest import rotenberg, slab, sphere
from kinetra.errors import ModelError
from kinetra.functions import bump, const, parse_function
from kinetra.models import (
    CollisionTerm,
    DegenerateKernel,
    boundary_apply,
    build_rotenberg,
    build_slab,
    build_sphere,
    collision_apply,
)
from kinetra.numerics import OperatorMatrix


def test_absorbing_models_have_zero_boundary():
    for m in (build_rotenberg(0.1, 1.0, 1.0, 8, 8), build_sphere(1.0, 1.0, 8, 8)):
        assert m.H.is_zero
        assert m.H.norm() == 0.0


def test_pure_multiplication_norm():
    m = build_rotenberg(0.1, 1.0, 1.0, 8, 8, beta=const(0.5))
    assert m.H.norm() == pytest.approx(0.5, abs=1e-10)


def test_rotenberg_norm_subadditive():
    m = rotenberg(32, beta=0.3)
    kn = m.H.compact_matrix.norm()
    assert kn == pytest.approx(0.4, abs=1e-6)
    assert m.H.norm() <= 0.7 + 1e-6
    assert m.H.norm_estimate >= m.H.norm() - 1e-12


def test_rotenberg_rejects_bad_input():
    with pytest.raises(ModelError):
        build_rotenberg(0.1, 1.0, 1.0, 8, 8, beta=const(1.0))
    with pytest.raises(ModelError):
        build_rotenberg(1.0, 0.1, 1.0, 8, 8)
    with pytest.raises(ModelError):
        build_rotenberg(0.1, np.inf, 1.0, 8, 8)
    with pytest.raises(ModelError):
        build_rotenberg(0.1, 1.0, 1.0, 1, 8)
    kern = DegenerateKernel(((bump(0.05, 0.1), bump(0.5, 0.2)),), 1.0)
    with pytest.raises(ModelError):
        build_rotenberg(0.1, 1.0, 1.0, 8, 8, kernel=kern)


def test_rotenberg_boundary_apply_oracle():
    alpha, beta = 0.8, 0.5
    g, k = bump(0.55, 0.4), bump(0.55, 0.4)
    m = build_rotenberg(0.1, 1.0, 1.0, 4, 160, beta=const(beta),
                        kernel=DegenerateKernel(((g, k),), alpha))
    out = boundary_apply(m.H, np.ones(m.n_lines))
    integral = integrate.quad(lambda v: k(v) * v, 0.1, 1.0, epsabs=1e-14, limit=200)[0]
    v = m.line_param
    assert np.max(np.abs(out - (beta + alpha / v * g(v) * integral))) < 1e-10
    assert np.all(boundary_apply(m.H, np.zeros(m.n_lines)) == 0)
    with pytest.raises(ModelError):
        boundary_apply(m.H, np.ones(3))


def test_constant_multiplication_output():
    m = build_rotenberg(0.1, 1.0, 1.0, 8, 8, beta=const(0.5))
    assert np.allclose(boundary_apply(m.H, np.ones(8)), 0.5, atol=1e-15)


def test_sphere_change_of_variables_lands_in_domain():
    r, mu = np.meshgrid(np.linspace(0, 1, 33), np.linspace(-1, 1, 33))
    x, y = r * mu, r * np.sqrt(1 - mu ** 2)
    assert np.all(x ** 2 + y ** 2 <= 1 + 1e-14) and np.all(y >= 0)


def test_sphere_isometry():
    # phi(r, mu) = r: int |phi|^2 r^2 dr dmu = 2/5 over [0,1] x [-1,1]
    m = sphere(64, alpha=0.0, collision=0.0)
    x, y = m.coordinates
    val = np.sum(m.weights * (x ** 2 + y ** 2))
    assert val == pytest.approx(0.4, abs=1e-6)


def test_sphere_grid_and_boundary():
    m = sphere(16)
    x, y = m.coordinates
    assert np.all(x ** 2 + y ** 2 < 1.0) and np.all(y > 0)
    # total measure of the half disk with y dy dx is 2/3
    assert np.sum(m.weights) == pytest.approx(2.0 / 3.0, abs=1e-10)
    assert np.sum(m.trace_weights) == pytest.approx(0.5, abs=1e-10)
    with pytest.raises(ModelError):
        build_sphere(-1.0, 1.0, 8, 8)
    with pytest.raises(ModelError):
        build_sphere(1.0, 1.0, 8, 8, gamma=const(1.2))


def test_slab_structures():
    a = slab(8, "a", coef=0.5, scale=0.0)
    b = slab(8, "b", coef=0.5, scale=0.0)
    m = 4
    Ha, Hb = a.H.entries, b.H.entries
    assert a.H.norm() == pytest.approx(0.5, abs=1e-12)
    assert b.H.norm() == pytest.approx(0.5, abs=1e-12)
    # case a couples xi to -xi (reflection), case b keeps the direction
    assert np.allclose(Ha[:m, :m], 0) and np.allclose(Ha[:m, m:], 0.5 * np.eye(m))
    assert np.allclose(Hb[:m, m:], 0) and np.allclose(Hb[:m, :m], 0.5 * np.eye(m))
    with pytest.raises(ModelError):
        build_slab(1.0, 1.0, 8, 7, "a")
    with pytest.raises(ModelError):
        build_slab(1.0, 1.0, 8, 8, "d")


def test_slab_compact_norm_matches_dense_oracle():
    m = slab(16, "c", scale=0.5)
    E = m.H.entries
    assert np.allclose(np.diag(E[:, m.H.partner]), 0.0) or not np.any(m.H.multiplication_coefficient)
    sw = np.sqrt(m.trace_weights)
    oracle = np.linalg.svd(sw[:, None] * E / sw[None, :], compute_uv=False)[0]
    assert m.H.norm() == pytest.approx(oracle, rel=1e-10)
    assert m.H.norm() <= m.H.norm_estimate + 1e-12


def test_slab_trace_consistency():
    m = slab(8)
    x, xi = m.coordinates
    a = m.geometry["a"]
    lines = x.reshape(m.n_lines, m.n_s)
    # line ends lie at the walls: forward lines leave at x = a, backward at x = -a
    ends = np.array([m.position(j, m.length[j])[0] for j in range(m.n_lines)])
    starts = np.array([m.position(j, 0.0)[0] for j in range(m.n_lines)])
    fwd = m.line_param > 0
    assert np.allclose(starts[fwd], -a) and np.allclose(ends[fwd], a)
    assert np.allclose(starts[~fwd], a) and np.allclose(ends[~fwd], -a)
    assert np.all(np.abs(lines) < a)


def test_collision_empty_is_zero(rot16):
    m = rot16.without_collision()
    assert m.B.is_zero
    assert np.all(collision_apply(m.B, np.ones(m.size)) == 0)


def test_collision_single_term_oracle():
    f = bump(0.55, 0.4)
    m = build_rotenberg(0.1, 1.0, 1.0, 4, 160, collision=[CollisionTerm(const(1.0), f, f)])
    out = collision_apply(m.B, np.ones(m.size))
    integral = integrate.quad(f, 0.1, 1.0, epsabs=1e-14, limit=200)[0]
    mu, v = m.coordinates
    assert np.max(np.abs(out - f(v) * integral)) < 1e-10
    with pytest.raises(ModelError):
        collision_apply(m.B, np.ones(5))


def test_sphere_collision_constant_on_circles():
    # the angular quadrature count is raised so that it no longer limits accuracy
    f = bump(0.0, 0.6)
    m = build_sphere(1.0, 1.0, 24, 24, collision=[CollisionTerm(const(1.0), f, f)], n_tau=256)
    x, y = m.coordinates
    r = np.hypot(x, y)
    out = collision_apply(m.B, np.ones(m.size))
    integral = integrate.quad(f, -1, 1, epsabs=1e-14)[0]
    assert np.max(np.abs(out - f(x / r) * integral)) < 1e-8
    # the integral term alone depends only on the radius: apply it to phi = r^2
    m2 = build_sphere(1.0, 1.0, 24, 24, n_tau=256,
                      collision=[CollisionTerm(parse_function("poly(1, 0, 1)"), f, f)])
    out2 = collision_apply(m2.B, np.ones(m2.size))
    assert np.max(np.abs(out2 - (1 + r ** 2) * f(x / r) * integral)) < 1e-8


def test_positivity_of_boundary_and_collision(rot16, sph16, slab16):
    rng = np.random.default_rng(3)
    for m in (rot16, sph16, slab16):
        u = rng.random(m.n_lines)
        phi = rng.random(m.size)
        assert np.all(boundary_apply(m.H, u) >= 0)
        assert np.all(collision_apply(m.B, phi) >= -1e-14)


def test_norm_subadditivity_all_models(rot16, sph16, slab16):
    for m in (rot16, sph16, slab16):
        coef = np.max(m.H.multiplication_coefficient)
        assert m.H.norm() <= coef + m.H.compact_matrix.norm() + 1e-6


def test_models_are_immutable(rot16):
    with pytest.raises(Exception):
        rot16.kind = "sphere"
    m2 = rot16.with_boundary(rot16.H)
    assert m2 is not rot16 and m2.H is rot16.H
    with pytest.raises(ModelError):
        sphere(8).with_boundary(rot16.H)


def test_operator_matrix_wraps_weights(rot16):
    assert isinstance(rot16.B.matrix, OperatorMatrix)
    assert rot16.B.matrix.row_grid is rot16.interior_grid
