import numpy as np
import pytest
from scipy import integrate

from conftest import ROT_ALPHA, rotenberg, slab, sphere
from kinetra.decay import (
    appendix_kernel_rotenberg,
    appendix_kernel_sphere,
    decay_scan,
    rotenberg_kernel_l2,
    sandwich_norm,
    sphere_kernel_l2,
    tail_ratio,
)
from kinetra.functions import bump, zero
from kinetra.numerics import OperatorMatrix, weighted_adjoint
from kinetra.resolvent import boundary_inverse, elementary_operators, resolvent_matrix

F = bump(0.55, 0.4)


def dense_norm(model, M):
    # independent norm routine: eigenvalues of the weighted Gram matrix
    sw = np.sqrt(model.weights)
    S = sw[:, None] * M / sw[None, :]
    return float(np.sqrt(np.max(np.linalg.eigvalsh(S.conj().T @ S))))


def test_zero_factor_gives_zero(rot16):
    g = rot16.interior_grid
    Z = OperatorMatrix(np.zeros((rot16.size, rot16.size)), g, g)
    assert sandwich_norm(rot16, Z, rot16.B.matrix, 0.5) == 0.0


def test_absorbing_sandwich_equals_c():
    m = rotenberg(16, beta=0.0, alpha=0.0)
    B = m.B.matrix
    lam = 0.3 + 4j
    C = elementary_operators(m, lam).C.entries
    oracle = dense_norm(m, B.entries @ C @ B.entries)
    assert sandwich_norm(m, B, B, lam) == pytest.approx(oracle, abs=1e-10)


@pytest.mark.parametrize("build", [rotenberg, sphere])
def test_sandwich_dense_oracle(build):
    m = build(16)
    B = m.B.matrix
    Bs = weighted_adjoint(B)
    lam = -m.sigma_lower + 1.0
    R = resolvent_matrix(m, lam).entries
    for left, right in ((Bs, B), (B, Bs)):
        oracle = dense_norm(m, left.entries @ R @ right.entries)
        assert sandwich_norm(m, left, right, lam) == pytest.approx(oracle, abs=1e-10)


def test_scan_zero_collision():
    m = rotenberg(12, collision=0.0)
    scan = decay_scan(m, None, 0.0, np.geomspace(1, 100, 5))
    assert np.all(scan.norms_star_left == 0) and np.all(scan.norms_star_right == 0)
    assert scan.tail_ratio == 0.0


def test_scan_validation(rot16):
    with pytest.raises(ValueError):
        decay_scan(rot16, None, 0.0, [1.0, 10.0])
    with pytest.raises(ValueError):
        decay_scan(rot16, None, 0.0, [10.0, 1.0, 1000.0])
    with pytest.raises(Exception):
        decay_scan(rot16, None, -2.0, np.geomspace(1, 100, 5))


def test_conjugate_symmetry(rot16, sph16):
    for m in (rot16, sph16):
        B = m.B.matrix
        Bs = weighted_adjoint(B)
        for beta in (0.7, 25.0):
            for left, right in ((Bs, B), (B, Bs)):
                a = sandwich_norm(m, left, right, complex(0.0, beta))
                b = sandwich_norm(m, left, right, complex(0.0, -beta))
                assert a == pytest.approx(b, abs=1e-10)


def test_uniform_bound(rot16, sph16):
    betas = np.geomspace(1, 1000, 7)
    for m in (rot16, sph16):
        scan = decay_scan(m, None, 0.0, betas)
        bound = m.B.norm() ** 2 / 1.0
        assert np.all(scan.norms_star_left <= bound * 1.01)
        assert np.all(scan.norms_star_right <= bound * 1.01)


def test_splitting_consistency(rot16):
    B = rot16.B.matrix
    Bs = weighted_adjoint(B)
    for beta in (1.0, 30.0):
        lam = complex(0.0, beta)
        ops = elementary_operators(rot16, lam)
        X = boundary_inverse(ops, rot16.H).entries
        free = dense_norm(rot16, Bs.entries @ ops.C.entries @ B.entries)
        bnd = dense_norm(rot16, Bs.entries @ ops.Xi.entries @ rot16.H.entries @ X @ ops.G.entries @ B.entries)
        assert sandwich_norm(rot16, Bs, B, lam) <= free + bnd + 1e-10


def test_scan_decays_slab():
    m = slab(16)
    scan = decay_scan(m, None, 0.0, np.geomspace(1, 1000, 10))
    assert scan.norms_star_left[-1] < scan.norms_star_left[0]
    assert scan.norms_star_right[-1] < scan.norms_star_right[0]


def test_tail_ratio_definition():
    betas = np.geomspace(1, 1000, 7)
    norms = np.array([2.0, 1.5, 1.0, 0.5, 0.2, 0.1, 0.05])
    assert tail_ratio(betas, norms) == pytest.approx(0.1)


def test_rotenberg_kernel_at_zero(rot16):
    val = appendix_kernel_rotenberg(rot16, F, F, 0.0, 0.5)
    oracle = ROT_ALPHA * integrate.quad(lambda v: F(v) ** 2, 0.1, 1.0, epsabs=1e-14, limit=200)[0]
    assert abs(val - oracle) < 1e-10


def test_rotenberg_kernel_modulus_bound(rot16):
    lam = 5.0 + 40j
    env = ROT_ALPHA * integrate.quad(lambda v: F(v) ** 2, 0.1, 1.0, epsabs=1e-14, limit=200)[0]
    for x in (0.1, 0.5, 2.0):
        assert abs(appendix_kernel_rotenberg(rot16, F, F, x, lam)) <= np.exp(-x * 6.0 / 1.0) * env + 1e-12


def test_rotenberg_kernel_against_double_integral(rot16):
    lam = 0.0 + 30j
    x = 0.4
    kap = lam + 1.0

    def part(fn):
        return integrate.quad(lambda v: fn(F(v) ** 2 * np.exp(-x * kap / v)), 0.1, 1.0, epsabs=1e-14, limit=400)[0]

    oracle = ROT_ALPHA * (part(np.real) + 1j * part(np.imag))
    assert abs(appendix_kernel_rotenberg(rot16, F, F, x, lam) - oracle) < 1e-10


def test_rotenberg_kernel_l2_decay(rot16):
    low, bound = rotenberg_kernel_l2(rot16, F, F, 0.0 + 1j)
    high, _ = rotenberg_kernel_l2(rot16, F, F, 0.0 + 1000j)
    assert low <= bound
    assert high <= 0.1 * low


def test_rotenberg_kernel_l2_oracle(rot16):
    # double integral with the x-integral done in closed form:
    # int_0^inf F F* dx = alpha^2 int int k b2(v) k b2(w) / (kap/v + conj(kap)/w) dv dw
    lam = 0.0 + 3j
    kap = lam + 1.0
    t, w = np.polynomial.legendre.leggauss(200)
    v = 0.55 + 0.4 * t
    wv = 0.4 * w * F(v) ** 2
    K = 1.0 / (kap / v[:, None] + np.conj(kap) / v[None, :])
    oracle = ROT_ALPHA ** 2 * float(np.real(wv @ K @ wv))
    val, _ = rotenberg_kernel_l2(rot16, F, F, lam)
    assert val == pytest.approx(oracle, rel=1e-6)


def test_sphere_kernel_real_lambda(sph16):
    k, b2 = bump(0.5, 0.4), bump(0.0, 0.6)
    rho, lam = 0.6, 0.5
    for sign in (1, -1):
        def integrand(eta):
            s = np.sqrt(rho ** 2 - eta ** 2)
            path = 3 * np.sqrt(1 - eta ** 2) - sign * s
            return sign * k(np.sqrt(1 - eta ** 2)) * b2(s / rho) * np.exp(-1.5 * path) / s

        oracle = integrate.quad(integrand, 0.0, rho, limit=400, epsabs=1e-13)[0]
        assert abs(appendix_kernel_sphere(sph16, k, b2, 1, rho, sign, lam) - oracle) < 1e-8


def test_sphere_kernel_zero_factor(sph16):
    assert appendix_kernel_sphere(sph16, bump(0.5, 0.4), zero(), 0, 0.5, 1, 0.5 + 10j) == 0


def test_sphere_kernel_validation(sph16):
    with pytest.raises(ValueError):
        appendix_kernel_sphere(sph16, F, F, 0, 1.5, 1, 0.5)
    with pytest.raises(ValueError):
        appendix_kernel_sphere(sph16, F, F, 0, 0.5, 2, 0.5)


def test_sphere_kernel_l2_decay(sph16):
    k, b2 = bump(0.5, 0.4), bump(0.0, 0.6)
    for sign in (1, -1):
        low = sphere_kernel_l2(sph16, k, b2, 0, sign, 0.0 + 1j)
        high = sphere_kernel_l2(sph16, k, b2, 0, sign, 0.0 + 1000j)
        assert high <= 0.1 * low
