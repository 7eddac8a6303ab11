import numpy as np
import pytest
from scipy import integrate, optimize

from conftest import rotenberg
from kinetra.errors import NumericalFailure, OutsideHalfPlane
from kinetra.functions import bump, const
from kinetra.models import CollisionTerm, DegenerateKernel, build_rotenberg
from kinetra.evolution import generator
from kinetra.numerics import OperatorMatrix
from kinetra.resolvent import oracle_defect
from kinetra.spectra import (
    asymptotic_expansion,
    boundary_defect,
    dispersion_scan,
    resolvent_difference_profile,
    spectral_projection,
    stability_report,
)

EIG_ALPHA = 5.08450026108425
F = bump(0.55, 0.4)


def eigen_model(n_s=8, n_v=24, collision=False):
    terms = [CollisionTerm(const(0.5), F, F)] if collision else []
    return build_rotenberg(0.1, 1.0, 1.0, n_s, n_v, kernel=DegenerateKernel(((F, F),), EIG_ALPHA),
                           collision=terms)


@pytest.fixture(scope="module")
def lam0():
    # scalar relation alpha int k g exp(-(lam + 1)/v) dv = 1, solved by bracketing
    def rel(lam):
        return EIG_ALPHA * integrate.quad(lambda v: F(v) ** 2 * np.exp(-(lam + 1) / v), 0.1, 1.0,
                                          epsabs=1e-15, epsrel=1e-13, limit=400)[0] - 1.0
    assert EIG_ALPHA * integrate.quad(lambda v: F(v) ** 2, 0.1, 1.0, limit=400)[0] == pytest.approx(2.0, rel=1e-9)
    return optimize.brentq(rel, -0.99, 2.0, xtol=1e-15, rtol=1e-15)


def test_empty_for_zero_boundary():
    m = build_rotenberg(0.1, 1.0, 1.0, 4, 16)
    assert dispersion_scan(m, (-0.9, 2, -5, 5), grid=(8, 8)) == []


def test_empty_for_pure_multiplication():
    m = build_rotenberg(0.1, 1.0, 1.0, 4, 16, beta=const(0.9))
    assert dispersion_scan(m, (-0.99, 2, -20, 20), grid=(20, 20)) == []


def test_region_must_avoid_critical_line():
    with pytest.raises(OutsideHalfPlane):
        dispersion_scan(eigen_model(), (-1.0, 1, -1, 1))


def test_rank_one_root_matches_scalar_oracle(lam0):
    m = eigen_model(4, 64)
    found = dispersion_scan(m, (-0.95, 1.0, -3.0, 3.0), grid=(20, 20))
    assert len(found) == 1
    assert abs(found[0].lam - lam0) < 1e-8
    assert found[0].boundary_defect < 1e-8


def test_scan_confirmed_by_oracle():
    m = eigen_model(8, 32)
    rec = dispersion_scan(m, (-0.95, 1.0, -3.0, 3.0), grid=(12, 12))[0]
    assert oracle_defect(m, rec.lam, discrete_velocity=True) <= 1e-6
    assert oracle_defect(m, rec.lam + 0.2, discrete_velocity=True) > 1e-3


def test_projection_rank_one(lam0):
    m = eigen_model()
    rec = spectral_projection(m, lam0, 0.3, with_collision=False)
    assert rec.projection_rank == 1
    assert rec.idempotency <= 1e-6
    assert rec.nilpotent_norm <= 1e-6
    assert abs(rec.lam_h - lam0) < 0.05


def test_projection_without_eigenvalue():
    m = eigen_model()
    rec = spectral_projection(m, 1.0, 0.3, with_collision=False)
    assert rec.projection_rank == 0
    assert rec.projection.norm() <= 1e-8


def test_projection_disjoint_contours_orthogonal(lam0):
    m = eigen_model()
    P1 = spectral_projection(m, lam0, 0.3, with_collision=False).projection
    P2 = spectral_projection(m, lam0 + 1.0, 0.3, with_collision=False).projection
    g = m.interior_grid
    assert OperatorMatrix(P1.entries @ P2.entries, g, g).norm() <= 1e-6


def test_projection_contour_on_spectrum(lam0):
    m = eigen_model(4, 64)
    # a node of the 32-point contour lands on the eigenvalue
    theta = 2 * np.pi * 0.5 / 32
    centre = lam0 - 0.1 * np.exp(1j * theta)
    with pytest.raises(NumericalFailure) as info:
        spectral_projection(m, centre, 0.1, with_collision=False)
    assert "node" in info.value.info


def test_simple_pole_behaviour(lam0):
    m = eigen_model()
    rec = spectral_projection(m, lam0, 0.3, with_collision=False)
    A = generator(m, False, "upwind")
    g = m.interior_grid
    vals = []
    for eps in (1e-2, 1e-3, 1e-4):
        R = np.linalg.inv((rec.lam_h + eps) * np.eye(m.size) - A)
        vals.append(OperatorMatrix(R, g, g).norm() * eps)
    assert min(vals) > 0.5 * max(vals)


def test_invariant_subspace_expansion(lam0):
    m = eigen_model(collision=False)
    rec = spectral_projection(m, lam0, 0.3, with_collision=False)
    phi0 = rec.projection.entries @ m.sample(lambda a, b: F(b) + 0 * a)
    res = asymptotic_expansion(m, phi0, [rec], [1, 2, 4, 8], nu=-1.0, with_collision=False)
    norm0 = np.sqrt(np.sum(m.weights * np.abs(phi0) ** 2))
    assert np.all(res.residuals <= 1e-6 * np.exp(rec.lam_h.real * res.t_values) * norm0)


def test_absorbing_expansion_decays():
    m = build_rotenberg(0.1, 1.0, 1.0, 8, 8)
    phi0 = np.ones(m.size)
    res = asymptotic_expansion(m, phi0, [], [0.5, 1.0, 1.5], nu=-1.0)
    norm0 = np.sqrt(np.sum(m.weights))
    assert np.all(res.residuals <= np.exp(-res.t_values) * norm0 * (1 + 1e-6))
    assert res.fitted_rate <= -1.0 + 1e-6
    with pytest.raises(ValueError):
        asymptotic_expansion(m, phi0, [], [1.0, 0.5], nu=-1.0)


def test_expansion_rate_rank_one(lam0):
    m = eigen_model()
    rec = spectral_projection(m, lam0, 0.3)
    phi0 = m.sample(lambda a, b: bump(0.5, 0.45)(a) * F(b))
    res = asymptotic_expansion(m, phi0, [rec], [1, 2, 4, 8], nu=-1.0)
    assert res.passed and res.fitted_rate <= res.beta


def test_report_identical_without_collision():
    rep = stability_report(lambda n: rotenberg(n, collision=0.0), 1.0, [8, 10])
    for lv in rep.levels:
        assert np.array_equal(lv.eig_U, lv.eig_V)
        assert lv.r_ess_U == lv.r_ess_V
    assert rep.relative_gap == 0.0 and rep.outlier_count_stable


def test_report_monotone_in_collision():
    a = stability_report(lambda n: rotenberg(n, collision=0.0), 1.0, [8, 10])
    b = stability_report(lambda n: rotenberg(n), 1.0, [8, 10], profiles=True)
    for la, lb in zip(a.levels, b.levels):
        assert np.array_equal(la.eig_U, lb.eig_U)
        assert la.r_ess_U == lb.r_ess_U
    assert b.levels[-1].sv_R1 is not None
    with pytest.raises(ValueError):
        stability_report(rotenberg, 1.0, [8])
    with pytest.raises(ValueError):
        stability_report(rotenberg, 0.0, [8, 10])


def test_resolvent_difference_profile_decays():
    sv = resolvent_difference_profile(rotenberg(12), 0.5)
    assert sv[0] > 0 and sv[40] < 1e-3 * sv[0]


def test_boundary_defect_positive_off_spectrum():
    assert boundary_defect(eigen_model(), 0.5) > 1e-2
