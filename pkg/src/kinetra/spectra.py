"""Point spectrum, Riesz projections, asymptotic expansions and essential-spectrum reports.

Eigenvalues of the streaming generator to the right of ``-sigma`` are the
zeros of ``lambda -> I - M_lambda H`` (the boundary dispersion relation).
They are located by scanning the smallest singular value of that matrix and
refined by Newton's method on its determinant, using

    d/dlambda log det(I - M H) = tr((I - M H)^-1 tau M H),

where ``tau`` is the transit time of each line.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.sparse.linalg import expm_multiply

from .errors import NumericalFailure, OutsideHalfPlane
from .evolution import first_remainder, full_propagator, generator, streaming_propagator
from .models import Model
from .numerics import OperatorMatrix, singular_value_profile

__all__ = [
    "EigenRecord",
    "SpectrumReport",
    "ExpansionResult",
    "dispersion_matrix",
    "boundary_defect",
    "dispersion_scan",
    "spectral_projection",
    "asymptotic_expansion",
    "stability_report",
    "resolvent_difference_profile",
]


@dataclass(frozen=True)
class EigenRecord:
    """An isolated eigenvalue with its Riesz projection data.

    ``lam`` is the root of the dispersion relation (or the contour centre);
    ``lam_h`` the eigenvalue of the discrete generator enclosed by the contour.
    """

    lam: complex
    boundary_defect: float
    projection_rank: int = 0
    nilpotent_norm: float = float("nan")
    lam_h: complex = complex("nan")
    idempotency: float = float("nan")
    projection: OperatorMatrix | None = field(default=None, repr=False, compare=False)
    nilpotent: OperatorMatrix | None = field(default=None, repr=False, compare=False)


def dispersion_matrix(model: Model, lam) -> np.ndarray:
    """``I - M_lambda H`` with the exact transit factors ``exp(-(lambda + sigma) L / c)``."""
    kappa = complex(lam) + model.sigma_lower
    m = np.exp(-kappa * model.transit_time())
    return np.eye(model.n_lines) - m[:, None] * model.H.entries


def boundary_defect(model: Model, lam) -> float:
    """Smallest weighted singular value of ``I - M_lambda H``."""
    sw = np.sqrt(model.trace_weights)
    D = dispersion_matrix(model, lam)
    return float(np.linalg.svd(sw[:, None] * D / sw[None, :], compute_uv=False)[-1])


def _newton(model: Model, lam0: complex, tol=1e-14, maxit=60):
    tau = model.transit_time()
    H = model.H.entries
    lam = complex(lam0)
    for _ in range(maxit):
        kappa = lam + model.sigma_lower
        m = np.exp(-kappa * tau)
        D = np.eye(model.n_lines) - m[:, None] * H
        try:
            X = np.linalg.solve(D, (tau * m)[:, None] * H)
        except np.linalg.LinAlgError:
            return lam
        dlog = np.trace(X)
        if dlog == 0:
            return lam
        step = 1.0 / dlog
        lam = lam - step
        if abs(step) <= tol * max(1.0, abs(lam)):
            break
    return lam


def _check_region(model, region):
    re_lo, re_hi, im_lo, im_hi = (float(v) for v in region)
    if not (re_lo < re_hi and im_lo <= im_hi):
        raise ValueError("region must be (re_lo, re_hi, im_lo, im_hi) with re_lo < re_hi")
    if re_lo <= -model.sigma_lower + 1e-6:
        raise OutsideHalfPlane(
            f"region touches the critical line Re(lambda) = {-model.sigma_lower:g}; start it to the right")
    return re_lo, re_hi, im_lo, im_hi


def dispersion_scan(model: Model, region, grid=(40, 40), accept: float = 1e-8) -> list[EigenRecord]:
    """Eigenvalues of the streaming generator in a rectangle right of ``-sigma``.

    Parameters
    ----------
    region : (re_lo, re_hi, im_lo, im_hi)
    grid : (n_re, n_im)
        Coarse scan resolution; every local minimum of the smallest singular
        value is polished by Newton's method.
    """
    re_lo, re_hi, im_lo, im_hi = _check_region(model, region)
    if model.H.is_zero:
        return []
    nr, ni = (int(g) for g in grid)
    xs = np.linspace(re_lo, re_hi, nr)
    ys = np.linspace(im_lo, im_hi, ni) if ni > 1 else np.array([im_lo])
    S = np.array([[boundary_defect(model, x + 1j * y) for y in ys] for x in xs])
    seeds = []
    for i in range(nr):
        for k in range(ni):
            nb = S[max(i - 1, 0):i + 2, max(k - 1, 0):k + 2]
            if S[i, k] <= nb.min():
                seeds.append(xs[i] + 1j * ys[k])
    found: list[EigenRecord] = []
    span = max(re_hi - re_lo, im_hi - im_lo, 1.0)
    for z0 in seeds:
        z = _newton(model, z0)
        if not np.isfinite(z):
            continue
        if not (re_lo - 1e-9 * span <= z.real <= re_hi + 1e-9 * span
                and im_lo - 1e-9 * span <= z.imag <= im_hi + 1e-9 * span):
            continue
        d = boundary_defect(model, z)
        if d >= accept:
            continue
        if any(abs(z - r.lam) <= 1e-8 * max(1.0, abs(z)) for r in found):
            continue
        found.append(EigenRecord(z, d))
    found.sort(key=lambda r: (-r.lam.real, r.lam.imag))
    return found


def _generator_resolvent(A: np.ndarray, z: complex) -> np.ndarray:
    return np.linalg.solve(z * np.eye(A.shape[0]) - A, np.eye(A.shape[0]))


def spectral_projection(model: Model, lambda0: complex, radius: float, nodes: int = 32,
                        scheme: str = "upwind", with_collision: bool = True) -> EigenRecord:
    """Riesz projection of the discrete generator for the circle ``|z - lambda0| = radius``.

    ``P = (1/2 pi i) oint (z - A_h)^-1 dz`` by the trapezoid rule on ``nodes``
    points; ``A_h P`` is obtained from the same rule with an extra factor z.
    The rank counts weighted singular values of P above 1/2; for a nonzero
    rank the discrete eigenvalue is ``tr(A_h P) / rank`` and the nilpotent
    part is ``D = (A_h - lam_h) P``.
    """
    lambda0 = complex(lambda0)
    if radius <= 0:
        raise ValueError("contour radius must be positive")
    if lambda0.real - radius <= -model.sigma_lower:
        raise OutsideHalfPlane("contour crosses Re(lambda) = -sigma")
    A = generator(model, with_collision and not model.B.is_zero, scheme)
    g = model.interior_grid
    theta = 2.0 * np.pi * (np.arange(nodes) + 0.5) / nodes
    P = np.zeros(A.shape, dtype=complex)
    AP = np.zeros(A.shape, dtype=complex)
    for th in theta:
        dz = radius * np.exp(1j * th)
        z = lambda0 + dz
        d = boundary_defect(model, z)
        if d <= 1e-6:
            raise NumericalFailure(f"contour node {z:.6g} is (numerically) in the spectrum", node=z, defect=d)
        try:
            R = _generator_resolvent(A, z)
        except np.linalg.LinAlgError as exc:
            raise NumericalFailure(f"singular resolvent at contour node {z:.6g}", node=z) from exc
        P += dz * R / nodes
        AP += z * dz * R / nodes
    Pm = OperatorMatrix(P, g, g)
    sv = singular_value_profile(Pm)
    rank = int(np.count_nonzero(sv > 0.5))
    idem = OperatorMatrix(P @ P - P, g, g).norm()
    if rank == 0:
        return EigenRecord(lambda0, boundary_defect(model, lambda0), 0, 0.0, complex("nan"), idem, Pm, None)
    lam_h = np.trace(AP) / rank
    Dm = OperatorMatrix(AP - lam_h * P, g, g)
    return EigenRecord(lambda0, boundary_defect(model, lambda0), rank, Dm.norm(), complex(lam_h), idem, Pm, Dm)


@dataclass(frozen=True)
class ExpansionResult:
    t_values: np.ndarray
    residuals: np.ndarray
    fitted_rate: float
    beta: float
    nu: float
    passed: bool
    inconclusive: bool = False


def asymptotic_expansion(model: Model, phi0, eigen: Sequence[EigenRecord], t_values, nu: float,
                         scheme: str = "upwind", with_collision: bool = True) -> ExpansionResult:
    """Residual of the finite spectral expansion of ``V(t) phi0``.

    ``r(t) = || V(t) phi0 - sum_j exp(lam_j t) exp(D_j t) P_j phi0 ||``.  The
    fitted exponential rate (slope of ``log r`` against t) is compared with
    ``beta = (nu + min Re lam_j) / 2``; ``nu`` bounds the real parts of the
    spectrum not covered by ``eigen``.
    """
    t_values = np.asarray(t_values, dtype=float)
    if np.any(np.diff(t_values) <= 0):
        raise ValueError("t_values must be increasing")
    A = generator(model, with_collision and not model.B.is_zero, scheme)
    phi0 = np.asarray(phi0, dtype=complex)
    w = model.weights
    res = []
    for t in t_values:
        v = expm_multiply(t * A, phi0.real) + 1j * expm_multiply(t * A, phi0.imag)
        for rec in eigen:
            if rec.projection_rank == 0:
                continue
            Pphi = rec.projection.entries @ phi0
            term = Pphi.copy()
            if rec.nilpotent is not None and rec.nilpotent_norm > 0:
                Dk = Pphi
                fact = 1.0
                for k in range(1, rec.projection_rank):
                    Dk = rec.nilpotent.entries @ Dk
                    fact *= k
                    term = term + (t ** k / fact) * Dk
            v = v - np.exp(rec.lam_h * t) * term
        res.append(float(np.sqrt(np.sum(w * np.abs(v) ** 2))))
    res = np.array(res)
    active = [r for r in eigen if r.projection_rank > 0]
    if not active:
        floor = np.maximum(res, 1e-300)
        rate = float(np.polyfit(t_values, np.log(floor), 1)[0])
        return ExpansionResult(t_values, res, rate, float("nan"), nu, rate < 0, inconclusive=not rate < 0)
    lam_min = min(r.lam_h.real for r in active)
    beta = 0.5 * (nu + lam_min)
    rate = float(np.polyfit(t_values, np.log(np.maximum(res, 1e-300)), 1)[0])
    return ExpansionResult(t_values, res, rate, beta, nu, rate <= beta)


@dataclass(frozen=True)
class SpectrumLevel:
    n: int
    eig_U: np.ndarray
    eig_V: np.ndarray
    outliers_U: int
    outliers_V: int
    r_ess_U: float
    r_ess_V: float
    growth_bound: float
    sv_U: np.ndarray | None = None
    sv_V: np.ndarray | None = None
    sv_R1: np.ndarray | None = None


@dataclass(frozen=True)
class SpectrumReport:
    t: float
    threshold: float
    levels: tuple
    outlier_count_stable: bool
    relative_gap: float
    inconclusive: bool
    eigenvalues: tuple = ()
    region: tuple = ()

    @property
    def essential_radius_U(self) -> float:
        return self.levels[-1].r_ess_U

    @property
    def essential_radius_V(self) -> float:
        return self.levels[-1].r_ess_V

    @property
    def growth_bound(self) -> float:
        return self.levels[-1].growth_bound


def _proxy(eigs: np.ndarray, threshold: float):
    mods = np.sort(np.abs(eigs))[::-1]
    k = int(np.count_nonzero(mods > threshold))
    r = float(mods[k]) if k < mods.size else 0.0
    return k, r


def stability_report(model_factory: Callable[[int], Model], t: float, refinements: Sequence[int],
                     delta: float = 0.1, scheme: str = "upwind", profiles: bool = False,
                     executor=None) -> SpectrumReport:
    """Compare the spectra of ``U(t)`` and ``V(t)`` across grid refinements.

    Eigenvalues of modulus above ``exp((-sigma + delta) t)`` are counted as
    the isolated outliers; the essential-radius proxy of each propagator is
    the largest modulus at or below that threshold.  The report flags whether
    the outlier count of ``V(t)`` agrees on the two finest levels and gives
    the relative gap between the two proxies on the finest level.  Levels
    are independent and run through ``executor.map`` when one is given.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    if len(refinements) < 2:
        raise ValueError("at least two refinement levels are needed")
    def level(n):
        m = model_factory(int(n))
        threshold = float(np.exp((-m.sigma_lower + delta) * t))
        U = streaming_propagator(m, t, scheme).matrix
        eU = np.linalg.eigvals(U.entries)
        if m.B.is_zero:
            V, eV = U, eU
        else:
            V = full_propagator(m, t, scheme).matrix
            eV = np.linalg.eigvals(V.entries)
        kU, rU = _proxy(eU, threshold)
        kV, rV = _proxy(eV, threshold)
        growth = float(np.log(max(np.max(np.abs(eU)), 1e-300)) / t)
        svs = (None, None, None)
        if profiles:
            svs = (singular_value_profile(U), singular_value_profile(V), first_remainder(m, t, scheme).singular_values)
        return threshold, SpectrumLevel(int(n), eU, eV, kU, kV, rU, rV, growth, *svs)

    runner = executor.map if executor is not None else map
    out = list(runner(level, list(refinements)))
    threshold = out[-1][0]
    levels = [lv for _, lv in out]
    stable = levels[-1].outliers_V == levels[-2].outliers_V
    fin = levels[-1]
    gap = abs(fin.r_ess_U - fin.r_ess_V) / fin.r_ess_U if fin.r_ess_U > 0 else float("inf")
    return SpectrumReport(float(t), threshold, tuple(levels), stable, gap, not stable)


def resolvent_difference_profile(model: Model, lam, scheme: str = "upwind") -> np.ndarray:
    """Weighted singular values of ``(lam - A_h - B)^-1 - (lam - A_h)^-1``."""
    A = generator(model, False, scheme)
    AB = generator(model, True, scheme)
    g = model.interior_grid
    D = _generator_resolvent(AB, complex(lam)) - _generator_resolvent(A, complex(lam))
    return singular_value_profile(OperatorMatrix(D, g, g))
