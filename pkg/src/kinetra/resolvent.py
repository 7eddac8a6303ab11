"""Elementary operators, the resolvent factorization and an independent oracle.

For ``Re(lambda) > -sigma`` the streaming resolvent factors as::

    (lambda - A_H)^-1 = Xi H (I - M H)^-1 G + C

with, along each characteristic of speed c and length L and ``kappa = lambda + sigma``,

* ``M u = u exp(-kappa L / c)``              (full transit)
* ``Xi u (s) = u exp(-kappa s / c)``         (lift of an inflow value)
* ``G f = (1/c) int_0^L f(s') exp(-kappa (L - s') / c) ds'``
* ``C f (s) = (1/c) int_0^s f(s') exp(-kappa (s - s') / c) ds'``.

The integrals in ``G`` and ``C`` use exponential product quadrature: the
polynomial interpolant of ``f`` on the line nodes is integrated exactly against
the exponential, so the rules remain accurate for large ``|Im lambda|``.
"""

from __future__ import annotations

import numbers
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.sparse.linalg import LinearOperator, svds

from .errors import NumericalFailure, OutsideHalfPlane
from .models import Model
from .numerics import (
    OperatorMatrix,
    exp_product_weights,
    lagrange_matrix,
)

__all__ = [
    "LambdaPoint",
    "ElementaryOperators",
    "elementary_operators",
    "boundary_inverse",
    "resolve",
    "resolvent_matrix",
    "resolve_adjoint",
    "resolvent_norm",
    "resolve_oracle",
    "oracle_defect",
    "apply_generator",
    "collocation_rule",
    "line_scheme",
    "generator_matrix",
    "SCHEMES",
]


@dataclass(frozen=True)
class LambdaPoint:
    value: complex
    margin: float

    @classmethod
    def at(cls, model: Model, lam) -> "LambdaPoint":
        if isinstance(lam, LambdaPoint):
            return lam
        lam = complex(lam)
        return cls(lam, lam.real + model.sigma_lower)


def _require_formula_path(model: Model, lam: LambdaPoint):
    if not lam.margin > 0:
        raise OutsideHalfPlane(
            f"Re(lambda) + sigma = {lam.margin:g} <= 0: outside the half-plane where the factorization holds")
    if not model.constant_sigma:
        raise OutsideHalfPlane("the resolvent formula is implemented for constant collision frequency only")
    if model.H.norm() >= 1.0:
        raise OutsideHalfPlane("assembled boundary operator has norm >= 1; the formula path is refused")


@lru_cache(maxsize=16)
def _subnode_interpolation(n: int) -> np.ndarray:
    """E[k, q, m] = ell_m(-1 + (1 + t_k)(1 + t_q)/2) for the Gauss rule of size n."""
    t, _ = np.polynomial.legendre.leggauss(n)
    pts = -1.0 + 0.5 * (1.0 + t[:, None]) * (1.0 + t[None, :])
    E = lagrange_matrix(t, pts.ravel()).reshape(n, n, n)
    E.setflags(write=False)
    return E


@dataclass(frozen=True, eq=False)
class ElementaryOperators:
    """The four elementary operators at one spectral parameter, stored line-wise.

    ``m`` has shape (n_lines,), ``xi`` and ``g`` shape (n_lines, n_s) and
    ``c`` shape (n_lines, n_s, n_s).  Full matrices are formed on demand.
    """

    model: Model
    lam: LambdaPoint
    m: np.ndarray
    xi: np.ndarray
    g: np.ndarray
    c: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    def _mat(self, key, builder):
        if key not in self._cache:
            self._cache[key] = builder()
        return self._cache[key]

    @property
    def M(self) -> OperatorMatrix:
        bg = self.model.boundary_grid
        return self._mat("M", lambda: OperatorMatrix(np.diag(self.m), bg, bg))

    @property
    def Xi(self) -> OperatorMatrix:
        mdl = self.model

        def build():
            X = np.zeros((mdl.size, mdl.n_lines), dtype=complex)
            j = np.repeat(np.arange(mdl.n_lines), mdl.n_s)
            X[np.arange(mdl.size), j] = self.xi.ravel()
            return OperatorMatrix(X, mdl.interior_grid, mdl.boundary_grid)

        return self._mat("Xi", build)

    @property
    def G(self) -> OperatorMatrix:
        mdl = self.model

        def build():
            Gm = np.zeros((mdl.n_lines, mdl.size), dtype=complex)
            j = np.repeat(np.arange(mdl.n_lines), mdl.n_s)
            Gm[j, np.arange(mdl.size)] = self.g.ravel()
            return OperatorMatrix(Gm, mdl.boundary_grid, mdl.interior_grid)

        return self._mat("G", build)

    @property
    def C(self) -> OperatorMatrix:
        mdl = self.model

        def build():
            Cm = np.zeros((mdl.n_lines, mdl.n_s, mdl.n_lines, mdl.n_s), dtype=complex)
            j = np.arange(mdl.n_lines)
            Cm[j, :, j, :] = self.c
            return OperatorMatrix(Cm.reshape(mdl.size, mdl.size), mdl.interior_grid, mdl.interior_grid)

        return self._mat("C", build)

    # line-wise actions ------------------------------------------------------

    def apply_G(self, f) -> np.ndarray:
        F = self.model.line_values(f)
        return np.einsum("jk,jk...->j...", self.g, F)

    def apply_C(self, f) -> np.ndarray:
        F = self.model.line_values(f)
        out = np.einsum("jkm,jm...->jk...", self.c, F)
        return out.reshape((self.model.size,) + out.shape[2:])

    def apply_Xi(self, u) -> np.ndarray:
        u = np.asarray(u)
        out = self.xi.reshape(self.xi.shape + (1,) * (u.ndim - 1)) * u[:, None, ...]
        return out.reshape((self.model.size,) + u.shape[1:])


SCHEMES = ("product", "spectral", "upwind")


@lru_cache(maxsize=32)
def line_scheme(n: int, scheme: str):
    """Per-line discrete transport ``d/dt`` on the reference interval [-1, 1].

    Returns ``(D, d_in, e_in, e_int)`` such that the derivative at the
    unknowns is ``D @ phi + d_in * u_in`` and the outflow value is
    ``e_in * u_in + e_int @ phi``.  ``spectral`` is collocation on
    {-1} u Gauss nodes; ``upwind`` is first-order finite volumes on cells of
    width equal to the Gauss weights.
    """
    if scheme == "spectral":
        return collocation_rule(n)
    if scheme == "upwind":
        _, w = np.polynomial.legendre.leggauss(n)
        D = np.diag(1.0 / w) - np.diag(1.0 / w[1:], -1)
        d_in = np.zeros(n)
        d_in[0] = -1.0 / w[0]
        e_int = np.zeros(n)
        e_int[-1] = 1.0
        return D, d_in, 0.0, e_int
    raise ValueError(f"unknown line scheme '{scheme}' (expected one of {SCHEMES})")


def elementary_operators(model: Model, lam, scheme: str = "product") -> ElementaryOperators:
    """Assemble M, Xi, G, C for the model at ``lam``.

    ``scheme="product"`` integrates the exact exponential solution along each
    line against the polynomial interpolant of the data (accurate uniformly in
    ``Im lambda``).  ``spectral`` and ``upwind`` give the operators of the
    corresponding semi-discrete generator, so that the factorization equals
    ``(lambda - A_h)^-1`` for the matrix ``A_h = generator_matrix(model, scheme)``.
    """
    lam = LambdaPoint.at(model, lam)
    _require_formula_path(model, lam)
    kappa = lam.value + model.sigma_lower
    c, L = model.speed, model.length
    s = model.s_nodes
    n = model.n_s
    if scheme == "product":
        m = np.exp(-kappa * L / c)
        xi = np.exp(-kappa * s / c[:, None])
        zL = kappa * L / (2.0 * c)
        g = (L / (2.0 * c))[:, None] * exp_product_weights(n, zL)
        zk = kappa * s / (2.0 * c[:, None])
        W = exp_product_weights(n, zk)  # (n_lines, n_s, n_q)
        E = _subnode_interpolation(n)  # (n_s, n_q, n)
        cm = np.einsum("jkq,kqm->jkm", W, E) * (s / (2.0 * c[:, None]))[:, :, None]
        return ElementaryOperators(model, lam, m, xi, g, cm)
    D, d_in, e_in, e_int = line_scheme(n, scheme)
    scale = 2.0 * c / L
    K = kappa * np.eye(n)[None, :, :] + scale[:, None, None] * D[None, :, :]
    cm = np.linalg.inv(K)
    xi = -np.einsum("jkm,m->jk", cm, d_in) * scale[:, None]
    m = e_in + xi @ e_int
    g = np.einsum("m,jmk->jk", e_int, cm)
    return ElementaryOperators(model, lam, m, xi, g, cm)


def generator_matrix(model: Model, scheme: str = "upwind") -> np.ndarray:
    """Dense real matrix of the semi-discrete generator with boundary unknowns eliminated.

    The inflow value of every line is ``(I - e_in H)^-1 H`` applied to the
    interior part of the outflow values.
    """
    if scheme == "product":
        raise ValueError("the product rule has no generator matrix; use 'spectral' or 'upwind'")
    n, nl = model.n_s, model.n_lines
    D, d_in, e_in, e_int = line_scheme(n, scheme)
    scale = 2.0 * model.speed / model.length
    A = np.zeros((nl, n, nl, n))
    j = np.arange(nl)
    A[j, :, j, :] = -scale[:, None, None] * D[None, :, :]
    Hm = model.H.entries
    if np.any(Hm):
        Tin = Hm if e_in == 0.0 else np.linalg.solve(np.eye(nl) - e_in * Hm, Hm)
        A += (-(scale[:, None] * d_in[None, :])[:, :, None, None]
              * Tin[:, None, :, None] * e_int[None, None, None, :])
    A = A.reshape(model.size, model.size)
    A[np.diag_indices_from(A)] -= model.sigma_values()
    return A


def boundary_inverse(M, H, mode: str = "direct", tol: float = 1e-14, max_terms: int = 100000) -> OperatorMatrix:
    """``(I - M H)^-1`` on the trace space, by Neumann series or a dense solve.

    ``M`` is an OperatorMatrix (or ElementaryOperators); ``H`` an
    OperatorMatrix or BoundaryOperator.
    """
    if isinstance(M, ElementaryOperators):
        M = M.M
    Hm = H.matrix if hasattr(H, "kernel_matrix") else H
    if not M.col_grid.compatible(Hm.row_grid):
        raise ValueError("grid mismatch between M and H")
    grid = M.row_grid
    MH = M.entries @ Hm.entries
    n = MH.shape[0]
    eye = np.eye(n)
    if mode == "direct":
        X = np.linalg.solve(eye - MH, eye.astype(MH.dtype))
    elif mode == "neumann":
        sw = np.sqrt(grid.weights)
        X = eye.astype(MH.dtype)
        term = eye.astype(MH.dtype)
        prev = np.inf
        increases = 0
        for _ in range(max_terms):
            term = MH @ term
            tn = np.linalg.norm(sw[:, None] * term / sw[None, :], 2)
            X = X + term
            if tn < tol:
                break
            increases = increases + 1 if tn >= prev else 0
            if increases >= 10:
                rho = float(np.max(np.abs(np.linalg.eigvals(MH))))
                raise NumericalFailure(
                    f"Neumann series diverges (spectral radius of M H ~ {rho:.6g})", spectral_radius=rho)
            prev = tn
        else:
            rho = float(np.max(np.abs(np.linalg.eigvals(MH))))
            raise NumericalFailure(
                f"Neumann series did not converge in {max_terms} terms (spectral radius ~ {rho:.6g})",
                spectral_radius=rho)
    else:
        raise ValueError(f"unknown mode '{mode}'")
    return OperatorMatrix(X, grid, grid)


def resolve(model: Model, lam, rhs, ops: ElementaryOperators | None = None, mode: str = "direct",
            scheme: str = "product") -> np.ndarray:
    """``(lambda - A_H)^-1 rhs`` through the factorization.

    ``rhs`` may be a vector of length ``model.size`` or a block of columns.
    """
    lam = LambdaPoint.at(model, lam)
    ops = ops if ops is not None else elementary_operators(model, lam, scheme)
    f = np.asarray(rhs)
    if f.shape[0] != model.size:
        raise ValueError(f"rhs has {f.shape[0]} rows, model has {model.size} unknowns")
    out = ops.apply_C(f)
    if not model.H.is_zero:
        X = boundary_inverse(ops.M, model.H, mode)
        u = model.H.entries @ (X.entries @ ops.apply_G(f))
        out = out + ops.apply_Xi(u)
    return out


def resolvent_matrix(model: Model, lam, ops: ElementaryOperators | None = None,
                     mode: str = "direct", scheme: str = "product") -> OperatorMatrix:
    """Dense matrix of the discrete resolvent (interior to interior)."""
    lam = LambdaPoint.at(model, lam)
    ops = ops if ops is not None else elementary_operators(model, lam, scheme)
    R = ops.C.entries.copy()
    if not model.H.is_zero:
        X = boundary_inverse(ops.M, model.H, mode)
        HX = model.H.entries @ X.entries
        R += ops.Xi.entries @ (HX @ ops.G.entries)
    return OperatorMatrix(R, model.interior_grid, model.interior_grid)


def resolve_adjoint(model: Model, lam, y, ops: ElementaryOperators | None = None,
                    mode: str = "direct", scheme: str = "product") -> np.ndarray:
    """Euclidean conjugate transpose of the discrete resolvent applied to ``y``."""
    lam = LambdaPoint.at(model, lam)
    ops = ops if ops is not None else elementary_operators(model, lam, scheme)
    Y = model.line_values(np.asarray(y))
    out = np.einsum("jmk,jm...->jk...", np.conj(ops.c), Y)
    if not model.H.is_zero:
        X = boundary_inverse(ops.M, model.H, mode)
        HX = model.H.entries @ X.entries
        u = np.einsum("jk,jk...->j...", np.conj(ops.xi), Y)
        w = np.conj(HX).T @ u
        out = out + np.conj(ops.g).reshape(ops.g.shape + (1,) * (w.ndim - 1)) * w[:, None, ...]
    return out.reshape((model.size,) + out.shape[2:])


def resolvent_norm(model: Model, lam, ops: ElementaryOperators | None = None, mode: str = "direct",
                   scheme: str = "product", dense_limit: int = 256) -> float:
    """Weighted operator norm of the discrete resolvent.

    Small problems use a dense SVD; larger ones the largest singular value
    from ARPACK on the factorized action, started from a fixed vector so
    the result is reproducible.
    """
    lam = LambdaPoint.at(model, lam)
    ops = ops if ops is not None else elementary_operators(model, lam, scheme)
    if model.size <= dense_limit:
        return resolvent_matrix(model, lam, ops, mode).norm()
    sw = np.sqrt(model.weights)

    def mv(x):
        x = np.asarray(x).reshape(model.size, -1)
        return sw[:, None] * resolve(model, lam, x / sw[:, None], ops=ops, mode=mode)

    def rmv(y):
        y = np.asarray(y).reshape(model.size, -1)
        return resolve_adjoint(model, lam, sw[:, None] * y, ops=ops, mode=mode) / sw[:, None]

    op = LinearOperator((model.size, model.size), matvec=mv, rmatvec=rmv, matmat=mv, rmatmat=rmv,
                        dtype=complex)
    v0 = np.full(model.size, 1.0 / np.sqrt(model.size), dtype=complex)
    s = svds(op, k=1, v0=v0, tol=1e-12, return_singular_vectors=False, solver="arpack")
    return float(s[0])


# --------------------------------------------------------------------------
# spectral collocation generator


@lru_cache(maxsize=16)
def collocation_rule(n: int):
    """Differentiation on the nodes {-1} u {Gauss nodes}.

    Returns ``(D_int, d_in, e_in, e_int)``: the derivative at the Gauss nodes
    is ``D_int @ phi + d_in * u_in``, and the value at ``+1`` of the
    interpolant is ``e_in * u_in + e_int @ phi``.
    """
    t, _ = np.polynomial.legendre.leggauss(n)
    x = np.concatenate([[-1.0], t])
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    bw = 1.0 / np.prod(diff, axis=1)
    D = (bw[None, :] / bw[:, None]) / diff
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    ext = lagrange_matrix(x, np.array([1.0]))[0]
    return D[1:, 1:].copy(), D[1:, 0].copy(), float(ext[0]), ext[1:].copy()


def apply_generator(model: Model, phi, inflow=None) -> np.ndarray:
    """Samples of ``A_H phi = -c d(phi)/ds - sigma phi`` along every characteristic.

    The inflow value of each line is ``H`` applied to the outflow value of
    the interpolant (solved implicitly), unless ``inflow`` gives the inflow
    trace explicitly.
    """
    phi = np.asarray(phi)
    if phi.shape[0] != model.size:
        raise ValueError(f"vector has {phi.shape[0]} entries, model has {model.size} unknowns")
    D, d_in, e_in, e_int = collocation_rule(model.n_s)
    P = model.line_values(phi)
    if inflow is None:
        out_int = np.einsum("k,jk...->j...", e_int, P)
        Hm = model.H.entries
        inflow = np.linalg.solve(np.eye(model.n_lines) - e_in * Hm, Hm @ out_int)
    inflow = np.asarray(inflow)
    dP = np.einsum("km,jm...->jk...", D, P) + d_in[None, :].reshape((1, -1) + (1,) * (P.ndim - 2)) \
        * inflow[:, None, ...]
    scale = (2.0 * model.speed / model.length).reshape((-1, 1) + (1,) * (P.ndim - 2))
    out = -scale * dP
    sig = model.sigma_values().reshape((model.size,) + (1,) * (phi.ndim - 1))
    return out.reshape(phi.shape) - sig * phi


# --------------------------------------------------------------------------
# semi-analytic oracle


def _cquad(fun, a, b, points=None, epsabs=1e-13, epsrel=1e-12, limit=400):
    val, _ = integrate.quad(fun, a, b, complex_func=True, epsabs=epsabs, epsrel=epsrel,
                            limit=limit, points=points)
    return val


class _LineSolver:
    """Exact characteristic solution along one line for the oracle."""

    def __init__(self, model, lam, speed, length, pos, rhs_kind, rhs, sig_fun):
        self.lam = lam
        self.c = float(speed)
        self.L = float(length)
        self.pos = pos
        self.kind = rhs_kind
        self.rhs = rhs
        self.sig_fun = sig_fun  # None for constant sigma
        self.sigma = model.sigma_lower

    def _phase(self, s):
        """Accumulated optical depth ``int_0^s (lambda + sigma) / c``."""
        if self.sig_fun is None:
            return (self.lam + self.sigma) * s / self.c
        extra = integrate.quad(lambda r: self.sig_fun(r), 0.0, s, epsabs=1e-14, epsrel=1e-13, limit=200)[0] if s > 0 else 0.0
        return (self.lam * s + self.sigma * s + extra) / self.c

    def transmission(self, s=None):
        s = self.L if s is None else s
        return np.exp(-self._phase(s))

    def particular(self, s=None):
        """``(1/c) int_0^s f(s') exp(-(phase(s) - phase(s'))) ds'``."""
        s = self.L if s is None else s
        if self.kind == "zero" or s <= 0:
            return 0j
        if self.kind == "const" and self.sig_fun is None:
            kappa = self.lam + self.sigma
            if kappa == 0:
                return self.rhs * s / self.c
            return self.rhs * (-np.expm1(-kappa * s / self.c)) / kappa
        ps = self._phase(s)
        if self.kind == "const":
            f = lambda r: self.rhs
        else:
            f = self.rhs
        return _cquad(lambda r: f(r) * np.exp(self._phase(r) - ps), 0.0, s) / self.c


def _rhs_kind(rhs):
    if rhs is None:
        return "zero", 0.0
    if isinstance(rhs, numbers.Number):
        return ("zero", 0.0) if rhs == 0 else ("const", complex(rhs))
    if callable(rhs):
        return "callable", rhs
    return "grid", np.asarray(rhs)


def _family_pos(model: Model, fam_index: int) -> Callable:
    """Continuous position map ``(p, s) -> (first, second)`` for a line family."""
    kind = model.kind
    if kind == "rotenberg":
        return lambda p, s: (s, p)
    if kind == "sphere":
        R = model.geometry["R"]
        return lambda p, s: (s - R * np.cos(p), R * np.sin(p))
    a = model.geometry["a"]
    if fam_index == 0:
        return lambda p, s: (s - a, p)
    return lambda p, s: (a - s, -p)


class _Oracle:
    """Boundary-coupled characteristic solver with adaptive velocity integrals."""

    def __init__(self, model: Model, lam: complex, rhs, discrete: bool):
        self.model = model
        self.lam = lam
        self.kind, self.rhs = _rhs_kind(rhs)
        self.discrete = discrete or self.kind == "grid" or not model.constant_sigma
        self.fams = model.families
        self.blocks = [b for b in model.H.compact_part if not b.kernel.is_zero]
        self.n_mom = sum(len(b.row_factors) for b in self.blocks)
        if self.kind == "grid":
            self._t = model.t
            self._F = model.line_values(self.rhs)

    # line-level quantities -------------------------------------------------

    def _line(self, fam_index, p, line_index=None):
        m = self.model
        fam = self.fams[fam_index]
        c = float(fam.speed(np.array(p)))
        L = float(fam.length(np.array(p)))
        pos = _family_pos(m, fam_index)
        sig_fun = None
        if not m.constant_sigma:
            sig_fun = lambda s: float(m.sigma_extra(np.array(pos(p, s)[0])))
        if self.kind == "callable":
            rhs = lambda s: self.rhs(*pos(p, s))
        elif self.kind == "grid":
            vals = self._F[line_index]
            t = self._t
            rhs = lambda s: complex(lagrange_matrix(t, np.array([2.0 * s / L - 1.0]))[0] @ vals)
        else:
            rhs = self.rhs
        return _LineSolver(m, self.lam, c, L, pos, self.kind, rhs, sig_fun)

    def _line_data(self, fam_index, p, line_index=None):
        """(transmission M, particular outflow G f) on one line."""
        ls = self._line(fam_index, p, line_index)
        return ls.transmission(), ls.particular()

    def _coef(self, fam_index, p):
        return float(np.asarray(self.fams[fam_index].coefficient(np.array(p))))

    def _row_factors(self, fam_index, p):
        """Vector r with r[i] = row factor of moment i at inflow family/param (zero elsewhere)."""
        r = np.zeros(self.n_mom)
        i = 0
        for b in self.blocks:
            for rf in b.row_factors:
                if b.row_family == fam_index:
                    r[i] = float(rf(np.array(p)))
                i += 1
        return r

    def _outflow(self, fam_index, p, line_index=None, partner_line=None):
        """Outflow of a family at parameter p as ``b0 + b @ moments``."""
        F = fam_index
        Fp = self.fams[F].partner
        MF, GF = self._line_data(F, p, line_index)
        cF = self._coef(F, p)
        rF = self._row_factors(F, p)
        if Fp == F:
            den = 1.0 - cF * MF
            a0 = cF * GF / den
            a = rF / den
        else:
            MFp, GFp = self._line_data(Fp, p, partner_line)
            cFp = self._coef(Fp, p)
            rFp = self._row_factors(Fp, p)
            den = 1.0 - cF * cFp * MFp * MF
            a0 = (cF * (MFp * cFp * GF + GFp)) / den
            a = (cF * MFp * rFp + rF) / den
        if abs(den) < 1e-13:
            raise NumericalFailure("boundary transmission is singular: lambda is numerically an eigenvalue",
                                   defect=abs(den))
        return MF * a0 + GF, MF * a, a0, a

    def _moment_system(self):
        n = self.n_mom
        q0 = np.zeros(n, dtype=complex)
        Q = np.zeros((n, n), dtype=complex)
        i = 0
        for b in self.blocks:
            fam = self.fams[b.col_family]
            for cf in b.col_factors:
                if self.discrete:
                    lines = fam.lines
                    p_all = self.model.line_param if self.model.kind != "slab" else np.abs(self.model.line_param)
                    for jj, line in enumerate(lines):
                        p = p_all[line]
                        wgt = float(cf(np.array(p))) * self.model.trace_weights[line]
                        if wgt == 0.0:
                            continue
                        partner_line = self.fams[fam.partner].lines[jj]
                        b0, bv, _, _ = self._outflow(b.col_family, p, line, partner_line)
                        q0[i] += wgt * b0
                        Q[i] += wgt * bv
                else:
                    def integrand(p, cf=cf, F=b.col_family):
                        p = float(p)
                        w = float(cf(np.array(p)))
                        if w == 0.0:
                            return np.zeros(n + 1, dtype=complex)
                        w *= float(fam.speed(np.array(p)) * fam.density(np.array(p)))
                        b0, bv, _, _ = self._outflow(F, p)
                        return w * np.concatenate([[b0], bv])

                    val, _ = integrate.quad_vec(integrand, fam.lo, fam.hi, epsabs=1e-14, epsrel=1e-12,
                                                limit=2000, norm="max")
                    q0[i] = val[0]
                    Q[i] = val[1:]
                i += 1
        return q0, Q

    def moments(self):
        if self.n_mom == 0:
            return np.zeros(0, dtype=complex)
        q0, Q = self._moment_system()
        A = np.eye(self.n_mom) - Q
        smin = np.linalg.svd(A, compute_uv=False)[-1]
        if smin < 1e-12:
            raise NumericalFailure("boundary coupling system is singular: lambda is numerically an eigenvalue",
                                   defect=float(smin))
        return np.linalg.solve(A, q0)

    def defect(self):
        if self.n_mom == 0:
            return 1.0
        _, Q = self._moment_system()
        return float(np.linalg.svd(np.eye(self.n_mom) - Q, compute_uv=False)[-1])

    def field(self):
        m = self.model
        mom = self.moments()
        out = np.empty((m.n_lines, m.n_s), dtype=complex)
        s_nodes = m.s_nodes
        for F, fam in enumerate(self.fams):
            Fp = fam.partner
            for jj, line in enumerate(fam.lines):
                p = abs(m.line_param[line]) if m.kind == "slab" else m.line_param[line]
                partner_line = self.fams[Fp].lines[jj]
                _, _, a0, a = self._outflow(F, p, line, partner_line)
                u_in = a0 + a @ mom
                ls = self._line(F, p, line)
                for k, s in enumerate(s_nodes[line]):
                    out[line, k] = u_in * ls.transmission(s) + ls.particular(s)
        return out.ravel()


def resolve_oracle(model: Model, lam, rhs, discrete_velocity: bool = False) -> np.ndarray:
    """Independent solution of ``(lambda - A_H) phi = rhs`` at the interior nodes.

    Along each characteristic the exact exponential solution is integrated
    with adaptive quadrature; the boundary relation reduces to a small dense
    system for the kernel moments.  Velocity integrals of those moments use
    adaptive quadrature over the continuous line parameter when ``rhs`` is a
    scalar or a callable ``rhs(first, second)``; for a grid vector (or a
    variable collision frequency) they use the model's velocity nodes.
    """
    lam = LambdaPoint.at(model, lam)
    return _Oracle(model, lam.value, rhs, discrete_velocity).field()


def oracle_defect(model: Model, lam, discrete_velocity: bool = False) -> float:
    """Smallest singular value of the oracle's boundary coupling system at ``lam``."""
    lam = LambdaPoint.at(model, lam)
    return _Oracle(model, lam.value, None, discrete_velocity).defect()
