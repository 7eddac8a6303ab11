"""Discretized transport models: Rotenberg cell population, sphere and slab.

Every model is organised along its characteristic lines.  Line ``j`` has a
speed ``c_j``, a length ``L_j`` and a line weight (the velocity part of the
measure).  The interior unknowns sit at the Gauss-Legendre nodes
``s_jk = L_j (1 + t_k) / 2`` of arclength along each line and are flattened as
``j * n_s + k``.  Boundary (trace) vectors have one entry per line: the value at
the inflow end for incoming traces, at the outflow end for outgoing ones.

=========  ==================  ===========  ===================  ==============
model      line parameter      speed        line weight          length
=========  ==================  ===========  ===================  ==============
rotenberg  v in ]a, b[         v            dv                   1
sphere     psi, y = R sin psi  1            y dy                 2 sqrt(R^2-y^2)
slab       xi in ]-1,0[u]0,1[  abs(xi)      dxi                  2a
=========  ==================  ===========  ===================  ==============
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ModelError
from .functions import Function, const, zero
from .numerics import (
    OperatorMatrix,
    WeightedGrid,
    gauss_legendre,
    lagrange_matrix,
)

__all__ = [
    "DegenerateKernel",
    "KernelBlock",
    "BoundaryOperator",
    "CollisionTerm",
    "CollisionOperator",
    "LineFamily",
    "Model",
    "build_rotenberg",
    "build_sphere",
    "build_slab",
    "boundary_apply",
    "collision_apply",
]


# --------------------------------------------------------------------------
# boundary operators


@dataclass(frozen=True)
class DegenerateKernel:
    """Separable kernel ``scale * sum_j g_j(u) k_j(u')``."""

    pairs: tuple
    scale: float = 1.0

    def __post_init__(self):
        if self.scale < 0 or not np.isfinite(self.scale):
            raise ModelError("kernel scale must be finite and nonnegative")
        pairs = tuple((g, k) for g, k in self.pairs)
        for g, k in pairs:
            if not (isinstance(g, Function) and isinstance(k, Function)):
                raise ModelError("kernel factors must be Function instances")
        object.__setattr__(self, "pairs", pairs)

    @property
    def is_zero(self) -> bool:
        return self.scale == 0.0 or all(g.is_zero or k.is_zero for g, k in self.pairs)


@dataclass(frozen=True, eq=False)
class KernelBlock:
    """A degenerate kernel coupling outflow lines of one family to inflow lines of another.

    ``row_factor[j]`` and ``col_factor[j]`` are callables of the line
    parameter; the block acts as
    ``(K u)(p) = sum_j row_factor[j](p) * int col_factor[j](p') u(p') dmu_trace(p')``.
    """

    kernel: DegenerateKernel
    row_family: int
    col_family: int
    row_factors: tuple
    col_factors: tuple


@dataclass(frozen=True, eq=False)
class BoundaryOperator:
    """Maxwell-type boundary operator mapping outgoing traces to incoming traces.

    ``(H u)_j = coefficient_j * u_{partner_j} + (K u)_j``.
    """

    multiplication_coefficient: np.ndarray
    partner: np.ndarray
    compact_part: tuple
    structure_tag: str
    grid: WeightedGrid
    kernel_matrix: np.ndarray
    norm_estimate: float = field(init=False)
    coefficient_sup: float = 0.0

    def __post_init__(self):
        coef = np.asarray(self.multiplication_coefficient, dtype=float)
        object.__setattr__(self, "multiplication_coefficient", coef)
        kn = OperatorMatrix(self.kernel_matrix, self.grid, self.grid).norm() if np.any(self.kernel_matrix) else 0.0
        object.__setattr__(self, "norm_estimate", float(np.max(np.abs(coef), initial=0.0) + kn))

    @property
    def size(self) -> int:
        return self.multiplication_coefficient.size

    @property
    def entries(self) -> np.ndarray:
        n = self.size
        J = np.zeros((n, n))
        J[np.arange(n), self.partner] = self.multiplication_coefficient
        return J + self.kernel_matrix

    @property
    def matrix(self) -> OperatorMatrix:
        return OperatorMatrix(self.entries, self.grid, self.grid)

    @property
    def compact_matrix(self) -> OperatorMatrix:
        return OperatorMatrix(self.kernel_matrix, self.grid, self.grid)

    def norm(self) -> float:
        return self.matrix.norm()

    @property
    def is_zero(self) -> bool:
        return not np.any(self.multiplication_coefficient) and not np.any(self.kernel_matrix)


def boundary_apply(H: BoundaryOperator, trace) -> np.ndarray:
    """Incoming trace ``H u`` for an outgoing trace ``u`` on the boundary grid."""
    u = np.asarray(trace)
    if u.shape[0] != H.size:
        raise ModelError(f"trace has {u.shape[0]} entries, boundary grid has {H.size}")
    return H.entries @ u


# --------------------------------------------------------------------------
# collision operators


@dataclass(frozen=True)
class CollisionTerm:
    """One term ``alpha(x) beta(u) int theta(u') phi(x, u') du'``."""

    alpha: Function
    beta: Function
    theta: Function


@dataclass(frozen=True, eq=False)
class CollisionOperator:
    terms: tuple
    matrix: OperatorMatrix

    @property
    def is_zero(self) -> bool:
        return len(self.terms) == 0 or not np.any(self.matrix.entries)

    def norm(self) -> float:
        return self.matrix.norm()


def collision_apply(B: CollisionOperator, phi) -> np.ndarray:
    """Apply the collision operator to an interior vector."""
    phi = np.asarray(phi)
    if phi.shape[0] != B.matrix.shape[1]:
        raise ModelError(f"vector has {phi.shape[0]} entries, interior grid has {B.matrix.shape[1]}")
    return B.matrix.entries @ phi


# --------------------------------------------------------------------------
# models


@dataclass(frozen=True, eq=False)
class LineFamily:
    """Continuous description of a family of characteristic lines.

    The resolvent oracle integrates over the line parameter ``p in ]lo, hi[``
    adaptively; the discrete model samples it at Gauss nodes.
    """

    lo: float
    hi: float
    speed: Callable
    length: Callable
    density: Callable
    lines: np.ndarray
    partner: int
    coefficient: Callable
    breakpoints: tuple = ()


@dataclass(frozen=True, eq=False)
class Model:
    """A discretized transport model (immutable once built).

    Attributes
    ----------
    kind : str
        ``rotenberg``, ``sphere`` or ``slab``.
    speed, length, line_weight, line_param : ndarray, shape (n_lines,)
    t, w : ndarray, shape (n_s,)
        Reference Gauss-Legendre rule along each line.
    interior_grid : WeightedGrid
        Nodes are the physical coordinates (first, second) of each unknown.
    boundary_grid : WeightedGrid
        Trace grid with weights ``speed * line_weight``.
    sigma_lower : float
        Constant part of the collision frequency.
    sigma_extra : Function or None
        Optional nonnegative spatial variation added to ``sigma_lower``.
    """

    kind: str
    geometry: dict
    speed: np.ndarray
    length: np.ndarray
    line_weight: np.ndarray
    line_param: np.ndarray
    t: np.ndarray
    w: np.ndarray
    interior_grid: WeightedGrid
    boundary_grid: WeightedGrid
    sigma_lower: float
    H: BoundaryOperator
    B: CollisionOperator
    families: tuple
    position: Callable
    sigma_extra: Function | None = None
    config_echo: dict = field(default_factory=dict)

    @property
    def n_lines(self) -> int:
        return self.speed.size

    @property
    def n_s(self) -> int:
        return self.t.size

    @property
    def size(self) -> int:
        return self.n_lines * self.n_s

    @property
    def s_nodes(self) -> np.ndarray:
        """Arclength of every interior node, shape (n_lines, n_s)."""
        return 0.5 * self.length[:, None] * (1.0 + self.t[None, :])

    @property
    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical coordinates of the interior nodes: (mu, v), (x, y) or (x, xi)."""
        nodes = self.interior_grid.nodes
        return nodes[:, 0], nodes[:, 1]

    @property
    def weights(self) -> np.ndarray:
        return self.interior_grid.weights

    @property
    def trace_weights(self) -> np.ndarray:
        return self.boundary_grid.weights

    @property
    def constant_sigma(self) -> bool:
        return self.sigma_extra is None or self.sigma_extra.is_zero

    def sigma_values(self) -> np.ndarray:
        """Collision frequency at every interior node."""
        sig = np.full(self.size, self.sigma_lower)
        if not self.constant_sigma:
            sig = sig + self.sigma_extra(self.coordinates[0])
        return sig

    def sigma_along(self, j: int, s) -> np.ndarray:
        """Collision frequency along line ``j`` at arclength ``s``."""
        s = np.asarray(s, dtype=float)
        if self.constant_sigma:
            return np.full_like(s, self.sigma_lower)
        x, _ = self.position(j, s)
        return self.sigma_lower + self.sigma_extra(x)

    def transit_time(self) -> np.ndarray:
        return self.length / self.speed

    def with_collision(self, terms: Sequence[CollisionTerm], n_tau: int | None = None) -> "Model":
        """Copy of the model with a different collision operator."""
        B = _assemble_collision(self, tuple(terms), n_tau)
        return _replace(self, B=B)

    def without_collision(self) -> "Model":
        return self.with_collision(())

    def with_boundary(self, H: BoundaryOperator) -> "Model":
        if H.size != self.n_lines:
            raise ModelError("boundary operator does not match the model's lines")
        return _replace(self, H=H)

    def line_values(self, vec) -> np.ndarray:
        """Reshape an interior vector to (n_lines, n_s, ...)."""
        vec = np.asarray(vec)
        return vec.reshape((self.n_lines, self.n_s) + vec.shape[1:])

    def sample(self, f: Callable) -> np.ndarray:
        """Sample ``f(first, second)`` at the interior nodes."""
        a, b = self.coordinates
        return np.asarray(f(a, b)) * np.ones(self.size)


def _replace(model: Model, **changes) -> Model:
    kw = {k: getattr(model, k) for k in model.__dataclass_fields__}
    kw.update(changes)
    return Model(**kw)


def _check_grid_sizes(n_s, n_v):
    if int(n_s) != n_s or int(n_v) != n_v or n_s < 2 or n_v < 2:
        raise ModelError("grid sizes must be integers >= 2")


def _interior_grid(model_kw, position, domain, label):
    speed, length, lw = model_kw["speed"], model_kw["length"], model_kw["line_weight"]
    t, w = model_kw["t"], model_kw["w"]
    n_lines, n_s = speed.size, t.size
    s = 0.5 * length[:, None] * (1.0 + t[None, :])
    W = (lw[:, None] * 0.5 * length[:, None] * w[None, :]).ravel()
    first = np.empty((n_lines, n_s))
    second = np.empty((n_lines, n_s))
    for j in range(n_lines):
        first[j], second[j] = position(j, s[j])
    nodes = np.column_stack([first.ravel(), second.ravel()])
    return WeightedGrid(nodes, W, domain, label)


def _kernel_matrix(blocks, families, line_param, trace_w, n_lines):
    Kmat = np.zeros((n_lines, n_lines))
    for blk in blocks:
        if blk.kernel.is_zero:
            continue
        rows = families[blk.row_family].lines
        cols = families[blk.col_family].lines
        pr, pc = line_param[rows], line_param[cols]
        for rf, cf in zip(blk.row_factors, blk.col_factors):
            Kmat[np.ix_(rows, cols)] += np.outer(rf(pr), cf(pc) * trace_w[cols])
    return Kmat


def _check_nonneg_coefficient(coef, name, bound_name):
    if np.any(coef < 0):
        raise ModelError(f"{name} must be nonnegative")
    sup = float(np.max(coef, initial=0.0))
    if sup >= 1.0:
        raise ModelError(f"{name} has sup {sup:g}; the model requires {bound_name} < 1")
    return sup


def _check_factor(f: Function, lo, hi, what):
    if not f.supported_in(lo, hi):
        raise ModelError(f"{what} = {f.text()} must have compact support inside ]{lo:g}, {hi:g}[")


def _finish(kind, geometry, kw, families, position, domain, H_parts, terms, sigma, sigma_extra, n_tau, echo,
            kernel_param=None):
    interior = _interior_grid(kw, position, domain, f"{kind}-interior")
    trace_w = kw["speed"] * kw["line_weight"]
    bgrid = WeightedGrid(kw["line_param"].copy(), trace_w, (), f"{kind}-trace")
    coef, partner, blocks, tag, coef_sup = H_parts
    kp = kw["line_param"] if kernel_param is None else kernel_param
    Kmat = _kernel_matrix(blocks, families, kp, trace_w, kw["speed"].size)
    H = BoundaryOperator(coef, partner, tuple(blocks), tag, bgrid, Kmat, coef_sup)
    if not np.isfinite(sigma) or sigma < 0:
        raise ModelError("sigma must be finite and nonnegative")
    if sigma_extra is not None and sigma_extra.inf(*_spatial_range(kind, geometry)) < 0:
        raise ModelError("sigma variation must be nonnegative")
    model = Model(
        kind=kind,
        geometry=dict(geometry),
        interior_grid=interior,
        boundary_grid=bgrid,
        sigma_lower=float(sigma),
        H=H,
        B=None,
        families=tuple(families),
        position=position,
        sigma_extra=sigma_extra,
        config_echo=dict(echo),
        **kw,
    )
    return _replace(model, B=_assemble_collision(model, tuple(terms), n_tau))


def _spatial_range(kind, geometry):
    if kind == "rotenberg":
        return (0.0, 1.0)
    if kind == "sphere":
        return (-geometry["R"], geometry["R"])
    return (-geometry["a"], geometry["a"])


def build_rotenberg(
    a: float,
    b: float,
    sigma: float,
    n_s: int,
    n_v: int,
    beta: Function | None = None,
    kernel: DegenerateKernel | None = None,
    collision: Sequence[CollisionTerm] = (),
    sigma_extra: Function | None = None,
) -> Model:
    """Rotenberg model on ]0,1[ x ]a,b[ with the mitosis boundary rule.

    The boundary operator is ``H f(v) = beta(v) f(v) + (alpha/v) int k(v,v') f(v') v' dv'``
    with ``k(v,v') = sum_j g_j(v) k_j(v')`` and ``alpha = kernel.scale``.
    """
    _check_grid_sizes(n_s, n_v)
    a, b = float(a), float(b)
    if not np.isfinite(b):
        raise ModelError("unbounded velocity range is not supported")
    if not (0.0 <= a < b):
        raise ModelError("velocity range must satisfy 0 <= a < b")
    beta = beta if beta is not None else zero()
    kernel = kernel if kernel is not None else DegenerateKernel(())
    for g, k in kernel.pairs:
        _check_factor(g, a, b, "kernel factor g")
        _check_factor(k, a, b, "kernel factor k")
    t, w = gauss_legendre(n_s)
    tv, wv = gauss_legendre(n_v)
    v = a + 0.5 * (b - a) * (1.0 + tv)
    dv = 0.5 * (b - a) * wv
    kw = dict(speed=v, length=np.ones(n_v), line_weight=dv, line_param=v, t=t, w=w)

    def position(j, s):
        s = np.asarray(s, dtype=float)
        return s, np.full_like(s, v[j])

    coef = np.asarray(beta(v), dtype=float) * np.ones(n_v)
    sup = _check_nonneg_coefficient(coef, "beta", "beta_0")
    sup = max(sup, beta.sup(a, b))
    if sup >= 1.0:
        raise ModelError(f"beta has sup {sup:g}; the model requires beta_0 < 1")
    alpha = kernel.scale
    rowf = tuple((lambda p, g=g: alpha * g(p) / p) for g, _ in kernel.pairs)
    colf = tuple(k for _, k in kernel.pairs)
    fam = LineFamily(a, b, lambda p: p, lambda p: np.ones_like(p), lambda p: np.ones_like(p),
                     np.arange(n_v), 0, beta)
    blocks = [KernelBlock(kernel, 0, 0, rowf, colf)]
    H_parts = (coef, np.arange(n_v), blocks, "rotenberg", sup)
    geometry = {"a": a, "b": b}
    echo = {"beta": beta.text(), "alpha": alpha,
            "kernel": [(g.text(), k.text()) for g, k in kernel.pairs]}
    return _finish("rotenberg", geometry, kw, [fam], position, ((0.0, 1.0), (a, b)),
                   H_parts, collision, sigma, sigma_extra, None, echo)


def build_sphere(
    R: float,
    sigma: float,
    n_s: int,
    n_v: int,
    gamma: Function | None = None,
    kernel: DegenerateKernel | None = None,
    collision: Sequence[CollisionTerm] = (),
    n_tau: int | None = None,
    sigma_extra: Function | None = None,
) -> Model:
    """Homogeneous sphere in the (x, y) variables, ``x = r mu``, ``y = r sqrt(1 - mu^2)``.

    Characteristics are the horizontal chords of the half disk
    ``{x^2 + y^2 <= R^2, y >= 0}``, parametrised by ``y = R sin(psi)``.  The
    boundary operator is ``alpha(y) u(y) + int k(y, y') u(y') y'/R dy'`` with
    ``alpha(y) = gamma(-sqrt(R^2 - y^2)/R)`` and
    ``k(y, y') = scale * sum_j g_j(-sqrt(R^2-y^2)/R) k_j(sqrt(R^2-y'^2)/R)``.
    """
    _check_grid_sizes(n_s, n_v)
    R = float(R)
    if not (np.isfinite(R) and R > 0):
        raise ModelError("sphere radius must be positive")
    gamma = gamma if gamma is not None else zero()
    kernel = kernel if kernel is not None else DegenerateKernel(())
    for g, k in kernel.pairs:
        _check_factor(g, -1.0, 0.0, "kernel factor g (incoming directions)")
        _check_factor(k, 0.0, 1.0, "kernel factor k (outgoing directions)")
    t, w = gauss_legendre(n_s)
    tp, wp = gauss_legendre(n_v)
    psi = 0.25 * np.pi * (1.0 + tp)
    dpsi = 0.25 * np.pi * wp
    y = R * np.sin(psi)
    lw = R * R * np.sin(psi) * np.cos(psi) * dpsi
    L = 2.0 * R * np.cos(psi)
    kw = dict(speed=np.ones(n_v), length=L, line_weight=lw, line_param=psi, t=t, w=w)

    def position(j, s):
        s = np.asarray(s, dtype=float)
        return s - R * np.cos(psi[j]), np.full_like(s, y[j])

    coef = np.asarray(gamma(-np.cos(psi)), dtype=float) * np.ones(n_v)
    _check_nonneg_coefficient(coef, "gamma", "gamma_0")
    sup = gamma.sup(-1.0, 0.0)
    if sup >= 1.0:
        raise ModelError(f"gamma has sup {sup:g} on incoming directions; the model requires gamma_0 < 1")
    scale = kernel.scale
    rowf = tuple((lambda p, g=g: scale * g(-np.cos(p)) / R) for g, _ in kernel.pairs)
    colf = tuple((lambda p, k=k: k(np.cos(p))) for _, k in kernel.pairs)
    fam = LineFamily(0.0, 0.5 * np.pi, lambda p: np.ones_like(p), lambda p: 2.0 * R * np.cos(p),
                     lambda p: R * R * np.sin(p) * np.cos(p), np.arange(n_v), 0,
                     lambda p: gamma(-np.cos(p)))
    blocks = [KernelBlock(kernel, 0, 0, rowf, colf)]
    H_parts = (coef, np.arange(n_v), blocks, "sphere", sup)
    geometry = {"R": R}
    echo = {"gamma": gamma.text(), "alpha": scale,
            "kernel": [(g.text(), k.text()) for g, k in kernel.pairs]}
    return _finish("sphere", geometry, kw, [fam], position, ((-R, R), (0.0, R)),
                   H_parts, collision, sigma, sigma_extra, n_tau, echo)


SLAB_CASES = {"a": "slab-diagonal", "b": "slab-offdiagonal", "c": "slab-compact"}


def build_slab(
    a: float,
    sigma: float,
    n_s: int,
    n_v: int,
    case: str,
    coefficients: tuple[float, float] = (0.0, 0.0),
    kernels: tuple[DegenerateKernel | None, DegenerateKernel | None] = (None, None),
    collision: Sequence[CollisionTerm] = (),
    sigma_extra: Function | None = None,
) -> Model:
    """Slab ``[-a, a] x [-1, 1]`` with one of the three boundary structures.

    ``n_v`` is the total number of directions (even); each half of
    ``]-1, 1[`` carries ``n_v / 2`` Gauss nodes, mirrored.  Lines
    ``0 .. m-1`` have ``xi > 0`` and run from ``x = -a`` to ``x = a``; lines
    ``m .. 2m-1`` carry ``xi = -xi_j`` and run backwards.

    Case ``a``: ``H11 = rho_1 J_1 + K_1``, ``H22 = rho_2 J_2 + K_2`` (specular
    reflection at each wall).  Case ``b``: ``H12 = beta_1 I_12 + K_1``,
    ``H21 = beta_2 I_21 + K_2`` (transmission to the opposite wall).  Case
    ``c``: compact kernels only, arranged as in case ``a``.  Kernel factors
    are functions of the signed direction: for ``K_1`` the factor ``g``
    lives on incoming directions at ``x = -a`` (``xi > 0``) and ``k`` on the
    outgoing directions feeding it.
    """
    _check_grid_sizes(n_s, n_v)
    if case not in SLAB_CASES:
        raise ModelError(f"unknown slab boundary case '{case}' (expected a, b or c)")
    if n_v % 2:
        raise ModelError("slab direction count must be even")
    a = float(a)
    if not (np.isfinite(a) and a > 0):
        raise ModelError("slab half-thickness must be positive")
    m = n_v // 2
    t, w = gauss_legendre(n_s)
    tq, wq = gauss_legendre(m)
    eta = 0.5 * (1.0 + tq)
    deta = 0.5 * wq
    xi = np.concatenate([eta, -eta])
    kw = dict(speed=np.abs(xi), length=np.full(n_v, 2.0 * a), line_weight=np.concatenate([deta, deta]),
              line_param=xi, t=t, w=w)

    def position(j, s):
        s = np.asarray(s, dtype=float)
        x = s - a if xi[j] > 0 else a - s
        return x, np.full_like(s, xi[j])

    c1, c2 = (float(c) for c in coefficients)
    if case == "c":
        c1 = c2 = 0.0
    coef = np.concatenate([np.full(m, c1), np.full(m, c2)])
    name = "rho" if case == "a" else "beta"
    _check_nonneg_coefficient(coef, f"{name}_i", f"{name}_i")
    plus, minus = np.arange(m), np.arange(m, 2 * m)
    if case == "b":
        partner = np.arange(n_v)
        # K_1 : outgoing at x=a (xi>0) -> incoming at x=-a (xi>0); K_2 mirrored
        layout = [(0, 0, (0.0, 1.0), (0.0, 1.0)), (1, 1, (-1.0, 0.0), (-1.0, 0.0))]
    else:
        partner = np.concatenate([minus, plus])
        # K_1 : outgoing at x=-a (xi<0) -> incoming at x=-a (xi>0); K_2 mirrored
        layout = [(0, 1, (0.0, 1.0), (-1.0, 0.0)), (1, 0, (-1.0, 0.0), (0.0, 1.0))]
    sign = (1.0, -1.0)
    blocks = []
    fams = []
    for f in (0, 1):
        fams.append(LineFamily(0.0, 1.0, lambda p: p, lambda p: np.full_like(p, 2.0 * a),
                               lambda p: np.ones_like(p), (plus, minus)[f],
                               f if case == "b" else 1 - f, const((c1, c2)[f])))
    for i, (kern, (rf, cf, rdom, cdom)) in enumerate(zip(kernels, layout)):
        if kern is None or kern.is_zero:
            continue
        for g, k in kern.pairs:
            _check_factor(g, *rdom, f"K_{i + 1} factor g")
            _check_factor(k, *cdom, f"K_{i + 1} factor k")
        sc = kern.scale
        # the families are parametrised by |xi|
        rowf = tuple((lambda p, g=g, s=sign[rf]: sc * g(s * p)) for g, _ in kern.pairs)
        colf = tuple((lambda p, k=k, s=sign[cf]: k(s * p)) for _, k in kern.pairs)
        blocks.append(KernelBlock(kern, rf, cf, rowf, colf))
    fam_param = np.concatenate([eta, eta])
    geometry = {"a": a, "case": case}
    echo = {"case": case, "coefficients": (c1, c2),
            "kernels": [None if k is None else (k.scale, [(g.text(), kk.text()) for g, kk in k.pairs])
                        for k in kernels]}
    return _finish("slab", geometry, kw, fams, position, ((-a, a), (-1.0, 1.0)),
                   (coef, partner, blocks, SLAB_CASES[case], max(c1, c2)),
                   collision, sigma, sigma_extra, None, echo, kernel_param=fam_param)


# --------------------------------------------------------------------------
# collision assembly


def _assemble_collision(model: Model, terms: tuple, n_tau: int | None) -> CollisionOperator:
    N = model.size
    grid = model.interior_grid
    if len(terms) == 0:
        return CollisionOperator((), OperatorMatrix(np.zeros((N, N)), grid, grid))
    if model.kind == "sphere":
        mat = _sphere_collision_matrix(model, terms, n_tau)
    else:
        mat = _line_collision_matrix(model, terms)
    return CollisionOperator(terms, OperatorMatrix(mat, grid, grid))


def _same_x_index(model: Model) -> np.ndarray:
    """idx[j, k] = node on line j sharing the spatial coordinate of node k of a forward line."""
    n_lines, n_s = model.n_lines, model.n_s
    k = np.arange(n_s)
    idx = np.tile(k, (n_lines, 1))
    if model.kind == "slab":
        idx[model.line_param < 0] = k[::-1]
    return idx


def _line_collision_matrix(model: Model, terms) -> np.ndarray:
    n_lines, n_s = model.n_lines, model.n_s
    lo, hi = (model.geometry["a"], model.geometry["b"]) if model.kind == "rotenberg" else (-1.0, 1.0)
    vel = model.line_param
    idx = _same_x_index(model)
    x_fwd = model.coordinates[0].reshape(n_lines, n_s)[0] if model.kind == "rotenberg" else \
        model.coordinates[0].reshape(n_lines, n_s)[int(np.argmax(vel > 0))]
    mat = np.zeros((n_lines, n_s, n_lines, n_s))
    for term in terms:
        _check_factor(term.beta, lo, hi, "collision factor beta")
        _check_factor(term.theta, lo, hi, "collision factor theta")
        al = term.alpha(x_fwd) * np.ones(n_s)
        be = term.beta(vel) * np.ones(n_lines)
        th = term.theta(vel) * model.line_weight
        for k in range(n_s):
            rows_j = np.arange(n_lines)
            # node (j, idx[j, k]) sits at x_fwd[k] for every j
            mat[rows_j[:, None], idx[:, k][:, None], rows_j[None, :], idx[:, k][None, :]] += (
                al[k] * np.outer(be, th))
    return mat.reshape(model.size, model.size)


def _sphere_collision_matrix(model: Model, terms, n_tau: int | None) -> np.ndarray:
    R = model.geometry["R"]
    n_lines, n_s = model.n_lines, model.n_s
    n_tau = n_tau or max(32, n_s + n_lines)
    tau, wtau = gauss_legendre(n_tau)
    x, y = model.coordinates
    r = np.hypot(x, y)
    mu = x / r
    psi_nodes = model.line_param
    # sample points (r tau, r sqrt(1 - tau^2)) mapped to (t, psi)
    ys = r[:, None] * np.sqrt(1.0 - tau[None, :] ** 2)
    xs = r[:, None] * tau[None, :]
    psi = np.arcsin(np.clip(ys / R, 0.0, 1.0))
    tt = np.clip(xs / np.maximum(R * np.cos(psi), 1e-300), -1.0, 1.0)
    Lpsi = lagrange_matrix(psi_nodes, psi.ravel()).reshape(model.size, n_tau, n_lines)
    Lt = lagrange_matrix(model.t, tt.ravel()).reshape(model.size, n_tau, n_s)
    mat = np.zeros((model.size, n_lines, n_s))
    for term in terms:
        _check_factor(term.beta, -1.0, 1.0, "collision factor beta")
        _check_factor(term.theta, -1.0, 1.0, "collision factor theta")
        wt = wtau * term.theta(tau)
        pref = term.alpha(r) * term.beta(mu)
        mat += pref[:, None, None] * np.einsum("iqa,q,iqb->iab", Lpsi, wt, Lt, optimize=True)
    return mat.reshape(model.size, model.size)
