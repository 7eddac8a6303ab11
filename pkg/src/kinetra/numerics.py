"""Weighted quadrature grids, measure-aware dense operators and oscillatory quadrature."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy import optimize
from scipy.special import ive, spherical_jn

__all__ = [
    "WeightedGrid",
    "OperatorMatrix",
    "PhaseProfile",
    "build_grid",
    "weighted_adjoint",
    "singular_value_profile",
    "decay_fit",
    "oscillatory_integral",
    "filon_integral",
    "gauss_legendre",
    "lagrange_matrix",
    "scaled_exp_moments",
    "exp_product_weights",
]

LOG_FLOOR = 1e-300


@dataclass(frozen=True, eq=False)
class WeightedGrid:
    """Quadrature nodes together with weights that already carry the measure density.

    ``nodes`` has shape ``(n,)`` for interval grids and ``(n, d)`` for product
    grids; ``domain`` holds one ``(lo, hi)`` pair per coordinate.
    """

    nodes: np.ndarray
    weights: np.ndarray
    domain: tuple
    label: str = ""

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty 1-D array")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValueError("grid weights must be finite and strictly positive")
        if len(self.nodes) != w.size:
            raise ValueError("nodes and weights differ in length")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "nodes", np.asarray(self.nodes, dtype=float))

    @property
    def size(self) -> int:
        return self.weights.size

    def integrate(self, values) -> complex | float:
        return np.dot(self.weights, values)

    def inner(self, x, y) -> complex:
        return np.sum(self.weights * x * np.conj(y))

    def norm(self, x) -> float:
        return float(np.sqrt(np.sum(self.weights * np.abs(x) ** 2)))

    def compatible(self, other: "WeightedGrid") -> bool:
        if self is other:
            return True
        return self.size == other.size and np.allclose(self.weights, other.weights, rtol=1e-14, atol=0)


def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [-1, 1]."""
    return npleg.leggauss(n)


def build_grid(domain, n: int, measure_density: Callable | None = None, label: str = "") -> WeightedGrid:
    """Gauss-Legendre grid on ``domain=(lo, hi)`` with density folded into the weights.

    >>> g = build_grid((0.0, 1.0), 8, lambda v: v)
    >>> round(float(g.weights.sum()), 12)
    0.5
    """
    if n < 2:
        raise ValueError("a grid needs at least 2 nodes")
    lo, hi = (float(domain[0]), float(domain[1]))
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
        raise ValueError(f"degenerate or inverted interval ({lo}, {hi})")
    t, w = gauss_legendre(n)
    x = lo + 0.5 * (hi - lo) * (t + 1.0)
    w = 0.5 * (hi - lo) * w
    if measure_density is not None:
        dens = np.asarray(measure_density(x), dtype=float) * np.ones_like(x)
        if np.any(dens < 0):
            raise ValueError("measure density is negative on the domain")
        w = w * dens
    return WeightedGrid(x, w, ((lo, hi),), label)


# --------------------------------------------------------------------------
# operators between weighted spaces


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """Dense matrix acting between two weighted L2 spaces.

    The weighted inner product on a grid is ``<x, y>_w = sum(w * x * conj(y))``.
    """

    entries: np.ndarray
    row_grid: WeightedGrid
    col_grid: WeightedGrid
    _sym: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        a = np.asarray(self.entries)
        if a.ndim != 2:
            raise ValueError("operator entries must be a 2-D array")
        if a.shape != (self.row_grid.size, self.col_grid.size):
            raise ValueError(
                f"matrix shape {a.shape} does not match grids "
                f"({self.row_grid.size}, {self.col_grid.size})"
            )
        object.__setattr__(self, "entries", a)

    @property
    def shape(self):
        return self.entries.shape

    def symmetrized(self) -> np.ndarray:
        """Euclidean matrix unitarily equivalent to the weighted operator."""
        if self._sym is None:
            sr = np.sqrt(self.row_grid.weights)
            sc = np.sqrt(self.col_grid.weights)
            object.__setattr__(self, "_sym", (sr[:, None] * self.entries) / sc[None, :])
        return self._sym

    def norm(self) -> float:
        """Operator norm in the weighted spaces (largest weighted singular value)."""
        s = self.symmetrized()
        if min(s.shape) == 0:
            return 0.0
        return float(np.linalg.norm(s, 2))

    def apply(self, x):
        return self.entries @ x

    def adjoint(self) -> "OperatorMatrix":
        return weighted_adjoint(self)

    def __matmul__(self, other):
        if isinstance(other, OperatorMatrix):
            if not self.col_grid.compatible(other.row_grid):
                raise ValueError("grid mismatch in operator composition")
            return OperatorMatrix(self.entries @ other.entries, self.row_grid, other.col_grid)
        return self.entries @ other

    def __add__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        if not (self.row_grid.compatible(other.row_grid) and self.col_grid.compatible(other.col_grid)):
            raise ValueError("grid mismatch in operator sum")
        return OperatorMatrix(self.entries + other.entries, self.row_grid, self.col_grid)

    def __sub__(self, other: "OperatorMatrix") -> "OperatorMatrix":
        if not (self.row_grid.compatible(other.row_grid) and self.col_grid.compatible(other.col_grid)):
            raise ValueError("grid mismatch in operator difference")
        return OperatorMatrix(self.entries - other.entries, self.row_grid, self.col_grid)

    def scaled(self, c) -> "OperatorMatrix":
        return OperatorMatrix(c * self.entries, self.row_grid, self.col_grid)


def weighted_adjoint(A: OperatorMatrix) -> OperatorMatrix:
    """Adjoint with respect to the weighted inner products of A's grids.

    Satisfies ``<A x, y>_row = <x, A* y>_col``, i.e. ``A* = W_col^-1 A^H W_row``.
    """
    if not isinstance(A, OperatorMatrix):
        raise TypeError("weighted_adjoint expects an OperatorMatrix")
    wr = A.row_grid.weights
    wc = A.col_grid.weights
    adj = (np.conj(A.entries).T * wr[None, :]) / wc[:, None]
    return OperatorMatrix(adj, A.col_grid, A.row_grid)


def singular_value_profile(A: OperatorMatrix) -> np.ndarray:
    """Weighted singular values, nonincreasing, length ``min(A.shape)``."""
    s = A.symmetrized()
    if min(s.shape) == 0:
        return np.zeros(0)
    return np.linalg.svd(s, compute_uv=False)


# --------------------------------------------------------------------------
# decay profiles


@dataclass(frozen=True)
class PhaseProfile:
    xi_values: np.ndarray
    magnitudes: np.ndarray
    fitted_slope: float = float("nan")

    def __post_init__(self):
        xi = np.asarray(self.xi_values, dtype=float)
        mag = np.asarray(self.magnitudes, dtype=float)
        if xi.shape != mag.shape:
            raise ValueError("xi_values and magnitudes differ in shape")
        if np.any(np.diff(xi) <= 0):
            raise ValueError("xi_values must be strictly increasing")
        if np.any(xi <= 0):
            raise ValueError("xi_values must be positive")
        if not np.all(np.isfinite(mag)) or np.any(mag < 0):
            raise ValueError("magnitudes must be finite and nonnegative")
        object.__setattr__(self, "xi_values", xi)
        object.__setattr__(self, "magnitudes", mag)


def decay_fit(profile: PhaseProfile) -> float:
    """Least-squares slope of log(magnitude) against log(xi)."""
    xi = np.asarray(profile.xi_values, dtype=float)
    mag = np.asarray(profile.magnitudes, dtype=float)
    if xi.size < 5:
        raise ValueError("decay_fit needs at least 5 points")
    y = np.log(np.maximum(mag, LOG_FLOOR))
    slope, _ = np.polyfit(np.log(xi), y, 1)
    return float(slope)


# --------------------------------------------------------------------------
# interpolation and exponential product quadrature


def barycentric_weights(nodes: np.ndarray) -> np.ndarray:
    x = np.asarray(nodes, dtype=float)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    # rescale to keep the products in range for large n
    c = 4.0 / (x.max() - x.min()) if x.size > 1 else 1.0
    return 1.0 / np.prod(diff * c, axis=1)


def lagrange_matrix(nodes: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Matrix L with ``L[i, m] = ell_m(x[i])`` for the Lagrange basis on ``nodes``."""
    nodes = np.asarray(nodes, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    bw = barycentric_weights(nodes)
    d = x[:, None] - nodes[None, :]
    exact = np.isclose(d, 0.0, atol=1e-15, rtol=0)
    d = np.where(exact, 1.0, d)
    t = bw[None, :] / d
    L = t / t.sum(axis=1, keepdims=True)
    rows = exact.any(axis=1)
    if rows.any():
        L[rows] = exact[rows].astype(float)
    return L


def scaled_exp_moments(n: int, z) -> np.ndarray:
    """``exp(-z) * i_p(z)`` for p = 0..n-1 (modified spherical Bessel, first kind).

    Uses exponentially scaled Bessel functions so that large Re z never
    overflows.  Returns an array of shape ``(n,) + z.shape``.
    """
    z = np.asarray(z, dtype=complex)
    p = np.arange(n).reshape((n,) + (1,) * z.ndim)
    out = np.empty((n,) + z.shape, dtype=complex)
    small = np.abs(z) < 1e-12
    zz = np.where(small, 1.0, z)
    val = np.sqrt(np.pi / (2.0 * zz)) * ive(p + 0.5, zz) * np.exp(-1j * zz.imag)
    if np.any(np.real(zz) < 0):
        # ive scales by exp(-|Re z|); restore the remaining factor
        val = val * np.exp(-2.0 * np.minimum(np.real(zz), 0.0))
    out[...] = val
    if small.any():
        lim = np.zeros((n,) + (1,) * z.ndim, dtype=complex)
        lim[0] = 1.0
        out[...] = np.where(small, lim, out)
    return out


_LEG_CACHE: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def _leg_tables(n: int):
    if n not in _LEG_CACHE:
        t, w = gauss_legendre(n)
        P = npleg.legvander(t, n - 1)  # P[q, p] = P_p(t_q)
        _LEG_CACHE[n] = (t, w, P)
    return _LEG_CACHE[n]


def exp_product_weights(n: int, z) -> np.ndarray:
    """Scaled product weights for ``int_{-1}^{1} f(t) exp(z (t - 1)) dt``.

    Returns ``W`` with shape ``z.shape + (n,)`` such that
    ``sum_q W[..., q] f(t_q)`` is exact whenever f is a polynomial of degree
    < n sampled at the n Gauss-Legendre nodes.
    """
    t, w, P = _leg_tables(n)
    m = scaled_exp_moments(n, z)  # (n_p,) + z.shape
    coef = (2.0 * np.arange(n) + 1.0).reshape((n,) + (1,) * (m.ndim - 1)) * m
    # W[..., q] = w_q * sum_p coef_p P_p(t_q)
    W = np.tensordot(np.moveaxis(coef, 0, -1), P.T, axes=([-1], [0]))
    return W * w


def filon_integral(values: np.ndarray, lo: float, hi: float, xi: float) -> complex:
    """``int_lo^hi g(y) exp(i xi y) dy`` for g sampled at the Gauss nodes of [lo, hi].

    Legendre-Filon rule: g is expanded in Legendre polynomials and each mode is
    integrated exactly via ``int P_p(t) e^{i z t} dt = 2 i^p j_p(z)``.
    """
    n = len(values)
    t, w, P = _leg_tables(n)
    h = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    p = np.arange(n)
    coef = (2 * p + 1) / 2.0 * (P.T @ (w * values))
    z = xi * h
    mom = 2.0 * (1j ** p) * spherical_jn(p, z)
    return complex(h * np.exp(1j * xi * mid) * np.dot(coef, mom))


# --------------------------------------------------------------------------
# oscillatory integrals with stationary points


def _find_stationary_points(domega, a, b, samples=4001):
    x = np.linspace(a, b, samples)
    d = np.asarray(domega(x), dtype=float)
    scale = max(np.max(np.abs(d)), 1e-300)
    flat = np.abs(d) <= 1e-13 * scale
    if np.count_nonzero(flat) > 2 and np.any(flat[:-1] & flat[1:]):
        raise ValueError("phase derivative vanishes on an interval; zeros are not isolated")
    roots = []
    for i in range(samples - 1):
        if flat[i] and 0 < i:
            roots.append(x[i])
        elif d[i] * d[i + 1] < 0:
            roots.append(optimize.brentq(domega, x[i], x[i + 1], xtol=1e-15))
    return sorted(set(float(r) for r in roots if a < r < b))


def _invert_monotone(omega, domega, ys, xl, xr):
    """Solve omega(x) = y for each y on a panel where omega is strictly monotone."""
    yl, yr = omega(xl), omega(xr)
    x = xl + (ys - yl) * (xr - xl) / (yr - yl)
    for _ in range(60):
        fx = omega(x) - ys
        dx = fx / domega(x)
        x_new = np.clip(x - dx, min(xl, xr), max(xl, xr))
        if np.max(np.abs(x_new - x)) <= 1e-15 * max(1.0, np.max(np.abs(x))):
            x = x_new
            break
        x = x_new
    bad = np.abs(omega(x) - ys) > 1e-12 * max(1.0, np.max(np.abs(ys)))
    for i in np.nonzero(bad)[0]:
        lo, hi = min(xl, xr), max(xl, xr)
        x[i] = optimize.brentq(lambda s: omega(s) - ys[i], lo, hi, xtol=1e-15)
    return x


def _panel_edges(lo, hi, grade_lo, grade_hi, delta, n_uniform):
    """Panel breakpoints on [lo, hi], graded geometrically toward flagged ends."""
    inner_lo, inner_hi = lo, hi
    left, right = [], []
    width = hi - lo
    if grade_lo:
        h = max(delta, 1e-300)
        pts = [lo]
        while pts[-1] + h < lo + 0.25 * width:
            pts.append(pts[-1] + h)
            h *= 2.0
        left = pts
        inner_lo = pts[-1]
    if grade_hi:
        h = max(delta, 1e-300)
        pts = [hi]
        while pts[-1] - h > hi - 0.25 * width:
            pts.append(pts[-1] - h)
            h *= 2.0
        right = pts[::-1]
        inner_hi = pts[-1]
    mid = list(np.linspace(inner_lo, inner_hi, n_uniform + 1))
    edges = left[:-1] + mid + right[1:] if left else mid + (right[1:] if right else [])
    return np.array(sorted(set(edges)))


def oscillatory_integral(
    f: Callable,
    omega: Callable,
    xi: float,
    a: float,
    b: float,
    domega: Callable | None = None,
    stationary_points: Sequence[float] | None = None,
    eps_target: float = 1e-8,
    order: int = 16,
    n_panels: int = 16,
) -> complex:
    """``int_a^b exp(i xi omega(x)) f(x) dx`` for f supported in [a, b].

    Each zero x0 of omega' is cut out with a window of half-width
    ``delta = eps_target / (2 sup|f|)`` (integrated directly); on the remaining
    pieces the substitution ``y = omega(x)`` turns the integral into a Fourier
    integral that is evaluated with a Legendre-Filon rule panel by panel.
    """
    xi = float(xi)
    if not np.isfinite(xi):
        raise ValueError("frequency must be finite")
    if not b > a:
        raise ValueError("integration interval must satisfy a < b")
    if domega is None:
        def domega(x, _h=1e-6 * (b - a)):
            return (omega(x + _h) - omega(x - _h)) / (2 * _h)

    tq, wq = gauss_legendre(order)

    def plain(lo, hi, n_sub=1):
        e = np.linspace(lo, hi, n_sub + 1)
        tot = 0j
        for l, r in zip(e[:-1], e[1:]):
            x = 0.5 * (r - l) * (tq + 1) + l
            tot += 0.5 * (r - l) * np.sum(wq * f(x) * np.exp(1j * xi * omega(x)))
        return tot

    if xi == 0.0:
        return plain(a, b, n_panels)

    if stationary_points is None:
        stationary_points = _find_stationary_points(domega, a, b)
    stationary_points = sorted(float(s) for s in stationary_points if a < s < b)

    xs = np.linspace(a, b, 4001)
    sup_f = float(np.max(np.abs(f(xs))))
    if sup_f == 0.0:
        return 0j
    delta = eps_target / (2.0 * sup_f)

    total = 0j
    cuts = [(a, False)]
    for x0 in stationary_points:
        lo, hi = max(a, x0 - delta), min(b, x0 + delta)
        total += plain(lo, hi)
        cuts.append((lo, True))
        cuts.append((hi, True))
    cuts.append((b, False))

    for (lo, glo), (hi, ghi) in zip(cuts[0::2], cuts[1::2]):
        if hi <= lo:
            continue
        edges = _panel_edges(lo, hi, glo, ghi, delta, n_panels)
        for xl, xr in zip(edges[:-1], edges[1:]):
            yl, yr = omega(xl), omega(xr)
            if yr == yl:
                total += plain(xl, xr)
                continue
            # Filon in the phase variable; orientation handled by the sign of dy
            ylo, yhi = min(yl, yr), max(yl, yr)
            ynodes = 0.5 * (yhi - ylo) * (tq + 1) + ylo
            xnodes = _invert_monotone(omega, domega, ynodes, xl, xr)
            g = f(xnodes) / np.abs(domega(xnodes))
            total += filon_integral(g, ylo, yhi, xi)
    return complex(total)
