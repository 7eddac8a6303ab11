"""Decay of sandwiched resolvents along vertical lines, with semi-analytic kernel cross-checks.

``sandwich_norm`` evaluates ``||B1 R(lambda) B2||`` in the weighted norm.  Each
factor is reduced once to a thin weighted SVD, ``B = Q S P*``, so that only
``R(lambda)`` applied to a few columns is needed at every spectral parameter:

    ||B1 R B2|| = ||S1 (P1* R Q2) S2||.
"""

from __future__ import annotations

import threading
import weakref
from concurrent.futures import Executor
from dataclasses import dataclass

import numpy as np

from .functions import Function
from .models import Model
from .numerics import OperatorMatrix, gauss_legendre, oscillatory_integral, weighted_adjoint
from .resolvent import LambdaPoint, elementary_operators, resolve

__all__ = [
    "DecayScan",
    "sandwich_norm",
    "decay_scan",
    "tail_ratio",
    "appendix_kernel_rotenberg",
    "rotenberg_kernel_l2",
    "appendix_kernel_sphere",
    "sphere_kernel_l2",
]

_RANK_TOL = 1e-13


class _FactorCache:
    def __init__(self):
        self._lock = threading.Lock()
        self._store: weakref.WeakKeyDictionary = weakref.WeakKeyDictionary()

    def get(self, B: OperatorMatrix):
        with self._lock:
            hit = self._store.get(B)
        if hit is not None:
            return hit
        val = _thin_factor(B)
        with self._lock:
            return self._store.setdefault(B, val)


def _thin_factor(B: OperatorMatrix):
    """``(Y, S, Z)`` with ``B = Y diag(S) Z^H W_col`` and weighted-orthonormal Y, Z."""
    sr = np.sqrt(B.row_grid.weights)
    sc = np.sqrt(B.col_grid.weights)
    Q, S, Ph = np.linalg.svd(B.symmetrized(), full_matrices=False)
    keep = S > _RANK_TOL * S[0] if S.size and S[0] > 0 else np.zeros(S.size, dtype=bool)
    Q, S, Ph = Q[:, keep], S[keep], Ph[keep]
    # row side: columns of B in original coordinates are Q / sr
    left = Q / sr[:, None]
    # column side: the rows P^H act on sc * x
    right = Ph * sc[None, :]
    return left, S, right


_FACTORS = _FactorCache()


def sandwich_norm(model: Model, B1: OperatorMatrix, B2: OperatorMatrix, lam, scheme: str = "product",
                  mode: str = "direct") -> float:
    """Weighted operator norm of ``B1 (lambda - A_H)^-1 B2``."""
    lam = LambdaPoint.at(model, lam)
    if not np.any(B1.entries) or not np.any(B2.entries):
        return 0.0
    Y1, S1, Z1 = _FACTORS.get(B1)
    Y2, S2, Z2 = _FACTORS.get(B2)
    if S1.size == 0 or S2.size == 0:
        return 0.0
    ops = elementary_operators(model, lam, scheme)
    RY = resolve(model, lam, Y2.astype(complex), ops=ops, mode=mode)
    core = S1[:, None] * (Z1 @ RY) * S2[None, :]
    return float(np.linalg.norm(core, 2))


@dataclass(frozen=True)
class DecayScan:
    alpha: float
    beta_values: np.ndarray
    norms_star_left: np.ndarray
    norms_star_right: np.ndarray
    tail_ratio_left: float
    tail_ratio_right: float

    @property
    def tail_ratio(self) -> float:
        return max(self.tail_ratio_left, self.tail_ratio_right)

    def rows(self):
        for b, l, r in zip(self.beta_values, self.norms_star_left, self.norms_star_right):
            yield float(b), float(l), float(r)


def tail_ratio(beta_values, norms) -> float:
    """Largest value over the top decade of ``beta_values`` divided by the first value."""
    beta_values = np.asarray(beta_values, dtype=float)
    norms = np.asarray(norms, dtype=float)
    if norms[0] == 0.0:
        return 0.0
    top = beta_values >= beta_values[-1] / 10.0
    return float(np.max(norms[top]) / norms[0])


def decay_scan(model: Model, B: OperatorMatrix | None, alpha: float, beta_values,
               executor: Executor | None = None, scheme: str = "product") -> DecayScan:
    """Evaluate ``||B* R B||`` and ``||B R B*||`` at ``alpha + i beta``.

    ``B`` defaults to the model's collision matrix.  With an executor the
    points are evaluated concurrently; results are ordered by ``beta_values``.
    """
    beta_values = np.asarray(beta_values, dtype=float)
    if beta_values.ndim != 1 or beta_values.size < 2:
        raise ValueError("need at least two beta values")
    if np.any(beta_values <= 0) or np.any(np.diff(beta_values) <= 0):
        raise ValueError("beta values must be positive and increasing")
    if beta_values[-1] / beta_values[0] < 100.0 * (1 - 1e-12):
        raise ValueError("beta values must span at least two decades")
    LambdaPoint.at(model, complex(alpha))
    if B is None:
        B = model.B.matrix
    Bs = weighted_adjoint(B)
    # factor once before any concurrent use
    _FACTORS.get(B)
    _FACTORS.get(Bs)

    def point(beta):
        lam = complex(alpha, beta)
        return sandwich_norm(model, Bs, B, lam, scheme), sandwich_norm(model, B, Bs, lam, scheme)

    if executor is None:
        vals = [point(b) for b in beta_values]
    else:
        vals = list(executor.map(point, beta_values))
    left = np.array([v[0] for v in vals])
    right = np.array([v[1] for v in vals])
    return DecayScan(float(alpha), beta_values, left, right,
                     tail_ratio(beta_values, left), tail_ratio(beta_values, right))


# --------------------------------------------------------------------------
# semi-analytic kernels


def _kernel_scale(model: Model) -> float:
    return float(model.config_echo.get("alpha", 1.0))


def appendix_kernel_rotenberg(model: Model, k_factor: Function, beta2_factor: Function, x: float, lam,
                              alpha: float | None = None, eps: float = 1e-12) -> complex:
    """``F(x) = alpha int_a^b k(v) beta2(v) exp(-x (lambda + sigma) / v) dv`` for ``x >= 0``."""
    lam = LambdaPoint.at(model, lam)
    x = float(x)
    if x < 0:
        raise ValueError("x must be nonnegative")
    alpha = _kernel_scale(model) if alpha is None else float(alpha)
    a, b = model.geometry["a"], model.geometry["b"]
    kappa = lam.value + model.sigma_lower
    lo, hi = _common_support(k_factor, beta2_factor, a, b)
    if hi <= lo:
        return 0j

    def amp(v):
        return k_factor(v) * beta2_factor(v) * np.exp(-x * kappa.real / v)

    if x == 0.0 or kappa.imag == 0.0:
        return complex(alpha * _gauss(amp, lo, hi))
    val = oscillatory_integral(amp, lambda v: -x / v, kappa.imag, lo, hi,
                               domega=lambda v: x / v ** 2, stationary_points=(), eps_target=eps)
    return complex(alpha * val)


def _common_support(f: Function, g: Function, a, b):
    lo, hi = a, b
    for h in (f, g):
        s = h.support
        if s is not None:
            lo, hi = max(lo, s[0]), min(hi, s[1])
    return lo, hi


def _gauss(fun, lo, hi, panels=16, order=16):
    t, w = gauss_legendre(order)
    e = np.linspace(lo, hi, panels + 1)
    return sum(0.5 * (r - l) * np.sum(w * fun(0.5 * (r - l) * (t + 1) + l)) for l, r in zip(e[:-1], e[1:]))


def rotenberg_kernel_l2(model: Model, k_factor: Function, beta2_factor: Function, lam,
                        alpha: float | None = None, panels: int = 48, order: int = 16, tail_tol: float = 1e-14):
    """``(int_0^inf |F(x)|^2 dx, bound)`` with the bound ``alpha^2/(2 w) int |k|^2 v dv int |beta2|^2 dv``.

    The x-integral uses geometrically graded Gauss panels on ``[0, X]``; X is
    chosen so that the envelope ``alpha int|k beta2| exp(-x w / b)`` leaves a
    tail below ``tail_tol`` times the bound, and the analytic tail of that
    envelope is added.
    """
    lam = LambdaPoint.at(model, lam)
    alpha = _kernel_scale(model) if alpha is None else float(alpha)
    a, b = model.geometry["a"], model.geometry["b"]
    w = lam.margin
    bound = alpha ** 2 / (2 * w) * _gauss(lambda v: np.abs(k_factor(v)) ** 2 * v, a, b) \
        * _gauss(lambda v: np.abs(beta2_factor(v)) ** 2, a, b)
    env0 = alpha * _gauss(lambda v: np.abs(k_factor(v) * beta2_factor(v)), a, b)
    if env0 == 0.0:
        return 0.0, float(bound)
    # tail of env0^2 exp(-2 x w / b) beyond X
    X = max(b / (2 * w) * np.log(env0 ** 2 * b / (2 * w) / (tail_tol * max(bound, 1e-300))), 1.0)
    tail = env0 ** 2 * b / (2 * w) * np.exp(-2 * X * w / b)
    h0 = min(1e-2, 1.0 / max(abs(lam.value.imag), 1.0)) * b
    edges = np.concatenate([[0.0], np.geomspace(h0 / 64, X, panels)])
    t, wq = gauss_legendre(order)
    total = 0.0
    for l, r in zip(edges[:-1], edges[1:]):
        xs = 0.5 * (r - l) * (t + 1) + l
        F = np.array([appendix_kernel_rotenberg(model, k_factor, beta2_factor, x, lam, alpha) for x in xs])
        total += 0.5 * (r - l) * np.sum(wq * np.abs(F) ** 2)
    return float(total + tail), float(bound)


def appendix_kernel_sphere(model: Model, k_factor: Function, beta2_factor: Function, k_index: int, rho: float,
                           sign: int, lam, eps: float = 1e-12) -> complex:
    """``F^{+-}(rho)`` of the sphere model with reflection coefficient one.

    ``F(rho) = +-int_0^rho k(sqrt(R^2-eta^2)/R) beta2(sqrt(rho^2-eta^2)/rho)
    exp(-(lambda+S)[(2k+1) sqrt(R^2-eta^2) -+ sqrt(rho^2-eta^2)]) d eta / sqrt(rho^2-eta^2)``,
    evaluated after ``eta = rho sin(theta)``.
    """
    lam = LambdaPoint.at(model, lam)
    R = float(model.geometry["R"])
    rho = float(rho)
    if not 0.0 < rho < R:
        raise ValueError("rho must lie in (0, R)")
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    if k_index < 0 or int(k_index) != k_index:
        raise ValueError("k_index must be a nonnegative integer")
    kappa = lam.value + model.sigma_lower
    m = 2 * int(k_index) + 1

    def path(th):
        eta = rho * np.sin(th)
        return m * np.sqrt(R * R - eta * eta) - sign * rho * np.cos(th)

    def amp(th):
        eta = rho * np.sin(th)
        return (sign * k_factor(np.sqrt(R * R - eta * eta) / R) * beta2_factor(np.cos(th))
                * np.exp(-kappa.real * path(th)))

    def dpath(th):
        eta = rho * np.sin(th)
        return -m * rho * rho * np.sin(th) * np.cos(th) / np.sqrt(R * R - eta * eta) + sign * rho * np.sin(th)

    lo, hi = 0.0, 0.5 * np.pi
    if kappa.imag == 0.0:
        return complex(_gauss(amp, lo, hi))
    return oscillatory_integral(amp, lambda th: -path(th), kappa.imag, lo, hi,
                                domega=lambda th: -dpath(th), eps_target=eps)


def sphere_kernel_l2(model: Model, k_factor: Function, beta2_factor: Function, k_index: int, sign: int, lam,
                     n: int = 128) -> float:
    """``int_0^R |F^{+-}(rho)|^2 rho d rho`` by Gauss quadrature in rho."""
    R = float(model.geometry["R"])
    t, w = gauss_legendre(n)
    rho = 0.5 * R * (t + 1)
    F = np.array([appendix_kernel_sphere(model, k_factor, beta2_factor, k_index, r, sign, lam) for r in rho])
    return float(0.5 * R * np.sum(w * np.abs(F) ** 2 * rho))
