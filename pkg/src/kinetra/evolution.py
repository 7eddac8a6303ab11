"""Streaming and collisional propagators, Dyson-Phillips terms and remainders.

Propagators are dense matrix exponentials of the semi-discrete generator
``A_h`` (boundary unknowns eliminated) and of ``A_h + B``.  The default line
scheme is first-order upwind finite volumes, whose generator is a Metzler
matrix: the discrete semigroup is then entrywise nonnegative and contractive
in the weighted norm whenever the boundary operator is.  The spectral
collocation scheme is available for smooth-data accuracy studies.
"""

from __future__ import annotations

import threading
import weakref
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .models import Model
from .numerics import OperatorMatrix, gauss_legendre, singular_value_profile
from .resolvent import generator_matrix

__all__ = [
    "Propagator",
    "DysonLadder",
    "RemainderProfile",
    "streaming_propagator",
    "full_propagator",
    "dyson_ladder",
    "dyson_term_quadrature",
    "first_remainder",
    "generator",
]


class _ModelCache:
    """Per-model store for generator matrices and exponentials (insert-or-get under a lock)."""

    def __init__(self):
        self._lock = threading.Lock()
        self._store: weakref.WeakKeyDictionary = weakref.WeakKeyDictionary()

    def get(self, model, key, builder):
        with self._lock:
            entry = self._store.setdefault(model, {})
            if key in entry:
                return entry[key]
        value = builder()
        with self._lock:
            return self._store[model].setdefault(key, value)

    def clear(self):
        with self._lock:
            self._store.clear()


_CACHE = _ModelCache()


def generator(model: Model, with_collision: bool = False, scheme: str = "upwind") -> np.ndarray:
    """Generator matrix ``A_h`` or ``A_h + B`` (cached per model)."""

    def build():
        A = generator_matrix(model, scheme)
        if with_collision and not model.B.is_zero:
            A = A + model.B.matrix.entries
        A.setflags(write=False)
        return A

    return _CACHE.get(model, ("gen", with_collision, scheme), build)


def _lines_decoupled(model: Model, with_collision: bool) -> bool:
    H = model.H
    if with_collision and not model.B.is_zero:
        return False
    return not np.any(H.kernel_matrix) and np.array_equal(H.partner, np.arange(H.size))


def _exp(model, t, with_collision, scheme):
    def build():
        if t == 0.0:
            E = np.eye(model.size)
        elif _lines_decoupled(model, with_collision):
            # block diagonal generator: one small exponential per line
            A = generator(model, False, scheme)
            n = model.n_s
            E = np.zeros((model.size, model.size))
            for j in range(model.n_lines):
                sl = slice(j * n, (j + 1) * n)
                E[sl, sl] = expm(t * A[sl, sl])
        else:
            E = expm(t * generator(model, with_collision, scheme))
        E.setflags(write=False)
        return E

    return _CACHE.get(model, ("exp", float(t), with_collision, scheme), build)


@dataclass(frozen=True)
class Propagator:
    t: float
    matrix: OperatorMatrix
    provenance: str = "exact-exponential"

    def norm(self) -> float:
        return self.matrix.norm()

    def apply(self, phi):
        return self.matrix.entries @ phi


def _check_t(t):
    t = float(t)
    if not (np.isfinite(t) and t >= 0):
        raise ValueError("time must be finite and nonnegative")
    return t


def streaming_propagator(model: Model, t: float, scheme: str = "upwind") -> Propagator:
    """``U(t) = exp(t A_h)`` for the streaming generator with boundary operator."""
    t = _check_t(t)
    g = model.interior_grid
    return Propagator(t, OperatorMatrix(_exp(model, t, False, scheme), g, g))


def full_propagator(model: Model, t: float, scheme: str = "upwind") -> Propagator:
    """``V(t) = exp(t (A_h + B))``."""
    t = _check_t(t)
    g = model.interior_grid
    if model.B.is_zero:
        return Propagator(t, OperatorMatrix(_exp(model, t, False, scheme), g, g))
    return Propagator(t, OperatorMatrix(_exp(model, t, True, scheme), g, g))


@dataclass(frozen=True)
class DysonLadder:
    t: float
    terms: tuple
    remainder_estimate: float
    remainders: tuple = ()

    @property
    def term_norms(self) -> list[float]:
        return [T.norm() for T in self.terms]


def _ladder_exponential(A, B, t, n):
    """First block row of exp(t T) for the block bidiagonal T = [[A, B], [0, A], ...]."""
    N = A.shape[0]
    T = np.zeros(((n + 1) * N, (n + 1) * N))
    for j in range(n + 1):
        T[j * N:(j + 1) * N, j * N:(j + 1) * N] = A
        if j < n:
            T[j * N:(j + 1) * N, (j + 1) * N:(j + 2) * N] = B
    E = expm(t * T)
    return [E[:N, j * N:(j + 1) * N].copy() for j in range(n + 1)]


def dyson_ladder(model: Model, t: float, n: int, scheme: str = "upwind") -> DysonLadder:
    """Dyson-Phillips terms ``U_0(t) .. U_n(t)`` and remainder norms.

    The terms are read off the exponential of a block bidiagonal matrix with
    ``A_h`` on the diagonal and ``B`` on the superdiagonal, whose first block
    row is ``(U_0(t), U_1(t), ..., U_n(t))``.  ``remainders[k]`` is
    ``||V(t) - sum_{j<=k} U_j(t)||`` in the weighted norm.
    """
    t = _check_t(t)
    if n < 0 or int(n) != n:
        raise ValueError("ladder length must be a nonnegative integer")
    g = model.interior_grid
    A = generator(model, False, scheme)
    if model.B.is_zero or n == 0:
        U = _exp(model, t, False, scheme)
        blocks = [np.array(U)] + [np.zeros_like(U) for _ in range(n)]
    else:
        blocks = _ladder_exponential(A, model.B.matrix.entries, t, n)
    terms = tuple(OperatorMatrix(b, g, g) for b in blocks)
    V = _exp(model, t, not model.B.is_zero, scheme)
    partial = np.zeros_like(V)
    rem = []
    for b in blocks:
        partial = partial + b
        rem.append(OperatorMatrix(V - partial, g, g).norm())
    return DysonLadder(t, terms, rem[-1], tuple(rem))


def dyson_term_quadrature(model: Model, t: float, scheme: str = "upwind", order: int = 8,
                          panels: int = 16, tol: float = 1e-8, max_panels: int = 1024) -> OperatorMatrix:
    """``U_1(t) = int_0^t U(t - s) B U(s) ds`` by composite Gauss panels.

    The panel count is doubled until the weighted norm of the change drops
    below ``tol`` (relative to the term).  Exponentials at the quadrature
    nodes are cached with the model.
    """
    t = _check_t(t)
    g = model.interior_grid
    Bm = model.B.matrix.entries
    xq, wq = gauss_legendre(order)

    def rule(npan):
        edges = np.linspace(0.0, t, npan + 1)
        total = np.zeros((model.size, model.size))
        for lo, hi in zip(edges[:-1], edges[1:]):
            for x, w in zip(xq, wq):
                s = lo + 0.5 * (hi - lo) * (1.0 + x)
                total += 0.5 * (hi - lo) * w * (_exp(model, t - s, False, scheme) @ Bm @ _exp(model, s, False, scheme))
        return total

    if t == 0.0 or model.B.is_zero:
        return OperatorMatrix(np.zeros((model.size, model.size)), g, g)
    cur = rule(panels)
    while panels < max_panels:
        panels *= 2
        nxt = rule(panels)
        change = OperatorMatrix(nxt - cur, g, g).norm()
        cur = nxt
        if change <= tol * max(1.0, OperatorMatrix(cur, g, g).norm()):
            break
    return OperatorMatrix(cur, g, g)


@dataclass(frozen=True)
class RemainderProfile:
    t: float
    matrix: OperatorMatrix
    singular_values: np.ndarray


def first_remainder(model: Model, t: float, scheme: str = "upwind") -> RemainderProfile:
    """``R_1(t) = V(t) - U(t)`` with its weighted singular values."""
    t = _check_t(t)
    g = model.interior_grid
    V = full_propagator(model, t, scheme).matrix.entries
    U = streaming_propagator(model, t, scheme).matrix.entries
    R = OperatorMatrix(V - U, g, g)
    return RemainderProfile(t, R, singular_value_profile(R))


def clear_cache():
    _CACHE.clear()
