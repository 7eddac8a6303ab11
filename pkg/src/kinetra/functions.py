"""Text-specifiable one-dimensional function families.

Coefficients, kernel factors and collision profiles are given in run
configurations as short expressions::

    const(0.5)
    bump(0.55, 0.3)          # smooth, supported in ]0.25, 0.85[
    bump(0.55, 0.3, 2.0)     # same shape, peak value 2
    poly(1, 0, -0.5)         # 1 - 0.5 x^2
    table(0:0, 0.5:1, 1:0)   # piecewise linear, zero outside
    zero
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

__all__ = ["Function", "parse_function", "const", "bump", "zero"]

_CALL = re.compile(r"^\s*([a-z]+)\s*(?:\((.*)\))?\s*$")


@dataclass(frozen=True)
class Function:
    """A real function of one variable from one of the built-in families.

    Parameters
    ----------
    family : str
        One of ``const``, ``bump``, ``poly``, ``table``.
    params : tuple of float
        Family parameters.  For ``table`` the flat sequence ``x0, y0, x1, y1, ...``.
    """

    family: str
    params: tuple = ()

    def __post_init__(self):
        p = tuple(float(v) for v in self.params)
        if not all(np.isfinite(p)):
            raise ValueError(f"non-finite parameter in {self.family}{p}")
        object.__setattr__(self, "params", p)
        if self.family == "const" and len(p) != 1:
            raise ValueError("const takes exactly one value")
        if self.family == "bump":
            if len(p) not in (2, 3):
                raise ValueError("bump takes (center, width[, height])")
            if p[1] <= 0:
                raise ValueError("bump width must be positive")
        if self.family == "poly" and len(p) == 0:
            raise ValueError("poly needs at least one coefficient")
        if self.family == "table":
            if len(p) < 4 or len(p) % 2:
                raise ValueError("table needs at least two x:y points")
            if np.any(np.diff(p[0::2]) <= 0):
                raise ValueError("table abscissae must be strictly increasing")
        if self.family not in ("const", "bump", "poly", "table"):
            raise ValueError(f"unknown function family '{self.family}'")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.family == "const":
            return np.full_like(x, p[0])
        if self.family == "bump":
            h = p[2] if len(p) == 3 else 1.0
            u = (x - p[0]) / p[1]
            inside = np.abs(u) < 1.0
            q = np.where(inside, 1.0 - u * u, 1.0)
            return np.where(inside, h * np.exp(1.0 - 1.0 / q), 0.0)
        if self.family == "poly":
            return np.polynomial.polynomial.polyval(x, np.array(p)) + 0.0 * x
        xs, ys = np.array(p[0::2]), np.array(p[1::2])
        return np.interp(x, xs, ys, left=0.0, right=0.0)

    @property
    def support(self) -> tuple[float, float] | None:
        """Closed hull of the support, or None when unbounded."""
        p = self.params
        if self.family == "bump":
            return (p[0] - p[1], p[0] + p[1])
        if self.family == "table":
            return (p[0], p[-2])
        if self.family == "const" and p[0] == 0.0:
            return (0.0, 0.0)
        if self.family == "poly" and not any(p):
            return (0.0, 0.0)
        return None

    @property
    def is_zero(self) -> bool:
        if self.family in ("const", "poly"):
            return not any(self.params)
        if self.family == "bump":
            return len(self.params) == 3 and self.params[2] == 0.0
        return not any(self.params[1::2])

    def supported_in(self, lo: float, hi: float) -> bool:
        """True when the support lies strictly inside ]lo, hi[ (or the function is zero)."""
        if self.is_zero:
            return True
        s = self.support
        if s is None:
            return False
        if self.family == "table":
            # a table vanishing at its end points is supported inside its abscissae
            ys = self.params[1::2]
            ok_lo = s[0] > lo or (s[0] >= lo and ys[0] == 0.0)
            ok_hi = s[1] < hi or (s[1] <= hi and ys[-1] == 0.0)
            return ok_lo and ok_hi
        return s[0] >= lo and s[1] <= hi

    def sup(self, lo: float, hi: float, n: int = 2001) -> float:
        """Maximum of the function over [lo, hi] (sampled, exact for const and table)."""
        x = np.linspace(lo, hi, n)
        if self.family == "table":
            xs = np.array(self.params[0::2])
            x = np.concatenate([x, xs[(xs >= lo) & (xs <= hi)]])
        if self.family == "bump":
            c = self.params[0]
            if lo <= c <= hi:
                x = np.append(x, c)
        return float(np.max(self(x)))

    def inf(self, lo: float, hi: float, n: int = 2001) -> float:
        x = np.linspace(lo, hi, n)
        if self.family == "table":
            xs = np.array(self.params[0::2])
            x = np.concatenate([x, xs[(xs >= lo) & (xs <= hi)]])
        return float(np.min(self(x)))

    def text(self) -> str:
        if self.family == "table":
            pts = ", ".join(f"{x!r}:{y!r}" for x, y in zip(self.params[0::2], self.params[1::2]))
            return f"table({pts})"
        return f"{self.family}({', '.join(repr(v) for v in self.params)})"

    def __str__(self):
        return self.text()


def const(c: float) -> Function:
    return Function("const", (c,))


def zero() -> Function:
    return Function("const", (0.0,))


def bump(center: float, width: float, height: float = 1.0) -> Function:
    return Function("bump", (center, width, height))


def parse_function(text: str) -> Function:
    """Parse a function expression.

    >>> parse_function("bump(0.5, 0.2)")(0.5)
    array(1.)
    """
    m = _CALL.match(text)
    if not m:
        raise ValueError(f"cannot parse function expression '{text.strip()}'")
    name, args = m.group(1), m.group(2)
    if name == "zero" and args is None:
        return zero()
    if args is None:
        raise ValueError(f"function family '{name}' needs an argument list")
    items = [a.strip() for a in args.split(",") if a.strip()]
    try:
        if name == "table":
            flat = []
            for it in items:
                xs, ys = it.split(":")
                flat += [float(xs), float(ys)]
            return Function("table", tuple(flat))
        return Function(name, tuple(float(a) for a in items))
    except ValueError as exc:
        raise ValueError(f"bad function expression '{text.strip()}': {exc}") from None
