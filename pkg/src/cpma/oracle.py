"""Reference computations that do not touch the main numerical modules.

* ``PolynomialExpr``: exact rational polynomials in the real coordinates, with
  ``symbolic_ma`` giving the exact complex-Hessian determinant.
* ``brute_min_trace``: direct search for ``min tr(HQ)/n`` over the normalized
  cone, with no knowledge of the closed-form minimizer.
* ``radial_quadrature``: kernel moments by explicit offset enumeration.
* ``manufactured_family``: closed-form solutions of the model equations.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

__all__ = [
    "PolynomialExpr",
    "symbolic_ma",
    "symbolic_hessian",
    "brute_min_trace",
    "radial_quadrature",
    "Manufactured",
    "manufactured_family",
    "parse_fixture",
    "MANUFACTURED_NAMES",
]


class PolynomialExpr:
    """Polynomial in ``x_1, y_1, ..., x_n, y_n`` with ``Fraction`` coefficients."""

    def __init__(self, nvars: int, terms: dict | None = None):
        self.nvars = nvars
        self.terms: dict[tuple[int, ...], Fraction] = {}
        for k, c in (terms or {}).items():
            c = Fraction(c)
            if c != 0:
                self.terms[tuple(k)] = self.terms.get(tuple(k), Fraction(0)) + c
        self.terms = {k: c for k, c in self.terms.items() if c != 0}

    @classmethod
    def const(cls, nvars: int, c) -> "PolynomialExpr":
        return cls(nvars, {(0,) * nvars: c})

    @classmethod
    def var(cls, nvars: int, i: int) -> "PolynomialExpr":
        e = [0] * nvars
        e[i] = 1
        return cls(nvars, {tuple(e): 1})

    @classmethod
    def abs2(cls, n: int, j: int | None = None) -> "PolynomialExpr":
        """``|z_j|^2`` (or ``|z|^2`` when ``j`` is None)."""
        nv = 2 * n
        idx = range(nv) if j is None else (2 * j, 2 * j + 1)
        out = cls(nv)
        for i in idx:
            out = out + cls.var(nv, i) * cls.var(nv, i)
        return out

    def _coerce(self, other) -> "PolynomialExpr":
        if isinstance(other, PolynomialExpr):
            if other.nvars != self.nvars:
                raise ValueError("variable count mismatch")
            return other
        return PolynomialExpr.const(self.nvars, other)

    def __add__(self, other):
        other = self._coerce(other)
        t = dict(self.terms)
        for k, c in other.terms.items():
            t[k] = t.get(k, Fraction(0)) + c
        return PolynomialExpr(self.nvars, t)

    __radd__ = __add__

    def __neg__(self):
        return PolynomialExpr(self.nvars, {k: -c for k, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        other = self._coerce(other)
        t: dict = {}
        for k1, c1 in self.terms.items():
            for k2, c2 in other.terms.items():
                k = tuple(a + b for a, b in zip(k1, k2))
                t[k] = t.get(k, Fraction(0)) + c1 * c2
        return PolynomialExpr(self.nvars, t)

    __rmul__ = __mul__

    def __pow__(self, p: int):
        out = PolynomialExpr.const(self.nvars, 1)
        for _ in range(p):
            out = out * self
        return out

    def __eq__(self, other):
        other = self._coerce(other)
        return (self - other).terms == {}

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def diff(self, i: int) -> "PolynomialExpr":
        t = {}
        for k, c in self.terms.items():
            if k[i] > 0:
                kk = list(k)
                kk[i] -= 1
                t[tuple(kk)] = c * k[i]
        return PolynomialExpr(self.nvars, t)

    def degree(self) -> int:
        return max((sum(k) for k in self.terms), default=0)

    def is_constant(self) -> bool:
        return all(sum(k) == 0 for k in self.terms)

    def constant(self) -> Fraction:
        return self.terms.get((0,) * self.nvars, Fraction(0))

    def __call__(self, coords) -> np.ndarray:
        """Evaluate at real coordinates (list of broadcastable arrays or a point)."""
        out = 0.0
        for k, c in self.terms.items():
            term = float(c)
            for x, p in zip(coords, k):
                if p:
                    term = term * np.asarray(x, dtype=float) ** p
            out = out + term
        return out

    def __repr__(self):
        if not self.terms:
            return "0"
        parts = []
        for k, c in sorted(self.terms.items()):
            mono = "*".join(f"v{i}^{p}" if p > 1 else f"v{i}" for i, p in enumerate(k) if p)
            parts.append(f"{c}" + (f"*{mono}" if mono else ""))
        return " + ".join(parts)


def _cpoly_mul(a, b):
    return (a[0] * b[0] - a[1] * b[1], a[0] * b[1] + a[1] * b[0])


def _cpoly_add(a, b):
    return (a[0] + b[0], a[1] + b[1])


def symbolic_hessian(poly: PolynomialExpr) -> list[list[tuple[PolynomialExpr, PolynomialExpr]]]:
    """Complex Hessian ``Q[j][k] = d^2 p / dz_k d conj(z_j)`` as (real, imag) polynomial pairs.

    Derived from ``d/dz = (d/dx - i d/dy)/2`` and ``d/dconj(z) = (d/dx + i d/dy)/2``.
    """
    n = poly.nvars // 2
    q = []
    for j in range(n):
        row = []
        for k in range(n):
            xj, yj, xk, yk = 2 * j, 2 * j + 1, 2 * k, 2 * k + 1
            # d_zk d_zbar_j = 1/4 (d_xk - i d_yk)(d_xj + i d_yj)
            re = (poly.diff(xj).diff(xk) + poly.diff(yj).diff(yk)) * Fraction(1, 4)
            im = (poly.diff(yj).diff(xk) - poly.diff(xj).diff(yk)) * Fraction(1, 4)
            row.append((re, im))
        q.append(row)
    return q


def _cdet(m):
    size = len(m)
    if size == 1:
        return m[0][0]
    zero = PolynomialExpr(m[0][0][0].nvars)
    total = (zero, zero)
    for c in range(size):
        minor = [row[:c] + row[c + 1:] for row in m[1:]]
        term = _cpoly_mul(m[0][c], _cdet(minor))
        if c % 2:
            term = (-term[0], -term[1])
        total = _cpoly_add(total, term)
    return total


def symbolic_ma(poly: PolynomialExpr) -> PolynomialExpr:
    """Exact ``det(d^2 p / dz_j d conj(z_k))`` for a polynomial ``p``."""
    re, im = _cdet(symbolic_hessian(poly))
    if im.terms:
        raise ArithmeticError("complex Hessian determinant has a nonzero imaginary part")
    return re


# ---------------------------------------------------------------- trace infimum


def _cholesky_members(params: np.ndarray, n: int) -> np.ndarray:
    """``H = L L*`` with unit-determinant lower-triangular ``L``.

    ``params`` holds ``n-1`` free log-diagonal entries (the last is fixed by
    ``prod L_ii = 1``) followed by real/imag parts of the strictly lower part.
    """
    count = params.shape[0]
    L = np.zeros((count, n, n), dtype=complex)
    logs = np.concatenate([params[:, : n - 1], -params[:, : n - 1].sum(axis=1, keepdims=True)], axis=1)
    for i in range(n):
        L[:, i, i] = np.exp(logs[:, i])
    pos = n - 1
    for i in range(n):
        for j in range(i):
            L[:, i, j] = params[:, pos] + 1j * params[:, pos + 1]
            pos += 2
    return L


def brute_min_trace(Q, density: int = 100_000, *, span: float = 5.0, per_level: int = 2000,
                    shrink: float = 0.8, seed: int = 0) -> float:
    """Minimum of ``tr(HQ)/n`` over ``density`` members of the normalized cone.

    Members are ``H = L L*`` with unit-determinant Cholesky factors. The search
    sweeps a box of half-width ``span`` in those coordinates, then repeatedly
    re-centres on the best member so far and shrinks the box; every level uses
    ``per_level`` deterministic quasi-random points. Each evaluated member lies
    in the cone, so the result is an upper bound for the infimum.
    """
    from scipy.stats import qmc

    Q = np.asarray(Q, dtype=complex)
    n = Q.shape[0]
    dim = (n - 1) + n * (n - 1)
    identity_val = float(np.trace(Q).real) / n
    if dim == 0:
        return identity_val
    best_x = np.zeros(dim)
    best = identity_val
    used = 1
    radius = span
    gen = qmc.Halton(d=dim, scramble=True, seed=seed)
    while used < density:
        k = min(per_level, density - used)
        pts = best_x + radius * (2.0 * gen.random(k) - 1.0)
        L = _cholesky_members(pts, n)
        # tr(L L* Q) = sum |Q^{1/2} L|^2, computed as Re tr(L* Q L)
        vals = np.einsum("aji,jk,aki->a", L.conj(), Q, L).real / n
        i = int(np.argmin(vals))
        if vals[i] < best:
            best, best_x = float(vals[i]), pts[i]
        used += k
        radius *= shrink
    return best


# ---------------------------------------------------------------- kernel moments


def radial_quadrature(profile: Callable[[np.ndarray], np.ndarray], h: float, eps: float,
                      ndim: int) -> dict:
    """Moments of the renormalized lattice kernel by explicit offset enumeration."""
    k = int(math.ceil(eps / h))
    offsets = []
    weights = []
    for o in itertools.product(range(-k, k + 1), repeat=ndim):
        r = math.sqrt(sum(t * t for t in o)) * h
        w = float(profile(np.array([r / eps]))[0])
        if w > 0:
            offsets.append(o)
            weights.append(w)
    w = np.array(weights)
    mass = w.sum()
    w = w / mass
    off = np.array(offsets, dtype=float) * h
    return {
        "mass": float(w.sum()),
        "first": (w[:, None] * off).sum(axis=0),
        "second": float((w * (off ** 2).sum(axis=1)).sum()),
        "count": len(offsets),
    }


# ---------------------------------------------------------------- manufactured solutions


@dataclass(frozen=True)
class Manufactured:
    """Closed-form solution of a model equation.

    ``kind == "plain"``: ``(dd^c phi*)^n = rhs``; ``kind == "exp"``:
    ``(dd^c phi*)^n = e^{phi*} rhs``. ``boundary`` is the Dirichlet rule
    evaluated on the boundary shell.
    """

    name: str
    n: int
    radius: float
    kind: str
    solution: Callable
    rhs: Callable
    boundary: Callable
    poly: PolynomialExpr | None = None
    ma_poly: PolynomialExpr | None = None


MANUFACTURED_NAMES = ("quadratic-ball", "exp-quadratic", "quartic")


def parse_fixture(spec: str) -> tuple[str, list[float]]:
    """``"quadratic-ball(1,1)"`` -> ``("quadratic-ball", [1.0, 1.0])``."""
    m = re.fullmatch(r"\s*([A-Za-z0-9_\-]+)\s*(?:\((.*)\))?\s*", spec)
    if not m:
        raise ValueError(f"cannot parse fixture {spec!r}")
    args = [float(a) for a in m.group(2).split(",")] if m.group(2) else []
    return m.group(1), args


def manufactured_family(name: str, n: int = 1, a: float | None = None, R: float | None = None) -> Manufactured:
    """Curated manufactured solutions.

    * ``quadratic-ball(a, R)``: ``a(|z|^2 - R^2)`` with ``F = a^n``.
    * ``exp-quadratic(a, R)``: same solution, ``mu = a^n e^{-phi*}``.
    * ``quartic`` (n = 1): ``|z|^4 + |z|^2 - (R^4 + R^2)`` with ``F = 4|z|^2 + 1``.
    """
    base, args = parse_fixture(name)
    if args:
        a = args[0] if a is None else a
        R = args[1] if len(args) > 1 and R is None else R
    a = 1.0 if a is None else float(a)
    R = 1.0 if R is None else float(R)
    if a <= 0 or R <= 0:
        raise ValueError("need a > 0 and R > 0")

    def r2(c):
        return sum(x * x for x in c)

    if base == "quadratic-ball":
        poly = PolynomialExpr.abs2(n) * Fraction(a).limit_denominator() - Fraction(a * R * R).limit_denominator()
        sol = lambda c: a * (r2(c) - R * R)  # noqa: E731
        return Manufactured(f"quadratic-ball({a:g},{R:g})", n, R, "plain", sol,
                            lambda c: a ** n + 0.0 * r2(c), sol, poly, symbolic_ma(poly))
    if base == "exp-quadratic":
        poly = PolynomialExpr.abs2(n) * Fraction(a).limit_denominator() - Fraction(a * R * R).limit_denominator()
        sol = lambda c: a * (r2(c) - R * R)  # noqa: E731
        return Manufactured(f"exp-quadratic({a:g},{R:g})", n, R, "exp", sol,
                            lambda c: a ** n * np.exp(-sol(c)), sol, poly, symbolic_ma(poly))
    if base == "quartic":
        if n != 1:
            raise ValueError("quartic fixture is defined for n = 1")
        s = PolynomialExpr.abs2(1)
        cst = Fraction(R ** 4 + R ** 2).limit_denominator()
        poly = s * s + s - cst
        sol = lambda c: r2(c) ** 2 + r2(c) - (R ** 4 + R ** 2)  # noqa: E731
        return Manufactured(f"quartic({R:g})", 1, R, "plain", sol, lambda c: 4 * r2(c) + 1, sol,
                            poly, symbolic_ma(poly))
    raise ValueError(f"unknown manufactured family {name!r}")
