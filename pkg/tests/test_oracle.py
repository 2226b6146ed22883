"""The reference computations are validated on their own before anything else relies on them."""

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cpma.mollifier import bump_profile
from cpma.oracle import (PolynomialExpr, brute_min_trace, manufactured_family, parse_fixture,
                         radial_quadrature, symbolic_hessian, symbolic_ma)

P = PolynomialExpr


def test_polynomial_arithmetic_is_exact():
    x = P.var(2, 0)
    y = P.var(2, 1)
    p = (x + Fraction(1, 3)) * (x - Fraction(1, 3))
    assert p == x * x - Fraction(1, 9)
    assert (x * y).diff(0) == y
    assert (x ** 3).diff(0).diff(0) == 6 * x
    assert p.constant() == Fraction(-1, 9)
    assert P.abs2(1) == x * x + y * y


def test_symbolic_ma_examples():
    assert symbolic_ma(P.abs2(2)) == P.const(4, 1)
    quartic = P.abs2(1) * P.abs2(1)
    assert symbolic_ma(quartic) == 4 * P.abs2(1)
    aniso = 2 * P.abs2(2, 0) + 3 * P.abs2(2, 1)
    assert symbolic_ma(aniso) == P.const(4, 6)


def test_symbolic_hessian_hand_expansion():
    # Re(z1 conj(z2)) = x1 x2 + y1 y2 has Q = [[0, 1/2], [1/2, 0]]
    p = P.var(4, 0) * P.var(4, 2) + P.var(4, 1) * P.var(4, 3)
    q = symbolic_hessian(p)
    assert q[0][1][0] == P.const(4, Fraction(1, 2)) and q[0][1][1] == P(4)
    # Im(z1 conj(z2)) = (z1 conj(z2) - conj(z1) z2) / 2i, so d^2/dz2 dconj(z1) = -1/2i = i/2
    p = P.var(4, 1) * P.var(4, 2) - P.var(4, 0) * P.var(4, 3)
    q = symbolic_hessian(p)
    assert q[0][1][1] == P.const(4, Fraction(1, 2))
    assert q[1][0][1] == P.const(4, Fraction(-1, 2))


def test_polynomial_evaluation():
    p = P.abs2(1) * P.abs2(1) + P.abs2(1) - 2
    c = [np.array([0.5, 1.0]), np.array([0.0, 1.0])]
    assert np.allclose(p(c), [0.0625 + 0.25 - 2, 4 + 2 - 2])


@pytest.mark.parametrize("Q, expected", [
    (np.eye(2), 1.0),
    (np.diag([4.0, 1.0]), 2.0),
])
def test_brute_min_trace_examples(Q, expected):
    v = brute_min_trace(Q, 100_000)
    assert expected - 1e-12 <= v <= expected + 1e-3


def test_brute_min_trace_identity_any_density():
    assert brute_min_trace(np.eye(2), 10) == 1.0


def test_brute_min_trace_indefinite_decreases():
    Q = np.diag([1.0, -1.0])
    vals = [brute_min_trace(Q, d) for d in (1_000, 10_000, 100_000)]
    assert all(v < 0 for v in vals)
    assert vals[0] >= vals[1] >= vals[2]


def test_brute_min_trace_three_by_three():
    Q = np.diag([9.0, 1.0, 1.0 / 9.0])
    v = brute_min_trace(Q, 100_000)
    assert 1.0 - 1e-12 <= v <= 1.0 + 1e-3


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_brute_is_upper_bound(seed):
    rng = np.random.default_rng(seed)
    b = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    Q = b @ b.conj().T + 0.1 * np.eye(2)
    root = np.sqrt(np.linalg.det(Q).real)
    coarse = brute_min_trace(Q, 2_000)
    fine = brute_min_trace(Q, 20_000)
    assert fine >= root - 1e-12
    assert fine <= coarse + 1e-15


@pytest.mark.parametrize("ndim", [2, 4])
def test_radial_quadrature_symmetry_and_mass(ndim):
    mom = radial_quadrature(bump_profile, 0.1, 0.25, ndim)
    assert mom["mass"] == pytest.approx(1.0, abs=1e-15)
    assert np.all(np.abs(mom["first"]) < 1e-16)


@pytest.mark.parametrize("k", [4, 5, 6])
def test_radial_quadrature_second_moment_scaling(k):
    h = 0.1
    r = radial_quadrature(bump_profile, h, 2 * k * h, 2)["second"] / radial_quadrature(bump_profile, h, k * h, 2)["second"]
    assert 3.8 <= r <= 4.2


def test_parse_fixture():
    assert parse_fixture("quadratic-ball(1,2.5)") == ("quadratic-ball", [1.0, 2.5])
    assert parse_fixture("quartic") == ("quartic", [])
    with pytest.raises(ValueError):
        parse_fixture("bad name(")


@pytest.mark.parametrize("n", [1, 2])
@pytest.mark.parametrize("a, R", [(1.0, 1.0), (2.0, 0.5)])
def test_quadratic_family_identity(n, a, R):
    fam = manufactured_family(f"quadratic-ball({a},{R})", n)
    assert fam.ma_poly == P.const(2 * n, Fraction(a).limit_denominator() ** n)
    pts = [np.array([0.1, -0.3, 0.7]) for _ in range(2 * n)]
    assert np.allclose(fam.rhs(pts), a ** n)
    assert np.allclose(fam.poly(pts), fam.solution(pts))


@pytest.mark.parametrize("n", [1, 2])
def test_exp_family_identity(n):
    fam = manufactured_family("exp-quadratic(1,1)", n)
    rng = np.random.default_rng(1)
    pts = [rng.uniform(-0.7, 0.7, 20) for _ in range(2 * n)]
    # (dd^c phi*)^n = e^{phi*} mu along the solution
    lhs = fam.ma_poly(pts) + 0.0 * pts[0]
    assert np.allclose(lhs, np.exp(fam.solution(pts)) * fam.rhs(pts))


def test_quartic_family_identity():
    fam = manufactured_family("quartic")
    s = P.abs2(1)
    assert fam.ma_poly == 4 * s + 1
    pts = [np.linspace(-1, 1, 7), np.linspace(0.3, -0.2, 7)]
    assert np.allclose(fam.rhs(pts), fam.ma_poly(pts))
    with pytest.raises(ValueError):
        manufactured_family("quartic", 2)


def test_unknown_family():
    with pytest.raises(ValueError, match="unknown"):
        manufactured_family("nonesuch")
