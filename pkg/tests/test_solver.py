import csv
import math

import numpy as np
import pytest

from cpma.cli import energy_probes
from cpma.diff_ops import ma_det
from cpma.field_core import ScalarField, sample_function
from cpma.fixtures import ball_grid, build_fixture
from cpma.oracle import manufactured_family
from cpma.solver import (ExpRHS, LadderConfig, SolverConfig, energy_E1, functional_F, ma_residual,
                         run_ladder, sandwich_offsets, solve_dirichlet, solve_exponential,
                         stability_probe, write_ladder_csv, write_trace_csv)


def abs2(c):
    return sum(x * x for x in c)


def zero_data(n, m):
    grid, mask = ball_grid(n, m)
    return ScalarField(grid, np.where(mask.live, 0.0, np.nan), mask)


def manufactured(name, n, m):
    man = manufactured_family(name, n)
    grid, mask = ball_grid(man.n, m, man.radius)
    return (sample_function(grid, mask, man.solution),
            sample_function(grid, mask, man.rhs, density=True))


@pytest.mark.parametrize("n, m", [(1, 17), (1, 33), (2, 11)])
def test_quadratic_data_reproduced(n, m):
    # |z|^2 - 1 solves (dd^c u)^n = 1 exactly on the lattice stencil
    exact, f = manufactured("quadratic-ball(1,1)", n, m)
    res = solve_dirichlet(ExpRHS(np.where(exact.mask.interior, f.values, 0.0)), exact)
    assert res.converged and "NONCONVERGED" not in res.flags
    inner = exact.mask.interior
    assert np.max(np.abs(res.field.values[inner] - exact.values[inner])) <= 1e-9
    assert ma_residual(res.field, ExpRHS(np.where(inner, f.values, 0.0))) <= 1e-8


@pytest.mark.parametrize("n, m", [(1, 33), (2, 11)])
def test_exponential_manufactured(n, m):
    exact, mu = manufactured("exp-quadratic(1,1)", n, m)
    res = solve_exponential(mu, exact)
    inner = exact.mask.interior
    assert res.converged
    assert np.max(np.abs(res.field.values[inner] - exact.values[inner])) <= 0.25 * exact.grid.spacing


def test_zero_rhs_zero_data_is_zero():
    bd = zero_data(2, 9)
    res = solve_dirichlet(ExpRHS(np.zeros(bd.grid.shape)), bd)
    assert res.converged
    assert np.all(res.field.interior_values() == 0.0)
    res = solve_exponential(np.zeros(bd.grid.shape), bd)
    assert np.all(res.field.interior_values() == 0.0)


def test_uniqueness_from_two_starts():
    exact, mu = manufactured("exp-quadratic(1,1)", 1, 33)
    a = solve_exponential(mu, exact)
    b = solve_exponential(mu, exact, init=exact.with_values(np.full(exact.grid.shape, -1.0)))
    inner = exact.mask.interior
    assert np.max(np.abs(a.field.values[inner] - b.field.values[inner])) <= 1e-6


def test_comparison_principle():
    bd = zero_data(1, 33)
    shape = bd.grid.shape
    small = solve_dirichlet(ExpRHS(np.full(shape, 1.0)), bd).field.interior_values()
    big = solve_dirichlet(ExpRHS(np.full(shape, 2.0)), bd).field.interior_values()
    # larger mass pushes the solution down
    assert np.all(big <= small + 1e-12)
    low_bd = bd.with_values(np.where(bd.mask.live, -0.5, np.nan))
    lower = solve_dirichlet(ExpRHS(np.full(shape, 1.0)), low_bd).field.interior_values()
    assert np.all(lower <= small + 1e-12)
    assert np.allclose(lower, small - 0.5)


def test_sweep_agrees_with_policy():
    exact, f = manufactured("quadratic-ball(1,1)", 1, 17)
    rhs = ExpRHS(np.where(exact.mask.interior, f.values, 0.0), 1.0, np.where(exact.mask.interior, exact.values, 0.0))
    pol = solve_dirichlet(rhs, exact, SolverConfig(method="policy"))
    sw = solve_dirichlet(rhs, exact, SolverConfig(method="sweep", residual_tol=1e-10))
    assert pol.converged and sw.converged
    assert np.max(np.abs(pol.field.interior_values() - sw.field.interior_values())) <= 1e-8


def test_sweeps_increase_from_a_subsolution():
    exact, f = manufactured("quadratic-ball(1,1)", 1, 17)
    rhs = ExpRHS(np.where(exact.mask.interior, f.values, 0.0))
    # r^2 - 1 - (R^2 - r^2) with R the shell's outer radius: Laplacian doubled,
    # and below the data on every shell node
    r2 = exact.grid.radius_squared()
    outer = r2[exact.mask.boundary].max()
    init = exact.with_values(exact.values - (outer - r2))
    prev = init.values[exact.mask.interior]
    for k in (1, 2, 3):
        cur = solve_dirichlet(rhs, exact, SolverConfig(method="sweep", max_sweeps=k), init=init)
        vals = cur.field.values[exact.mask.interior]
        assert np.all(vals >= prev - 1e-13)
        assert "NONCONVERGED" in cur.flags
        prev = vals
    assert np.all(prev <= exact.values[exact.mask.interior] + 1e-12)


def test_solver_config_rejects():
    with pytest.raises(ValueError):
        SolverConfig(method="jacobi")
    with pytest.raises(ValueError):
        SolverConfig(residual_tol=0.0)
    with pytest.raises(ValueError):
        ExpRHS(np.ones(3), rate=-1.0)
    bd = zero_data(1, 9)
    with pytest.raises(ValueError, match="nonnegative"):
        solve_dirichlet(ExpRHS(np.full(bd.grid.shape, -1.0)), bd)


@pytest.mark.parametrize("j, delta, lower, upper", [
    (10, 0.5, 0.04055, 0.06931),
    (20, 0.5, 0.02027, 0.03466),
])
def test_sandwich_offsets(j, delta, lower, upper):
    lo, up = sandwich_offsets(j, delta)
    assert lo == pytest.approx(lower, abs=1e-5)
    assert up == pytest.approx(upper, abs=1e-5)
    with pytest.raises(ValueError):
        sandwich_offsets(0.5, 0.5)
    with pytest.raises(ValueError):
        sandwich_offsets(5, 1.0)


def test_ladder_sandwich_and_csv(tmp_path):
    phi, f = build_fixture("quadratic-ball-1d", 65)
    res = run_ladder(phi, f, LadderConfig(js=(5, 10, 20), deltas=(0.1, 0.5)))
    assert res.all_inside()
    assert all(r.solve.converged for r in res.rungs)
    for r in res.deviation_ratios():
        assert r["ratio"] <= 0.65
    write_ladder_csv(res, tmp_path / "ladder.csv")
    rows = list(csv.DictReader(open(tmp_path / "ladder.csv")))
    assert len(rows) == 6
    assert {"j", "delta", "lower_offset", "upper_offset", "observed_min_margin",
            "observed_max_margin", "inside_fraction"} <= set(rows[0])


def test_ladder_rejects_non_subsolution():
    phi, f = build_fixture("quadratic-ball-1d", 33)
    with pytest.raises(ValueError, match="precondition"):
        run_ladder(phi, f.map(lambda v: 2.0 * v), LadderConfig(js=(5,), deltas=(0.5,)))
    with pytest.raises(ValueError):
        LadderConfig(js=(0.5,))


def test_trace_csv(tmp_path):
    exact, mu = manufactured("exp-quadratic(1,1)", 1, 17)
    res = solve_exponential(mu, exact)
    write_trace_csv(res, tmp_path / "t.csv")
    rows = list(csv.reader(open(tmp_path / "t.csv")))
    assert rows[0] == ["iteration", "residual"]
    assert len(rows) == len(res.trace) + 1
    assert float(rows[-1][1]) <= 1e-9 * 2


@pytest.mark.parametrize("n, m", [(1, 33), (2, 11)])
def test_stability_slope(n, m):
    bd = zero_data(n, m)
    grid = bd.grid
    f = bd.with_values(np.where(bd.mask.live, 1.0, np.nan))
    pert = np.exp(-8 * grid.radius_squared())
    out = stability_probe(f, pert, [1e-3, 1e-2, 1e-1])
    assert out["slope"] >= 1.0 / n - 0.15
    assert out["predicted_exponent"] == 1.0 / n


def test_energy_of_quadratic_disc():
    # E1(|z|^2 - 1) on the unit disc: 1/2 * integral (|z|^2 - 1) dA = -pi/4
    phi, _ = build_fixture("quadratic-ball-1d", 129)
    assert energy_E1(phi) == pytest.approx(-math.pi / 4, rel=0.05)
    with pytest.raises(ValueError):
        energy_E1(phi.with_values(phi.values + 5.0))


def test_euler_lagrange_residuals():
    exact, mu = manufactured("exp-quadratic(1,1)", 1, 33)
    probes = energy_probes(exact.mask, 10, 0)
    rep = functional_F(exact, mu, probes)
    assert max(rep.relative_residuals) <= 1e-6
    sol = solve_exponential(mu, exact)
    at = functional_F(sol.field, mu, probes)
    assert max(abs(c) for c in at.critical_residuals) <= 10 * 1e-9
    bad = np.ones(exact.grid.shape)
    with pytest.raises(ValueError, match="vanish"):
        functional_F(exact, mu, [bad])


def test_density_from_unmollified_ma():
    phi, f = build_fixture("quadratic-ball-1d", 33)
    dens = np.nan_to_num(ma_det(phi).field.values)
    assert np.allclose(dens[phi.mask.interior], 1.0)
