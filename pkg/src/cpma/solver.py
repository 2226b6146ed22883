"""Monotone Dirichlet solvers for ``(dd^c phi)^n = F(phi, x) dV``.

The discrete equation at an interior node is

    min_{H in sample} Delta_H^h phi(x) = F(phi(x), x)^{1/n},

with the monotone wide-stencil ``Delta_H^h``. Right-hand sides have the form
``F(u, x) = m(x) exp(rate * (u - offset(x)))`` which covers constant
densities, ``e^phi mu`` and the ``e^{j(phi - psi)} {f + delta MA}`` ladder.

Two drivers share the same discrete equations:

* ``policy``: semismooth Newton / Howard policy iteration. The residual is
  concave in ``phi`` with an M-matrix Jacobian, so from any start the first
  step lands on a supersolution and the iterates then decrease monotonically.
* ``sweep``: colored nonlinear Gauss-Seidel; each node update solves its
  scalar equation exactly (lines of the min are handled one at a time with a
  monotone Newton iteration).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .diff_ops import StencilSet, complex_hessian, lattice_sample, ma_det
from .field_core import DomainMask, ScalarField, shift
from .hermitian_cone import HermitianSample

log = logging.getLogger(__name__)

__all__ = [
    "SolverConfig",
    "ExpRHS",
    "SolveResult",
    "LadderConfig",
    "LadderResult",
    "EnergyReport",
    "DiscreteOperator",
    "solve_dirichlet",
    "solve_exponential",
    "run_ladder",
    "sandwich_offsets",
    "stability_probe",
    "energy_E1",
    "functional_F",
    "write_trace_csv",
]

EXP_CLAMP = 700.0


@dataclass
class SolverConfig:
    sample: HermitianSample | None = None
    stencil: StencilSet | None = None
    method: str = "policy"
    root_tol: float = 1e-12
    residual_tol: float = 1e-9
    max_sweeps: int = 100_000
    max_newton: int = 200
    damping: float | None = None
    init: str = "zero"
    # sparse direct solves below this many unknowns, AMG-preconditioned GMRES above
    direct_limit: int = 20_000

    def __post_init__(self):
        if self.root_tol <= 0 or self.residual_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_sweeps < 1 or self.max_newton < 1:
            raise ValueError("iteration limits must be >= 1")
        if self.method not in ("policy", "sweep"):
            raise ValueError(f"unknown method {self.method!r}")

    def resolve(self, n: int, width: int = 1) -> tuple[HermitianSample, StencilSet]:
        stencil = self.stencil or StencilSet.build(n, width)
        sample = self.sample or lattice_sample(n, width, stencil=stencil)
        return sample, stencil

    def descriptor(self) -> dict:
        return {"method": self.method, "root_tol": self.root_tol,
                "residual_tol": self.residual_tol, "max_sweeps": self.max_sweeps,
                "max_newton": self.max_newton, "damping": self.damping, "init": self.init}


@dataclass(frozen=True, eq=False)
class ExpRHS:
    """``F(u, x) = density(x) * exp(rate * (u - offset(x)))``, nondecreasing in ``u``."""

    density: np.ndarray
    rate: float = 0.0
    offset: np.ndarray | float = 0.0

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError("rate must be >= 0 so the RHS is nondecreasing")

    def restricted(self, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        dens = np.broadcast_to(np.asarray(self.density, dtype=float), mask.shape)[mask]
        off = np.broadcast_to(np.asarray(self.offset, dtype=float), mask.shape)[mask]
        if not np.isfinite(dens).all() or (dens < 0).any():
            raise ValueError("RHS density must be finite and nonnegative on the interior")
        return dens, off

    def value(self, u: np.ndarray, dens: np.ndarray, off: np.ndarray) -> np.ndarray:
        return dens * np.exp(np.clip(self.rate * (u - off), -EXP_CLAMP, EXP_CLAMP))


class DiscreteOperator:
    """Monotone ``min_H Delta_H^h`` restricted to the interior unknowns of a mask.

    Boundary values enter as constants. ``A[s]`` is the off-centre part of member
    ``s`` and ``C[s]`` its (positive) centre weight, so
    ``Delta_{H_s}^h u = A[s](u) - C[s] u(x)``.
    """

    def __init__(self, mask: DomainMask, boundary_values: np.ndarray,
                 sample: HermitianSample, stencil: StencilSet):
        grid = mask.grid
        self.grid, self.mask = grid, mask
        self.sample, self.stencil = sample, stencil
        h2 = grid.spacing ** 2
        dirs, w = stencil.matrix(sample)
        self.dirs, self.w = dirs, w / h2
        interior = mask.interior
        self.interior = interior
        self.N = int(interior.sum())
        index = np.full(grid.shape, -1, dtype=np.int64)
        index[interior] = np.arange(self.N)
        self.index = index
        bvals = np.where(mask.boundary, boundary_values, np.nan)
        if not np.isfinite(bvals[mask.boundary]).all():
            raise ValueError("boundary data must be finite on BOUNDARY nodes")
        self.boundary_values = bvals
        # neighbour tables: interior index (>= 0) or -1 with a fixed boundary value
        self.nbr = np.empty((len(dirs), 2, self.N), dtype=np.int64)
        self.nbr_val = np.zeros((len(dirs), 2, self.N))
        for k, e in enumerate(dirs):
            for side, sgn in enumerate((1, -1)):
                off = tuple(sgn * t for t in e)
                idx = shift(index.astype(float), off, fill=-2.0)[interior].astype(np.int64)
                val = shift(bvals, off, fill=np.nan)[interior]
                bad = (idx < 0) & ~np.isfinite(val)
                if bad.any():
                    raise ValueError("stencil reaches an EXTERIOR node; mask width too small")
                self.nbr[k, side] = idx
                self.nbr_val[k, side] = np.where(idx >= 0, 0.0, val)
        self.C = 2.0 * self.w.sum(axis=1)

    def pair_sums(self, u: np.ndarray) -> np.ndarray:
        """``u(x+e) + u(x-e)`` for each direction, shape (K, N)."""
        ext = np.concatenate([u, [0.0]])
        got = ext[self.nbr]  # -1 -> the appended 0
        return (got + self.nbr_val).sum(axis=1)

    def off_centre(self, u: np.ndarray) -> np.ndarray:
        return self.w @ self.pair_sums(u)

    def apply(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``min_s Delta_{H_s}^h u`` and the minimizing member per node."""
        vals = self.off_centre(u) - self.C[:, None] * u[None, :]
        s = np.argmin(vals, axis=0)
        return vals[s, np.arange(self.N)], s

    def jacobian(self, policy: np.ndarray, diag_extra: np.ndarray) -> sp.csr_matrix:
        rows, cols, data = [np.arange(self.N)], [np.arange(self.N)], [-self.C[policy] - diag_extra]
        for k in range(len(self.dirs)):
            wk = self.w[policy, k]
            for side in range(2):
                nb = self.nbr[k, side]
                keep = (nb >= 0) & (wk > 0)
                rows.append(np.nonzero(keep)[0])
                cols.append(nb[keep])
                data.append(wk[keep])
        return sp.csr_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.N, self.N))

    def to_grid(self, u: np.ndarray) -> np.ndarray:
        out = np.where(self.mask.boundary, self.boundary_values, np.nan)
        out[self.interior] = u
        return out


@dataclass
class SolveResult:
    field: ScalarField
    converged: bool
    iterations: int
    residual: float
    trace: list[float]
    flags: list[str] = field(default_factory=list)

    def summary(self) -> dict:
        return {"converged": self.converged, "iterations": self.iterations,
                "residual": self.residual, "flags": list(self.flags)}


def _root_form(rhs: ExpRHS, u, dens, off, n):
    """``G = F^{1/n}`` and ``dG/du``."""
    g = dens ** (1.0 / n) * np.exp(np.clip(rhs.rate * (u - off) / n, -EXP_CLAMP, EXP_CLAMP))
    return g, g * rhs.rate / n


def _linear_solve(jac: sp.csr_matrix, b: np.ndarray, cfg: SolverConfig, ndim: int) -> np.ndarray:
    if jac.shape[0] <= cfg.direct_limit or ndim <= 2:
        return spla.spsolve(jac.tocsc(), b)
    import pyamg

    # -J is an M-matrix; classical AMG on it, GMRES absorbs the nonsymmetry of the policy rows
    ml = pyamg.ruge_stuben_solver((-jac).tocsr())
    x = ml.solve(-b, tol=1e-13, accel="gmres", maxiter=200)
    return x


def _node_roots(a, c, rhs: ExpRHS, dens, off, n, tol):
    """Solve ``a - c u = G(u)`` for each line; ``G = dens^{1/n} exp(rate (u - off)/n)``.

    The left side is decreasing and ``G`` nondecreasing convex, so Newton from
    ``u0 = a/c`` (where the residual is <= 0) decreases monotonically onto the
    root.
    """
    u = a / c
    if rhs.rate == 0.0:
        return (a - dens ** (1.0 / n)) / c
    k = rhs.rate / n
    root_dens = dens ** (1.0 / n)
    for _ in range(200):
        g = root_dens * np.exp(np.clip(k * (u - off), -EXP_CLAMP, EXP_CLAMP))
        r = a - c * u - g
        step = r / (c + k * g)
        u = u + step
        if np.max(np.abs(step)) <= tol * (1.0 + np.max(np.abs(u))):
            break
    return u


def solve_dirichlet(rhs: ExpRHS, boundary: ScalarField, config: SolverConfig | None = None,
                    init: ScalarField | np.ndarray | None = None) -> SolveResult:
    """Solve ``(dd^c phi)^n = F(phi, x)`` on ``boundary.mask`` with the values of
    ``boundary`` on BOUNDARY nodes as Dirichlet data.

    Returns the best iterate with a ``NONCONVERGED`` flag if the tolerance is
    not met within the iteration budget.
    """
    cfg = config or SolverConfig()
    mask, grid = boundary.mask, boundary.grid
    n = grid.n
    sample, stencil = cfg.resolve(n, mask.width)
    op = DiscreteOperator(mask, boundary.values, sample, stencil)
    dens, off = rhs.restricted(mask.interior)
    scale = max(1.0, float(np.max(np.abs(boundary.values[mask.boundary]), initial=0.0)))
    tol = cfg.residual_tol * scale

    if init is None:
        if cfg.init != "zero":
            raise ValueError(f"unknown initialization {cfg.init!r}")
        u = np.zeros(op.N)
    else:
        arr = init.values if isinstance(init, ScalarField) else np.asarray(init, dtype=float)
        u = np.array(arr[mask.interior], dtype=float)

    def residual(u):
        lhs, pol = op.apply(u)
        g, dg = _root_form(rhs, u, dens, off, n)
        return lhs - g, pol, dg

    trace: list[float] = []
    flags: list[str] = []
    converged = False
    it = 0
    if cfg.method == "policy":
        for it in range(1, cfg.max_newton + 1):
            r, pol, dg = residual(u)
            res = float(np.max(np.abs(r), initial=0.0))
            trace.append(res)
            if res <= tol:
                converged = True
                break
            jac = op.jacobian(pol, dg)
            du = _linear_solve(jac, -r, cfg, grid.ndim)
            if cfg.damping:
                du = cfg.damping * du
            u = u + du
        else:
            r, _, _ = residual(u)
            res = float(np.max(np.abs(r), initial=0.0))
            trace.append(res)
            converged = res <= tol
        it = len(trace) - 1  # Newton steps taken
    else:
        colors = _colors(mask)
        for it in range(1, cfg.max_sweeps + 1):
            for color in colors:
                a = op.off_centre(u)[:, color]
                roots = _node_roots(a, op.C[:, None], rhs, dens[color][None], off[color][None],
                                    n, cfg.root_tol)
                u[color] = roots.min(axis=0)
            r, _, _ = residual(u)
            res = float(np.max(np.abs(r), initial=0.0))
            trace.append(res)
            if res <= tol:
                converged = True
                break
    if not converged:
        flags.append("NONCONVERGED")
        log.warning("solver stopped at residual %.3e > %.3e", trace[-1], tol)
    values = op.to_grid(u)
    out = ScalarField(grid, values, mask)
    return SolveResult(out, converged, it, trace[-1] if trace else 0.0, trace, flags)


def _colors(mask: DomainMask) -> list[np.ndarray]:
    """Red/black classes (parity of the index sum) as boolean masks over interior unknowns."""
    idx = np.indices(mask.grid.shape).sum(axis=0) % 2
    par = idx[mask.interior]
    return [par == 0, par == 1]


def ma_residual(result_field: ScalarField, rhs: ExpRHS, config: SolverConfig | None = None) -> float:
    """Max-node ``|ma_inf(phi) - F(phi, x)|`` of a solved field."""
    cfg = config or SolverConfig()
    mask = result_field.mask
    sample, stencil = cfg.resolve(result_field.n, mask.width)
    op = DiscreteOperator(mask, result_field.values, sample, stencil)
    u = result_field.values[mask.interior]
    lhs, _ = op.apply(u)
    dens, off = rhs.restricted(mask.interior)
    n = result_field.n
    ma = np.maximum(lhs, 0.0) ** n
    return float(np.max(np.abs(ma - rhs.value(u, dens, off)), initial=0.0))


def solve_exponential(mu: ScalarField | np.ndarray, boundary: ScalarField,
                      config: SolverConfig | None = None, init=None) -> SolveResult:
    """Solve ``(dd^c phi)^n = e^phi mu`` with Dirichlet data from ``boundary``."""
    vals = mu.values if isinstance(mu, ScalarField) else np.asarray(mu, dtype=float)
    live = boundary.mask.interior
    v = np.broadcast_to(vals, boundary.grid.shape)[live]
    if (v < 0).any() or not np.isfinite(v).all():
        raise ValueError("mu must be a finite nonnegative density")
    return solve_dirichlet(ExpRHS(np.where(live, np.broadcast_to(vals, live.shape), 0.0), 1.0),
                           boundary, config, init)


# ---------------------------------------------------------------- ladder


def sandwich_offsets(j: float, delta: float) -> tuple[float, float]:
    """Lower and upper offsets ``log(1+delta)/j`` and ``-log(delta)/j``."""
    if j < 1 or not 0 < delta < 1:
        raise ValueError("need j >= 1 and 0 < delta < 1")
    return math.log1p(delta) / j, -math.log(delta) / j


@dataclass
class LadderConfig:
    js: Sequence[float] = (5, 10, 20)
    deltas: Sequence[float] = (0.1, 0.5)
    tau_factor: float = 5.0
    record_margins: bool = True

    def __post_init__(self):
        for j in self.js:
            if j < 1:
                raise ValueError("ladder needs j >= 1")
        for d in self.deltas:
            if not 0 < d < 1:
                raise ValueError("ladder needs delta in (0, 1)")


@dataclass
class LadderRung:
    j: float
    delta: float
    lower_offset: float
    upper_offset: float
    min_margin: float  # min over nodes of phi_jd - (phi - lower - tau)
    max_margin: float  # max over nodes of phi_jd - (phi + upper + tau)
    inside_fraction: float
    deviation: float
    solve: SolveResult

    def row(self) -> dict:
        return {"j": self.j, "delta": self.delta, "lower_offset": self.lower_offset,
                "upper_offset": self.upper_offset, "observed_min_margin": self.min_margin,
                "observed_max_margin": self.max_margin, "inside_fraction": self.inside_fraction,
                "deviation": self.deviation, "converged": self.solve.converged}


@dataclass
class LadderResult:
    rungs: list[LadderRung]
    tau: float

    def all_inside(self) -> bool:
        return all(r.inside_fraction == 1.0 for r in self.rungs)

    def deviation_ratios(self) -> list[dict]:
        """Deviation ratio for every pair (j, 2j) present in the ladder."""
        out = []
        by = {(r.j, r.delta): r for r in self.rungs}
        for (j, d), r in by.items():
            if (2 * j, d) in by:
                out.append({"j": j, "delta": d, "ratio": by[(2 * j, d)].deviation / r.deviation})
        return out


def run_ladder(phi: ScalarField, f: ScalarField | np.ndarray, ladder: LadderConfig | None = None,
               config: SolverConfig | None = None, *, ma_density: np.ndarray | None = None,
               check_subsolution=True) -> LadderResult:
    """Solve ``(dd^c u)^n = e^{j(u - phi)} {f + delta (dd^c phi)^n}`` for each (j, delta).

    Boundary data are the values of ``phi`` on the BOUNDARY shell. The
    ``(dd^c phi)^n`` density is frozen data (``ma_det`` of ``phi`` unless given).
    """
    ladder = ladder or LadderConfig()
    cfg = config or SolverConfig()
    mask, grid = phi.mask, phi.grid
    fv = f.values if isinstance(f, ScalarField) else np.broadcast_to(np.asarray(f, float), grid.shape)
    if ma_density is None:
        ma_density = np.maximum(np.nan_to_num(ma_det(phi).field.values), 0.0)
    if check_subsolution:
        from .subsolution import check_classical_smoothed

        verdict = check_subsolution if isinstance(check_subsolution, dict) else {}
        rec = check_classical_smoothed(phi, f if isinstance(f, ScalarField) else
                                       phi.with_values(fv), **verdict)
        if rec.verdict != "PASS":
            raise ValueError("ladder precondition failed: phi is not a subsolution for f")
    tau = ladder.tau_factor * grid.spacing
    interior = mask.interior
    phi_i = phi.values[interior]
    rungs = []
    prev = None
    for j in ladder.js:
        for d in ladder.deltas:
            lo, up = sandwich_offsets(j, d)
            dens = np.where(interior, fv + d * ma_density, 0.0)
            rhs = ExpRHS(dens, float(j), np.where(interior, phi.values, 0.0))
            res = solve_dirichlet(rhs, phi, cfg, init=prev)
            prev = res.field
            u = res.field.values[interior]
            low_margin = u - (phi_i - lo - tau)
            up_margin = u - (phi_i + up + tau)
            inside = (low_margin >= 0) & (up_margin <= 0)
            rungs.append(LadderRung(j, d, lo, up, float(low_margin.min()), float(up_margin.max()),
                                    float(inside.mean()), float(np.max(np.abs(u - phi_i))), res))
    return LadderResult(rungs, tau)


def write_ladder_csv(result: LadderResult, path) -> None:
    rows = [r.row() for r in result.rungs]
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]))
        wr.writeheader()
        wr.writerows(rows)


def write_trace_csv(result: SolveResult, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iteration", "residual"])
        for i, r in enumerate(result.trace):
            wr.writerow([i, repr(r)])


# ---------------------------------------------------------------- stability


def stability_probe(f: ScalarField, perturbation: np.ndarray, etas: Sequence[float],
                    config: SolverConfig | None = None) -> dict:
    """Fit the log-log slope of ``||phi_{f + eta dF} - phi_f||_inf`` against ``||eta dF||_L2``.

    Zero Dirichlet data on ``f.mask``.
    """
    cfg = config or SolverConfig()
    mask, grid = f.mask, f.grid
    zero = ScalarField(grid, np.where(mask.live, 0.0, np.nan), mask)
    base_dens = np.where(mask.interior, f.values, 0.0)
    base = solve_dirichlet(ExpRHS(base_dens), zero, cfg)
    if not base.converged:
        raise RuntimeError("base solve did not converge")
    pert = np.where(mask.interior, np.asarray(perturbation, float), 0.0)
    sizes, disps = [], []
    for eta in etas:
        res = solve_dirichlet(ExpRHS(np.maximum(base_dens + eta * pert, 0.0)), zero, cfg, init=base.field)
        if not res.converged:
            raise RuntimeError(f"perturbed solve eta={eta} did not converge")
        diff = res.field.values[mask.interior] - base.field.values[mask.interior]
        sizes.append(float(np.sqrt(np.sum((eta * pert) ** 2) * grid.cell_volume)))
        disps.append(float(np.max(np.abs(diff), initial=0.0)))
    sizes_a, disps_a = np.array(sizes), np.array(disps)
    if np.all(sizes_a > 0) and np.all(disps_a > 0) and len(sizes) >= 2:
        slope = float(np.polyfit(np.log(sizes_a), np.log(disps_a), 1)[0])
    else:
        slope = float("nan")
    return {"etas": list(etas), "l2_sizes": sizes, "displacements": disps, "slope": slope,
            "predicted_exponent": 1.0 / grid.n}


# ---------------------------------------------------------------- energies


@dataclass
class EnergyReport:
    E1: float
    F_mu: float
    el_residuals: list[float]
    relative_residuals: list[float]
    critical_residuals: list[float]

    def as_dict(self) -> dict:
        return {"E1": self.E1, "F_mu": self.F_mu, "el_residuals": self.el_residuals,
                "relative_residuals": self.relative_residuals,
                "critical_residuals": self.critical_residuals}


def _e1_raw(values: np.ndarray, phi: ScalarField) -> float:
    trial = ScalarField(phi.grid, np.where(phi.mask.live, values, np.nan), phi.mask)
    ma = ma_det(trial).field.values
    inner = phi.mask.interior
    return float(np.sum(values[inner] * ma[inner]) * phi.grid.cell_volume / (phi.n + 1))


def energy_E1(phi: ScalarField) -> float:
    """``1/(n+1) sum phi det Q(phi) h^{2n}`` over interior nodes."""
    if (phi.interior_values() > 0).any():
        raise ValueError("energy is defined for phi <= 0 on the interior")
    return _e1_raw(phi.values, phi)


def functional_F(phi: ScalarField, mu: ScalarField | np.ndarray,
                 probes: Sequence[np.ndarray] = (), t: float | None = None) -> EnergyReport:
    """``F_mu = E1 - sum e^phi mu h^{2n}`` plus directional-derivative checks.

    For each probe direction ``v`` (supported away from the boundary shell)
    records the gap between the fourth-order difference quotient of ``E1`` and
    the pairing ``sum v det Q(phi) h^{2n}``, and the ``F_mu`` derivative
    ``sum v (det Q(phi) - e^phi mu) h^{2n}``.
    """
    e1 = energy_E1(phi)
    grid, mask = phi.grid, phi.mask
    inner = mask.interior
    muv = mu.values if isinstance(mu, ScalarField) else np.broadcast_to(np.asarray(mu, float), grid.shape)
    if (muv[inner] < 0).any():
        raise ValueError("mu must be nonnegative")
    vol = grid.cell_volume
    F = e1 - float(np.sum(np.exp(phi.values[inner]) * muv[inner]) * vol)
    ma = ma_det(phi).field.values
    t = 1e-4 * phi.scale() if t is None else t
    el, rel, crit = [], [], []
    for v in probes:
        v = np.where(mask.live, np.asarray(v, float), 0.0)
        from .field_core import erode
        if (v[~erode(inner, 2 * mask.width)] != 0).any():
            raise ValueError("probe direction must vanish near the boundary")
        base = np.where(mask.live, phi.values, 0.0)
        # fourth-order central quotient: exact for E1 along a line when n <= 3
        d1 = _e1_raw(base + t * v, phi) - _e1_raw(base - t * v, phi)
        d2 = _e1_raw(base + 2 * t * v, phi) - _e1_raw(base - 2 * t * v, phi)
        fd = (8.0 * d1 - d2) / (12.0 * t)
        pairing = float(np.sum(v[inner] * ma[inner]) * vol)
        el.append(abs(fd - pairing))
        rel.append(abs(fd - pairing) / max(abs(pairing), 1e-300))
        crit.append(pairing - float(np.sum(v[inner] * np.exp(phi.values[inner]) * muv[inner]) * vol))
    return EnergyReport(e1, F, el, rel, crit)
