"""Discrete complex Hessians, the operators Delta_H, Monge-Ampere densities and
distributional pairings on lattice fields.

The complex Hessian is stored as the Hermitian matrix

    Q[j, k] = d^2 phi / (dz_k d conj(z_j))
            = 1/4 [ (phi_{x_j x_k} + phi_{y_j y_k}) + i (phi_{x_k y_j} - phi_{x_j y_k}) ],

so that ``v* Q v`` is the Levi form in direction ``v`` and
``tr(HQ) = sum_{jk} h_jk d^2 phi / dz_j d conj(z_k)``.

Two realizations of ``Delta_H phi = tr(HQ)/n`` are provided: a consistent one
built from central differences (any H) and a monotone one built from
nonnegative combinations of lattice second differences (H whose eigenvectors
are lattice directions). In the monotone form each unit eigenvector ``v`` with
eigenvalue ``lam`` contributes ``lam/4 (D^2_v + D^2_{iv})``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .field_core import DomainMask, Grid, ScalarField, shift
from .hermitian_cone import (HermitianSample, det, eigen, exact_minimizer, hermitize,
                             mixed_discriminant, trace_pair)

__all__ = [
    "HessianField",
    "StencilSet",
    "MAResult",
    "complex_hessian",
    "hessian_array",
    "delta_H_consistent",
    "delta_H_monotone",
    "ma_det",
    "ma_inf",
    "mixed_ma",
    "pair_distribution",
    "lattice_sample",
    "operator_mask",
    "signed_ma",
]

DEFAULT_ANGLE_TOL = 1e-8


def _unit(axis: int, ndim: int, step: int = 1) -> tuple[int, ...]:
    e = [0] * ndim
    e[axis] = step
    return tuple(e)


def _second_difference(a: np.ndarray, e, h: float, fill=np.nan) -> np.ndarray:
    """``(a(x+e) + a(x-e) - 2 a(x)) / h^2`` for an integer lattice offset ``e``."""
    e = tuple(int(t) for t in e)
    neg = tuple(-t for t in e)
    return (shift(a, e, fill) + shift(a, neg, fill) - 2.0 * a) / (h * h)


def _real_hessian(a: np.ndarray, h: float, fill=np.nan) -> np.ndarray:
    """Central-difference real Hessian, shape ``a.shape + (d, d)``."""
    d = a.ndim
    out = np.empty(a.shape + (d, d))
    for p in range(d):
        out[..., p, p] = _second_difference(a, _unit(p, d), h, fill)
        for q in range(p + 1, d):
            pp = [0] * d
            pp[p], pp[q] = 1, 1
            pm = [0] * d
            pm[p], pm[q] = 1, -1
            mixed = (shift(a, pp, fill) + shift(a, [-t for t in pp], fill)
                     - shift(a, pm, fill) - shift(a, [-t for t in pm], fill)) / (4.0 * h * h)
            out[..., p, q] = mixed
            out[..., q, p] = mixed
    return out


def hessian_array(a: np.ndarray, h: float, n: int, fill=np.nan) -> np.ndarray:
    """Complex Hessian matrices ``Q`` at every node of a raw array (``fill`` outside the grid)."""
    r = _real_hessian(a, h, fill)
    q = np.empty(a.shape + (n, n), dtype=complex)
    for j in range(n):
        xj, yj = 2 * j, 2 * j + 1
        for k in range(n):
            xk, yk = 2 * k, 2 * k + 1
            re = r[..., xj, xk] + r[..., yj, yk]
            im = r[..., xk, yj] - r[..., xj, yk]
            q[..., j, k] = 0.25 * (re + 1j * im)
    return q


def operator_mask(mask: DomainMask) -> DomainMask:
    """Mask for operator outputs: live exactly on the input INTERIOR."""
    return DomainMask.from_live(mask.grid, mask.interior, mask.width, kind="derived",
                                radius=mask.radius)


@dataclass(frozen=True, eq=False)
class HessianField:
    grid: Grid
    mask: DomainMask
    q: np.ndarray  # grid.shape + (n, n); NaN off the interior

    def at(self, index) -> np.ndarray:
        return self.q[tuple(index)]

    def interior_matrices(self) -> np.ndarray:
        return self.q[self.mask.interior]

    def eigenvalues(self) -> np.ndarray:
        """Nondecreasing eigenvalues at interior nodes, shape (count, n)."""
        return np.linalg.eigvalsh(self.interior_matrices())


def complex_hessian(phi: ScalarField) -> HessianField:
    """Central-difference complex Hessian on the INTERIOR of ``phi``'s mask.

    Exact (to round-off) on polynomials of degree <= 3.
    """
    grid, mask = phi.grid, phi.mask
    q = hessian_array(phi.values, grid.spacing, grid.n)
    interior = mask.interior
    if not np.isfinite(q[interior]).all():
        raise ValueError("Hessian stencil reaches an EXTERIOR node")
    q[~interior] = np.nan
    q = hermitize(q)
    return HessianField(grid, mask, q)


def _field_from_interior(phi: ScalarField, values: np.ndarray) -> ScalarField:
    out_mask = operator_mask(phi.mask)
    return ScalarField(phi.grid, np.where(out_mask.live, values, np.nan), out_mask)


def delta_H_consistent(phi: ScalarField, H, hess: HessianField | None = None) -> ScalarField:
    """``(1/n) tr(H Q(x))`` with the central-difference Hessian."""
    hess = complex_hessian(phi) if hess is None else hess
    n = phi.grid.n
    H = hermitize(H)
    vals = np.full(phi.grid.shape, np.nan)
    vals[phi.mask.interior] = trace_pair(H[None], hess.interior_matrices()) / n
    return _field_from_interior(phi, vals)


# ---------------------------------------------------------------- stencils


def _as_complex(e: np.ndarray) -> np.ndarray:
    e = np.asarray(e, dtype=float)
    return e[..., 0::2] + 1j * e[..., 1::2]


def _times_i(e) -> tuple[int, ...]:
    """Lattice vector of ``i * v`` for the real representation ``e`` of ``v``."""
    e = list(e)
    out = []
    for j in range(0, len(e), 2):
        out += [-e[j + 1], e[j]]
    return tuple(out)


def _canonical(e) -> tuple[int, ...]:
    e = tuple(int(t) for t in e)
    for t in e:
        if t != 0:
            return e if t > 0 else tuple(-s for s in e)
    return e


def _lattice_lines(n: int, width: int) -> list[tuple[int, ...]]:
    """Primitive lattice vectors of l-inf norm <= width, one per complex line."""
    reps: list[tuple[int, ...]] = []
    units: list[np.ndarray] = []
    rng = range(-width, width + 1)
    for e in itertools.product(rng, repeat=2 * n):
        if not any(e) or math.gcd(*[abs(t) for t in e]) != 1:
            continue
        v = _as_complex(e)
        v = v / np.linalg.norm(v)
        if any(abs(np.vdot(u, v)) > 1 - 1e-12 for u in units):
            continue
        units.append(v)
        reps.append(_canonical(e))
    return reps


@dataclass(frozen=True, eq=False)
class StencilSet:
    """Lattice directions available to the monotone scheme.

    ``lines`` are real representations of unit complex directions (one per
    complex line); every H is written as ``sum_m lam_m v_m v_m*`` with the
    ``v_m`` snapped to ``lines``.
    """

    n: int
    width: int
    lines: tuple[tuple[int, ...], ...]
    angle_tol: float = DEFAULT_ANGLE_TOL
    _units: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        u = _as_complex(np.array(self.lines))
        object.__setattr__(self, "_units", u / np.linalg.norm(u, axis=1, keepdims=True))

    @classmethod
    def build(cls, n: int, width: int = 1, angle_tol: float = DEFAULT_ANGLE_TOL) -> "StencilSet":
        return cls(n, width, tuple(_lattice_lines(n, width)), angle_tol)

    def snap(self, v) -> tuple[tuple[int, ...], float]:
        """Nearest stencil line to the unit vector ``v`` and its angular error."""
        v = np.asarray(v, dtype=complex)
        v = v / np.linalg.norm(v)
        proj = self._units.conj() @ v
        i = int(np.argmax(np.abs(proj)))
        # arcsin of the residual is well conditioned near zero angle, arccos is not
        resid = np.linalg.norm(v - proj[i] * self._units[i])
        angle = float(np.arcsin(min(1.0, resid)))
        return self.lines[i], angle

    def represent(self, H) -> dict[tuple[int, ...], float]:
        """Weights ``w_e >= 0`` with ``Delta_H phi = sum_e w_e D^2_e phi`` (``D^2_e`` unscaled by |e|).

        Raises ``ValueError`` if an eigenvector of H has no stencil line within
        the angular tolerance.
        """
        H = hermitize(H)
        n = self.n
        if H.shape != (n, n):
            raise ValueError("matrix dimension does not match stencil")
        lam, vecs = eigen(H)
        if lam[0] <= 0:
            raise ValueError("monotone Delta_H needs a positive definite H")
        if lam[-1] - lam[0] <= 1e-12 * lam[-1]:
            vecs = np.eye(n, dtype=complex)
        weights: dict[tuple[int, ...], float] = {}
        for m in range(n):
            e, angle = self.snap(vecs[:, m])
            if angle > self.angle_tol:
                raise ValueError(f"no stencil direction within {self.angle_tol:g} rad of an "
                                 f"eigenvector of H (best {angle:.3g})")
            norm2 = float(np.dot(e, e))
            c = lam[m] / (4.0 * n * norm2)
            for d in (e, _canonical(_times_i(e))):
                weights[d] = weights.get(d, 0.0) + c
        return weights

    def matrix(self, sample: HermitianSample) -> tuple[list[tuple[int, ...]], np.ndarray]:
        """Directions and the (members x directions) weight matrix for a whole sample."""
        reps = [self.represent(H) for H in sample.matrices]
        dirs = sorted({d for r in reps for d in r})
        index = {d: i for i, d in enumerate(dirs)}
        w = np.zeros((len(reps), len(dirs)))
        for s, r in enumerate(reps):
            for d, c in r.items():
                w[s, index[d]] = c
        return dirs, w

    def descriptor(self) -> dict:
        return {"n": self.n, "width": self.width, "lines": len(self.lines),
                "angle_tol": self.angle_tol}


def lattice_sample(n: int, width: int = 1, ratios=(2.0, 4.0), stencil: StencilSet | None = None) -> HermitianSample:
    """Members of the normalized cone whose eigenvectors are lattice directions.

    ``H = t v v* + t^{-1} w w*`` for every stencil line ``v`` (``w`` its
    orthogonal partner) and every ratio ``t``; the identity is included. For
    ``n = 1`` the cone is ``{1}``.
    """
    if n == 1:
        return HermitianSample(np.ones((1, 1, 1), dtype=complex), 1.0, None, "lattice(n=1)")
    if n != 2:
        raise ValueError("lattice samples are provided for n <= 2")
    stencil = StencilSet.build(n, width) if stencil is None else stencil
    mats = [np.eye(2, dtype=complex)]
    for e in stencil.lines:
        v = _as_complex(e)
        v = v / np.linalg.norm(v)
        w = np.array([-np.conj(v[1]), np.conj(v[0])])
        for t in ratios:
            mats.append(hermitize(t * np.outer(v, v.conj()) + np.outer(w, w.conj()) / t))
    kept: list[np.ndarray] = []
    for m in mats:
        if not any(np.max(np.abs(m - k)) < 1e-12 for k in kept):
            kept.append(m)
    kappa = max(ratios) ** 2 if ratios else 1.0
    return HermitianSample(np.array(kept), float(kappa), None,
                           f"lattice(width={width}, ratios={list(ratios)})")


def directional_differences(values: np.ndarray, dirs, h: float) -> np.ndarray:
    """Stack of second differences ``phi(x+e)+phi(x-e)-2phi(x)`` / h^2 for each direction."""
    return np.stack([_second_difference(values, e, h) for e in dirs])


def delta_H_monotone(phi: ScalarField, H, stencil: StencilSet) -> ScalarField:
    """Monotone wide-stencil ``Delta_H``: nonnegative off-centre weights, negative centre."""
    weights = stencil.represent(H)
    h = phi.grid.spacing
    vals = np.zeros(phi.grid.shape)
    for e, c in weights.items():
        vals = vals + c * _second_difference(phi.values, e, h)
    if not np.isfinite(vals[phi.mask.interior]).all():
        raise ValueError("stencil reaches an EXTERIOR node; widen the mask")
    return _field_from_interior(phi, vals)


# ---------------------------------------------------------------- Monge-Ampere


class MAResult(NamedTuple):
    field: ScalarField
    flag: np.ndarray  # bool, interior nodes of the input grid
    extra: np.ndarray  # lambda_min (ma_det) or argmin member index (ma_inf)


def default_tol_psd(phi: ScalarField) -> float:
    return 1e-8 * phi.scale()


def ma_det(phi: ScalarField, tol_psd: float | None = None, hess: HessianField | None = None) -> MAResult:
    """Pointwise ``det Q``; ``flag`` marks nodes with ``lambda_min >= -tol_psd``."""
    hess = complex_hessian(phi) if hess is None else hess
    tol_psd = default_tol_psd(phi) if tol_psd is None else tol_psd
    interior = phi.mask.interior
    qs = hess.interior_matrices()
    lam_min = np.full(phi.grid.shape, np.nan)
    psd = np.zeros(phi.grid.shape, bool)
    vals = np.full(phi.grid.shape, np.nan)
    vals[interior] = det(qs)
    lam_min[interior] = np.linalg.eigvalsh(qs)[:, 0]
    psd[interior] = lam_min[interior] >= -tol_psd
    return MAResult(_field_from_interior(phi, vals), psd, lam_min)


def signed_ma(hess: HessianField) -> np.ndarray:
    """``prod max(lam,0) + min(lam_min,0) |lam_max|^{n-1}`` at interior nodes.

    Equals ``det Q`` when Q is psd and is negative wherever Q has a negative
    eigenvalue, so one number carries both the Monge-Ampere value and the
    plurisubharmonicity defect.
    """
    lam = hess.eigenvalues()
    n = lam.shape[-1]
    pos = np.prod(np.maximum(lam, 0.0), axis=-1)
    pen = np.minimum(lam[:, 0], 0.0) * np.abs(lam[:, -1]) ** (n - 1)
    out = np.full(hess.grid.shape, np.nan)
    out[hess.mask.interior] = pos + pen
    return out


def ma_inf(phi: ScalarField, sample: HermitianSample, stencil: StencilSet, *,
           augment: bool = False) -> MAResult:
    """Monge-Ampere as ``(min_H Delta_H phi)^n`` over a lattice-representable sample.

    ``flag`` marks nodes where the minimum is negative (phi not psh there);
    the output is ``max(v, 0)^n``. With ``augment=True`` the per-node exact
    minimizer ``(det Q)^{1/n} Q^{-1}`` of the central-difference Hessian joins
    the sample at every node where Q is positive definite; those members are
    evaluated with the consistent operator since they are rarely lattice
    exact.
    """
    n = phi.grid.n
    h = phi.grid.spacing
    dirs, w = stencil.matrix(sample)
    d2 = directional_differences(phi.values, dirs, h)
    interior = phi.mask.interior
    d2i = d2[:, interior]
    if not np.isfinite(d2i).all():
        raise ValueError("stencil reaches an EXTERIOR node; widen the mask")
    per_member = w @ d2i
    idx = np.argmin(per_member, axis=0)
    v = per_member[idx, np.arange(per_member.shape[1])]
    if augment:
        qs = complex_hessian(phi).interior_matrices()
        lam = np.linalg.eigvalsh(qs)
        pd = lam[:, 0] > 0
        root = np.where(pd, np.prod(np.where(pd[:, None], lam, 1.0), axis=-1) ** (1.0 / n), np.inf)
        better = root < v
        v = np.where(better, root, v)
        idx = np.where(better, -1, idx)
    vals = np.full(phi.grid.shape, np.nan)
    vals[interior] = np.maximum(v, 0.0) ** n
    neg = np.zeros(phi.grid.shape, bool)
    neg[interior] = v < 0
    arg = np.full(phi.grid.shape, -2, dtype=int)
    arg[interior] = idx
    return MAResult(_field_from_interior(phi, vals), neg, arg)


def mixed_ma(*phis: ScalarField) -> ScalarField:
    """Density of ``dd^c phi_1 ^ ... ^ dd^c phi_n``: mixed discriminant of the Hessians."""
    if not phis:
        raise ValueError("need n fields")
    first = phis[0]
    n = first.grid.n
    if len(phis) != n:
        raise ValueError(f"mixed_ma needs exactly n={n} fields")
    for p in phis[1:]:
        if p.grid != first.grid:
            raise ValueError("fields live on different grids")
    interior = first.mask.interior
    for p in phis[1:]:
        interior = interior & p.mask.interior
    hs = [complex_hessian(p).q[interior] for p in phis]
    vals = np.full(first.grid.shape, np.nan)
    vals[interior] = mixed_discriminant(*hs)
    live = interior
    mask = DomainMask.from_live(first.grid, live, first.mask.width, kind="derived",
                                radius=first.mask.radius)
    return ScalarField(first.grid, np.where(live, vals, np.nan), mask)


# ---------------------------------------------------------------- distributions


def apply_delta_H(values: np.ndarray, H, h: float, n: int) -> np.ndarray:
    """Consistent ``Delta_H`` of a raw array that vanishes off the grid."""
    q = hessian_array(values, h, n, fill=0.0)
    return trace_pair(hermitize(H)[None], q.reshape(-1, n, n)).reshape(values.shape) / n


def pair_distribution(phi: ScalarField, H, psi: np.ndarray, f_root: ScalarField | np.ndarray) -> float:
    """``sum_x [phi Delta_H psi - f^{1/n} psi] h^{2n}`` with the operator on the test function.

    ``psi`` must be nonnegative with support inside the interior shrunk by
    the stencil width, so ``Delta_H psi`` only touches interior nodes.
    """
    psi = np.asarray(psi, dtype=float)
    grid = phi.grid
    if psi.shape != grid.shape:
        raise ValueError("test function shape does not match grid")
    if (psi < 0).any():
        raise ValueError("test function must be nonnegative")
    from .field_core import dilate, erode

    safe = erode(phi.mask.interior, phi.mask.width)
    support = psi > 0
    if (support & ~safe).any():
        raise ValueError("test function support touches the stencil margin")
    lap = apply_delta_H(psi, H, grid.spacing, grid.n)
    reach = dilate(support, phi.mask.width)
    fr = f_root.values if isinstance(f_root, ScalarField) else np.asarray(f_root, dtype=float)
    fr = np.broadcast_to(fr, grid.shape)
    phiv = np.where(reach, phi.values, 0.0)
    total = np.sum(phiv * np.where(reach, lap, 0.0)) - np.sum(np.where(support, fr * psi, 0.0))
    return float(total * grid.cell_volume)
