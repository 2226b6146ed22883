"""Checks of ``(dd^c phi)^n >= f dV`` in three senses, and their cross-validation.

* ``classical_smoothed``: pointwise ``det Q(phi * chi_eps) >= (f^{1/n} * chi_eps)^n``
  on the shrunken domain for every radius of an eps ladder.
* ``distributional``: ``sum psi (Delta_H phi - f^{1/n}) >= 0`` for every member
  ``H`` of a cone sample and every bump ``psi`` of a test-function family.
* ``pluripotential``: the smoothed check along the whole ladder plus weak
  pairings of ``det Q(phi_eps)`` against the test family at the two smallest
  radii, with a stabilization requirement between them.

Margins are reported in the units of the inequality (densities for the first
and third sense, roots for the second) and compared with a tolerance that
scales with the field: a check FAILs only when its worst margin is below
``-2 tol``; margins in ``[-2 tol, tol)`` give PASS with a ``NEAR_EQUALITY`` flag.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage, signal

from .diff_ops import complex_hessian, mixed_ma, signed_ma
from .field_core import Grid, ScalarField, erode
from .hermitian_cone import HermitianSample, bounded_minimizer, hermitize, sample_cone
from .mollifier import convolve, make_kernel

__all__ = [
    "PASS",
    "FAIL",
    "INCONCLUSIVE",
    "Tolerance",
    "CheckRecord",
    "SubsolutionReport",
    "TestFunctionFamily",
    "GeneralizedRHS",
    "default_eps",
    "default_check_sample",
    "check_classical_smoothed",
    "check_distributional",
    "check_pluripotential",
    "check_equivalence",
    "check_mixed",
    "check_generalized",
    "jensen_gap",
]

PASS, FAIL, INCONCLUSIVE = "PASS", "FAIL", "INCONCLUSIVE"
SENSES = ("pluripotential", "classical_smoothed", "distributional")
EXP_CLAMP = 700.0
STABILIZATION_LIMIT = 0.2


# ---------------------------------------------------------------- tolerances


@dataclass(frozen=True)
class Tolerance:
    """``tol = (c1 (h/L) + c2 (h/L)^2) * sigma^p``.

    ``sigma = osc(phi) / L^2`` is the curvature scale of the field and ``p``
    the homogeneity of the compared quantity (``n`` for densities, 1 for
    roots), so rescaling ``phi`` by ``c`` and ``f`` by ``c^n`` rescales
    tolerances exactly like margins.
    """

    c1: float = 0.05
    c2: float = 1.0

    def __post_init__(self):
        if self.c1 < 0 or self.c2 < 0:
            raise ValueError("tolerance constants must be nonnegative")

    def base(self, grid: Grid) -> float:
        r = grid.spacing / grid.extent
        return self.c1 * r + self.c2 * r * r

    def value(self, grid: Grid, sigma: float, power: float) -> float:
        return self.base(grid) * sigma ** power

    def descriptor(self) -> dict:
        return {"c1": self.c1, "c2": self.c2, "model": "(c1*h/L + c2*(h/L)^2) * sigma^p",
                "sigma": "osc(phi)/L^2"}


def field_sigma(phi: ScalarField) -> float:
    return phi.scale() / phi.grid.extent ** 2


def _verdict(worst: float, tol: float) -> tuple[str, list[str]]:
    if worst < -2.0 * tol:
        return FAIL, []
    if worst < tol:
        return PASS, ["NEAR_EQUALITY"]
    return PASS, []


# ---------------------------------------------------------------- report types


@dataclass
class CheckRecord:
    sense: str
    verdict: str
    worst: float
    witness: dict | None
    tolerance: float
    parameters: dict
    flags: list[str] = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.verdict not in (PASS, FAIL, INCONCLUSIVE):
            raise ValueError(f"unknown verdict {self.verdict!r}")
        if self.verdict == FAIL and not self.witness:
            raise ValueError("a FAIL verdict needs a witness")

    def to_dict(self) -> dict:
        return {"sense": self.sense, "verdict": self.verdict,
                "worst_violation": {"value": _num(self.worst), "witness": _clean(self.witness)},
                "tolerance": self.tolerance, "parameters": _clean(self.parameters),
                "flags": list(self.flags), "details": _clean(self.details)}


@dataclass
class SubsolutionReport:
    records: dict[str, CheckRecord]
    context: dict = field(default_factory=dict)

    @property
    def verdicts(self) -> dict[str, str]:
        return {k: r.verdict for k, r in self.records.items()}

    @property
    def overall(self) -> str:
        """``CONSISTENT`` / ``INCONSISTENT`` / ``INCONCLUSIVE``."""
        vs = set(self.verdicts.values())
        if INCONCLUSIVE in vs:
            return INCONCLUSIVE
        return "CONSISTENT" if len(vs) == 1 else "INCONSISTENT"

    @property
    def agreed(self) -> str | None:
        vs = set(self.verdicts.values())
        return vs.pop() if len(vs) == 1 else None

    def disagreements(self) -> list[dict]:
        if self.overall != "INCONSISTENT":
            return []
        return [{"sense": k, "verdict": r.verdict, "worst": _num(r.worst), "tolerance": r.tolerance}
                for k, r in self.records.items()]

    def margins(self) -> list[dict]:
        return [{"sense": k, "worst": _num(r.worst), "tolerance": r.tolerance}
                for k, r in self.records.items()]

    def to_dict(self) -> dict:
        return {"overall": self.overall, "verdicts": self.verdicts,
                "disagreements": self.disagreements(),
                "checks": {k: r.to_dict() for k, r in self.records.items()},
                "context": _clean(self.context)}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else repr(x)


def _clean(obj):
    """Make nested structures JSON-safe (numpy scalars, tuples, non-finite floats)."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


# ---------------------------------------------------------------- inputs


def default_eps(grid: Grid, multiples: Sequence[float] = (4.0, 3.0, 2.0)) -> list[float]:
    return [m * grid.spacing for m in multiples]


def default_check_sample(n: int, count: int = 64, kappa_max: float = 100.0, seed: int = 0) -> HermitianSample:
    return sample_cone(n, count, kappa_max=kappa_max, seed=seed)


def _as_density(phi: ScalarField, f) -> ScalarField:
    if isinstance(f, ScalarField):
        if f.grid != phi.grid:
            raise ValueError("density lives on a different grid")
        vals = f.values
    else:
        vals = np.broadcast_to(np.asarray(f, dtype=float), phi.grid.shape)
    live = phi.mask.live
    v = np.where(live, vals, np.nan)
    if not np.isfinite(v[live]).all():
        raise ValueError("density must be finite at live nodes")
    if (v[live] < 0).any():
        raise ValueError("density must be nonnegative")
    return ScalarField(phi.grid, v, phi.mask)


def _check_eps(eps_list: Sequence[float]) -> list[float]:
    eps_list = [float(e) for e in eps_list]
    if not eps_list:
        raise ValueError("eps list is empty")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps list must be strictly decreasing")
    return eps_list


# ---------------------------------------------------------------- smoothing levels


@dataclass
class _Level:
    eps: float
    phi: ScalarField
    lhs: np.ndarray  # signed Monge-Ampere density, NaN off the level interior
    rhs: np.ndarray
    lam_min: np.ndarray


def _rhs_root_mollified(phi, f_root, kernel):
    return convolve(f_root, kernel).values


def _make_level(phi: ScalarField, eps: float, rhs_fn, profile: str) -> _Level:
    kernel = make_kernel(phi.grid, eps, profile)
    try:
        phe = convolve(phi, kernel)
    except ValueError as exc:
        raise ValueError(f"mask exhausted at eps={eps:.4g}: {exc}") from None
    if not phe.mask.interior.any():
        raise ValueError(f"mask exhausted at eps={eps:.4g}")
    hess = complex_hessian(phe)
    lhs = signed_ma(hess)
    lam = np.full(phi.grid.shape, np.nan)
    lam[phe.mask.interior] = hess.eigenvalues()[:, 0]
    rhs = rhs_fn(phe, kernel)
    return _Level(eps, phe, lhs, np.where(phe.mask.interior, rhs, np.nan), lam)


def _levels_for(phi, f, eps_list, profile, threads=1, rhs_fn=None):
    n = phi.grid.n
    if rhs_fn is None:
        f_root = _as_density(phi, f).map(lambda v: np.maximum(v, 0.0) ** (1.0 / n))

        def rhs_fn(phe, kernel):
            return _rhs_root_mollified(phi, f_root, kernel) ** n

    work = lambda e: _make_level(phi, e, rhs_fn, profile)  # noqa: E731
    if threads and threads > 1 and len(eps_list) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(work, eps_list))
    return [work(e) for e in eps_list]


def _smoothed_record(phi: ScalarField, levels: list[_Level], tolerance: Tolerance,
                     sense="classical_smoothed") -> CheckRecord:
    grid = phi.grid
    tol = tolerance.value(grid, field_sigma(phi), grid.n)
    tol_psd = 1e-8 * phi.scale()
    worst, witness = math.inf, None
    per_eps = []
    non_psh = 0
    for lv in levels:
        inner = lv.phi.mask.interior
        margin = np.where(inner, lv.lhs - lv.rhs, np.inf)
        idx = np.unravel_index(int(np.argmin(margin)), margin.shape)
        m = float(margin[idx])
        bad = int(np.sum(lv.lam_min[inner] < -tol_psd))
        non_psh += bad
        per_eps.append({"eps": lv.eps, "eps_over_h": lv.eps / grid.spacing, "min_margin": m,
                        "nodes": int(inner.sum()), "non_psh_nodes": bad,
                        "min_lambda": float(np.min(lv.lam_min[inner]))})
        if m < worst:
            worst = m
            witness = {"eps": lv.eps, "node": list(idx), "point": grid.node_coords(idx).tolist(),
                       "lhs": float(lv.lhs[idx]), "rhs": float(lv.rhs[idx])}
    verdict, flags = _verdict(worst, tol)
    if non_psh:
        flags.append("NON_PSH_SMOOTHING")
    return CheckRecord(sense, verdict, worst, witness, tol,
                       {"eps": [lv.eps for lv in levels], "profile": "bump",
                        "tolerance": tolerance.descriptor()},
                       flags, {"per_eps": per_eps})


def check_classical_smoothed(phi: ScalarField, f, eps_list: Sequence[float] | None = None,
                             sample: HermitianSample | None = None, *,
                             tolerance: Tolerance | None = None, profile: str = "bump",
                             threads: int = 1, _levels=None) -> CheckRecord:
    """Pointwise smoothed check on ``Omega_eps`` for every radius.

    The left-hand side is the signed Monge-Ampere density of ``phi * chi_eps``
    (equal to ``det Q`` where the smoothed Hessian is psd, negative where it is
    not) so that a failure of plurisubharmonicity is itself a violation.
    ``sample`` is accepted for signature symmetry; the determinant needs none.
    """
    tolerance = tolerance or Tolerance()
    eps_list = _check_eps(eps_list if eps_list is not None else default_eps(phi.grid))
    levels = _levels if _levels is not None else _levels_for(phi, f, eps_list, profile, threads)
    return _smoothed_record(phi, levels, tolerance)


# ---------------------------------------------------------------- test functions


def _correlate(values: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """``out[c] = sum_o kernel[o] values[c + o]`` (kernel is symmetric)."""
    if values.size * kernel.size > 5e6:
        return signal.fftconvolve(values, kernel, mode="same")
    return ndimage.correlate(values, kernel, mode="constant", cval=0.0)


@dataclass(eq=False)
class TestFunctionFamily:
    """Translates of the bump profile at several radii, every one supported in ``region``.

    A member is ``psi_{s,c}(x) = w_s(x - c)`` where ``w_s`` is the unit-sum
    lattice kernel of radius ``scales[s]`` and ``c`` ranges over all centers
    whose full support lies in ``region``.
    """

    __test__ = False  # not a pytest class

    grid: Grid
    region: np.ndarray
    scales: tuple[float, ...]
    kernels: list[np.ndarray]
    centers: list[np.ndarray]
    profile: str = "bump"

    @classmethod
    def build(cls, grid: Grid, region: np.ndarray, scales: Sequence[float] | None = None,
              profile: str = "bump") -> "TestFunctionFamily":
        """``scales`` are absolute radii (default ``2h`` and ``4h``)."""
        scales = tuple(float(s) for s in (scales or (2 * grid.spacing, 4 * grid.spacing)))
        kernels, centers = [], []
        for s in scales:
            w = make_kernel(grid, s, profile).weights
            outside = ~np.asarray(region, bool)
            hits = _correlate(outside.astype(float), (w > 0).astype(float))
            c = (hits < 0.5) & region
            kernels.append(w)
            centers.append(c)
        fam = cls(grid, np.asarray(region, bool), scales, kernels, centers, profile)
        if fam.count == 0:
            raise ValueError("test-function family is empty after margin filtering")
        return fam

    @property
    def count(self) -> int:
        return int(sum(c.sum() for c in self.centers))

    def members(self):
        for s, c in enumerate(self.centers):
            for idx in np.argwhere(c):
                yield s, tuple(int(i) for i in idx)

    def psi(self, scale_index: int, center) -> np.ndarray:
        """Dense array of one member."""
        w = self.kernels[scale_index]
        k = w.shape[0] // 2
        out = np.zeros(self.grid.shape)
        sl = tuple(slice(c - k, c + k + 1) for c in center)
        out[sl] = w
        return out

    def pairings(self, values: np.ndarray) -> list[np.ndarray]:
        """``sum_x psi(x) values(x)`` for every member, one array per scale
        (NaN off the center set). ``values`` must be finite on ``region``."""
        v = np.where(self.region, values, 0.0)
        if not np.isfinite(v).all():
            raise ValueError("values not finite on the family region")
        return [np.where(c, _correlate(v, w), np.nan) for w, c in zip(self.kernels, self.centers)]

    def covered(self) -> np.ndarray:
        out = np.zeros(self.grid.shape, bool)
        for w, c in zip(self.kernels, self.centers):
            out |= _correlate(c.astype(float), (w > 0).astype(float)) > 0.5
        return out

    def descriptor(self) -> dict:
        h = self.grid.spacing
        cov = self.covered()
        return {"profile": self.profile, "scales": list(self.scales),
                "scales_over_h": [s / h for s in self.scales],
                "centers_per_scale": [int(c.sum()) for c in self.centers], "count": self.count,
                "region_nodes": int(self.region.sum()),
                "coverage": float(cov[self.region].mean()) if self.region.any() else 0.0,
                "placement": "every admissible lattice center"}


def distributional_family(phi: ScalarField, scales=None) -> TestFunctionFamily:
    """Family supported where ``Delta_H psi`` only touches interior nodes."""
    safe = erode(phi.mask.interior, phi.mask.width)
    return TestFunctionFamily.build(phi.grid, safe, scales)


def _hessian_components(hess, region):
    """Real components of Q on ``region`` with zero fill: (diag list, off-diagonal dict)."""
    n = hess.q.shape[-1]
    q = np.where(region[..., None, None], np.nan_to_num(hess.q), 0.0)
    diag = [q[..., j, j].real for j in range(n)]
    off = {(j, k): (q[..., j, k].real, q[..., j, k].imag) for j in range(n) for k in range(j + 1, n)}
    return diag, off


def _trace_pairings(sample: HermitianSample, comp_pairs, n):
    """``sum psi tr(HQ)/n`` for all H from the pairings of Q's components.

    ``tr(HQ) = sum_j H_jj Q_jj + 2 sum_{j<k} Re(H_kj Q_jk)``.
    """
    diag, off = comp_pairs
    out = []
    for H in sample:
        H = hermitize(H)
        acc = sum(H[j, j].real * diag[j] for j in range(n))
        for (j, k), (re, im) in off.items():
            hkj = H[k, j]
            acc = acc + 2.0 * (hkj.real * re - hkj.imag * im)
        out.append(acc / n)
    return out


def check_distributional(phi: ScalarField, f, sample: HermitianSample | None = None,
                         family: TestFunctionFamily | None = None, *,
                         tolerance: Tolerance | None = None, f_root=None,
                         optimize: bool = True) -> CheckRecord:
    """``sum psi Delta_H phi >= sum psi f^{1/n} - tol ||psi||_1`` for all (H, psi).

    Pairings are computed with the operator moved onto ``phi`` (summation by
    parts is exact for the symmetric central-difference operator when ``psi``
    vanishes near the mask edge), which makes the pairing against every
    translate a single correlation per Hessian component.

    The pairing is linear in ``H``: with ``optimize`` the sample is augmented,
    per test function, by the member of the condition-bounded cone
    (``cond H <= sample.kappa_max``) minimizing it, so each ``psi`` is tested
    against the exact infimum over that whole cone, not just the sample.
    """
    tolerance = tolerance or Tolerance()
    grid = phi.grid
    n = grid.n
    sample = sample or default_check_sample(n)
    if sample.n != n:
        raise ValueError("sample dimension does not match the grid")
    family = family or distributional_family(phi)
    if f_root is None:
        fr = _as_density(phi, f).values
        fr = np.maximum(np.nan_to_num(fr), 0.0) ** (1.0 / n)
    else:
        fr = np.nan_to_num(np.asarray(f_root.values if isinstance(f_root, ScalarField) else f_root,
                                      dtype=float))
        fr = np.broadcast_to(fr, grid.shape)
    hess = complex_hessian(phi)
    region = family.region
    diag, off = _hessian_components(hess, region)
    diag_p = [family.pairings(d) for d in diag]
    off_p = {key: (family.pairings(re), family.pairings(im)) for key, (re, im) in off.items()}
    f_p = family.pairings(fr)
    tol = tolerance.value(grid, field_sigma(phi), 1)
    worst, witness = math.inf, None
    per_scale = []

    def consider(m_arr, s, label, h_of):
        nonlocal worst, witness
        margin = np.where(family.centers[s], m_arr - f_p[s], np.inf)  # ||psi||_1 = 1
        idx = np.unravel_index(int(np.argmin(margin)), margin.shape)
        m = float(margin[idx])
        if m < worst:
            worst = m
            witness = {"H_source": label, "H": _matrix_json(h_of(idx)),
                       "psi": {"scale": family.scales[s], "center": list(idx),
                               "point": grid.node_coords(idx).tolist()},
                       "pairing": float(m_arr[idx]), "rhs": float(f_p[s][idx])}
        return m

    for s in range(len(family.scales)):
        comps = ([d[s] for d in diag_p], {k: (v[0][s], v[1][s]) for k, v in off_p.items()})
        scale_worst = math.inf
        for hi, lhs in enumerate(_trace_pairings(sample, comps, n)):
            m = consider(lhs, s, f"sample[{hi}]", lambda idx, hi=hi: sample.matrices[hi])
            scale_worst = min(scale_worst, m)
        if optimize:
            c = family.centers[s]
            qpsi = np.zeros((int(c.sum()), n, n), dtype=complex)
            for j in range(n):
                qpsi[:, j, j] = comps[0][j][c]
            for (j, k), (re, im) in comps[1].items():
                qpsi[:, j, k] = re[c] + 1j * im[c]
                qpsi[:, k, j] = re[c] - 1j * im[c]
            vals, hs = bounded_minimizer(qpsi, sample.kappa_max)
            best = np.full(grid.shape, np.nan)
            best[c] = vals
            pos = np.full(grid.shape, -1)
            pos[c] = np.arange(vals.size)
            m = consider(best, s, "bounded-cone optimum", lambda idx: hs[pos[idx]])
            scale_worst = min(scale_worst, m)
        per_scale.append({"scale": family.scales[s], "min_margin": scale_worst})
    verdict, flags = _verdict(worst, tol)
    return CheckRecord("distributional", verdict, worst, witness, tol,
                       {"sample": sample.descriptor(), "family": family.descriptor(),
                        "bounded_cone_optimum": optimize,
                        "tolerance": tolerance.descriptor(), "operator": "central-difference"},
                       flags, {"per_scale": per_scale})


def _matrix_json(m) -> list:
    return [[[float(v.real), float(v.imag)] for v in row] for row in np.asarray(m)]


# ---------------------------------------------------------------- pluripotential


def _pluripotential_record(phi, f_dens, levels, smoothed: CheckRecord, tolerance, scales):
    grid = phi.grid
    n = grid.n
    tol = tolerance.value(grid, field_sigma(phi), n)
    tail = sorted(levels, key=lambda lv: lv.eps)[:2]
    params = {"eps": [lv.eps for lv in levels], "weak_eps": [lv.eps for lv in tail],
              "tolerance": tolerance.descriptor(), "stabilization_limit": STABILIZATION_LIMIT}
    region = tail[0].phi.mask.interior.copy()
    for lv in tail[1:]:
        region &= lv.phi.mask.interior
    try:
        family = TestFunctionFamily.build(grid, region, scales)
    except ValueError:
        return CheckRecord("pluripotential", INCONCLUSIVE, math.nan, None, tol, params,
                           ["FAMILY_EMPTY"], {})
    params["family"] = family.descriptor()
    f_p = family.pairings(np.nan_to_num(f_dens))
    worst, witness = math.inf, None
    aggregates, per_eps = [], []
    for lv in tail:
        pairs = family.pairings(np.nan_to_num(lv.lhs))
        total = 0.0
        lv_worst = math.inf
        for s, (pp, fp) in enumerate(zip(pairs, f_p)):
            c = family.centers[s]
            total += float(np.sum(pp[c]))
            margin = np.where(c, pp - fp, np.inf)
            idx = np.unravel_index(int(np.argmin(margin)), margin.shape)
            m = float(margin[idx])
            lv_worst = min(lv_worst, m)
            if m < worst:
                worst = m
                witness = {"eps": lv.eps, "psi": {"scale": family.scales[s], "center": list(idx),
                                                  "point": grid.node_coords(idx).tolist()},
                           "pairing": float(pp[idx]), "rhs": float(fp[idx])}
        aggregates.append(total)
        per_eps.append({"eps": lv.eps, "min_weak_margin": lv_worst, "aggregate": total})
    floor = tol * family.count
    change = abs(aggregates[0] - aggregates[-1]) / max(abs(aggregates[0]), abs(aggregates[-1]), floor)
    details = {"weak": per_eps, "relative_change": change,
               "smoothed_worst": _num(smoothed.worst)}
    flags = []
    if smoothed.verdict == FAIL:
        verdict = FAIL
        if smoothed.worst <= worst:
            worst, witness = smoothed.worst, {"smoothed": smoothed.witness}
        flags.append("SMOOTHED_FAIL")
    else:
        verdict, flags = _verdict(worst, tol)
        if verdict == PASS and len(tail) < 2:
            verdict = INCONCLUSIVE
            flags.append("LADDER_TOO_SHORT")
        elif verdict == PASS and change > STABILIZATION_LIMIT:
            verdict = INCONCLUSIVE
            flags.append("NOT_STABILIZED")
        if smoothed.verdict == PASS and "NEAR_EQUALITY" in smoothed.flags and "NEAR_EQUALITY" not in flags:
            flags.append("NEAR_EQUALITY")
    return CheckRecord("pluripotential", verdict, worst, witness, tol, params, flags, details)


def check_pluripotential(phi: ScalarField, f, eps_list: Sequence[float] | None = None,
                         sample: HermitianSample | None = None, *,
                         tolerance: Tolerance | None = None, profile: str = "bump",
                         family_scales=None, threads: int = 1, _levels=None) -> CheckRecord:
    """Smoothed check along the ladder plus weak pairings at the two smallest radii.

    A definite violation (smoothed or weak, beyond ``2 tol``) is a FAIL;
    otherwise the verdict is INCONCLUSIVE when the aggregate weak pairing
    moves by more than 20% between the two smallest radii (or the ladder has
    a single radius), and PASS if it has stabilized.
    """
    tolerance = tolerance or Tolerance()
    eps_list = _check_eps(eps_list if eps_list is not None else default_eps(phi.grid))
    levels = _levels if _levels is not None else _levels_for(phi, f, eps_list, profile, threads)
    smoothed = _smoothed_record(phi, levels, tolerance)
    f_dens = _as_density(phi, f).values
    return _pluripotential_record(phi, f_dens, levels, smoothed, tolerance, family_scales)


# ---------------------------------------------------------------- equivalence


def check_equivalence(phi: ScalarField, f, config: dict | None = None) -> SubsolutionReport:
    """Run the three checks with shared smoothing and cross-validate their verdicts.

    ``config`` keys: ``eps`` (absolute radii), ``sample``, ``family_scales``,
    ``tolerance`` (a ``Tolerance``), ``profile``, ``threads``.
    """
    cfg = dict(config or {})
    unknown = set(cfg) - {"eps", "sample", "family_scales", "tolerance", "profile", "threads"}
    if unknown:
        raise ValueError(f"unknown equivalence options: {sorted(unknown)}")
    tolerance = cfg.get("tolerance") or Tolerance()
    eps_list = _check_eps(cfg.get("eps") or default_eps(phi.grid))
    sample = cfg.get("sample") or default_check_sample(phi.grid.n)
    profile = cfg.get("profile", "bump")
    levels = _levels_for(phi, f, eps_list, profile, cfg.get("threads", 1))
    smoothed = _smoothed_record(phi, levels, tolerance)
    pluri = _pluripotential_record(phi, _as_density(phi, f).values, levels, smoothed, tolerance,
                                   cfg.get("family_scales"))
    dist = check_distributional(phi, f, sample, distributional_family(phi, cfg.get("family_scales")),
                                tolerance=tolerance)
    return SubsolutionReport({"pluripotential": pluri, "classical_smoothed": smoothed,
                              "distributional": dist},
                             {"grid": phi.grid.describe(), "mask": phi.mask.describe(),
                              "eps": eps_list})


# ---------------------------------------------------------------- mixed inequality


def check_mixed(phis: Sequence[ScalarField], fs: Sequence, eps_list: Sequence[float] | None = None, *,
                tolerance: Tolerance | None = None, profile: str = "bump") -> CheckRecord:
    """``D(Q(phi_1 * chi), ..., Q(phi_n * chi)) >= prod (f_i^{1/n} * chi)`` at every node and radius."""
    tolerance = tolerance or Tolerance()
    phis = list(phis)
    if not phis:
        raise ValueError("need n fields")
    grid = phis[0].grid
    n = grid.n
    if len(phis) != n or len(fs) != n:
        raise ValueError(f"mixed check needs exactly n={n} fields and densities")
    eps_list = _check_eps(eps_list if eps_list is not None else default_eps(grid))
    sigma = math.prod(field_sigma(p) for p in phis)
    tol = tolerance.value(grid, sigma, 1)
    params = {"eps": eps_list, "tolerance": tolerance.descriptor()}
    pre = [check_classical_smoothed(p, f, eps_list, tolerance=tolerance, profile=profile)
           for p, f in zip(phis, fs)]
    if any(r.verdict != PASS for r in pre):
        return CheckRecord("mixed", INCONCLUSIVE, math.nan, None, tol, params,
                           ["PRECONDITION_FAILED"],
                           {"preconditions": [r.verdict for r in pre]})
    roots = [_as_density(p, f).map(lambda v: np.maximum(v, 0.0) ** (1.0 / n))
             for p, f in zip(phis, fs)]
    worst, witness = math.inf, None
    per_eps = []
    for eps in eps_list:
        kernel = make_kernel(grid, eps, profile)
        smoothed = [convolve(p, kernel) for p in phis]
        lhs_f = mixed_ma(*smoothed)
        rhs = np.ones(grid.shape)
        for r in roots:
            rhs = rhs * convolve(r, kernel).values
        live = lhs_f.mask.live
        margin = np.where(live, lhs_f.values - rhs, np.inf)
        idx = np.unravel_index(int(np.argmin(margin)), margin.shape)
        m = float(margin[idx])
        per_eps.append({"eps": eps, "min_margin": m})
        if m < worst:
            worst = m
            witness = {"eps": eps, "node": list(idx), "point": grid.node_coords(idx).tolist(),
                       "lhs": float(lhs_f.values[idx]), "rhs": float(rhs[idx])}
    verdict, flags = _verdict(worst, tol)
    return CheckRecord("mixed", verdict, worst, witness, tol, params, flags, {"per_eps": per_eps})


# ---------------------------------------------------------------- generalized right-hand side


@dataclass(frozen=True)
class GeneralizedRHS:
    """Density ``exp(h(phi) + g)`` with ``h(t) = max_i (a_i t + b_i)``.

    ``pieces`` lists ``(a_i, b_i)`` with nondecreasing slopes (the convexity
    certificate). ``g`` may be ``-inf`` (zero density) anywhere.
    """

    g: np.ndarray | float
    pieces: tuple[tuple[float, float], ...] = ((0.0, 0.0),)

    def __post_init__(self):
        if not self.pieces:
            raise ValueError("h needs at least one affine piece")
        slopes = [float(a) for a, _ in self.pieces]
        if any(b < a for a, b in zip(slopes, slopes[1:])):
            raise ValueError("h pieces must have nondecreasing slopes")
        for a, b in self.pieces:
            if not (math.isfinite(a) and math.isfinite(b)):
                raise ValueError("h pieces must be finite")

    @classmethod
    def from_density(cls, f) -> "GeneralizedRHS":
        """``h = 0``, ``g = log f``."""
        with np.errstate(divide="ignore"):
            g = np.log(f.values if isinstance(f, ScalarField) else np.asarray(f, dtype=float))
        return cls(g)

    def h(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.max([a * t + b for a, b in self.pieces], axis=0)

    def g_array(self, grid: Grid) -> np.ndarray:
        g = self.g.values if isinstance(self.g, ScalarField) else self.g
        return np.broadcast_to(np.asarray(g, dtype=float), grid.shape)

    def exponent(self, phi_values: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, bool]:
        """``h(phi) + g`` clamped to ``[-700, 700]``; the flag reports clamping."""
        e = self.h(phi_values) + g
        clamped = bool(np.any(np.abs(e[np.isfinite(phi_values)]) > EXP_CLAMP))
        return np.clip(e, -EXP_CLAMP, EXP_CLAMP), clamped

    def descriptor(self) -> dict:
        return {"pieces": [list(p) for p in self.pieces]}


def _clamped_g(rhs: GeneralizedRHS, phi: ScalarField) -> tuple[ScalarField, bool]:
    g = rhs.g_array(phi.grid)
    live = phi.mask.live
    if np.isnan(g[live]).any() or np.isposinf(g[live]).any():
        raise ValueError("g must be finite or -inf at live nodes")
    clamped = bool(np.any(np.abs(g[live]) > EXP_CLAMP))
    gc = np.clip(np.where(live, g, 0.0), -EXP_CLAMP, EXP_CLAMP)
    return ScalarField(phi.grid, np.where(live, gc, np.nan), phi.mask), clamped


def check_generalized(phi: ScalarField, rhs: GeneralizedRHS, eps_list: Sequence[float] | None = None,
                      sample: HermitianSample | None = None, *, tolerance: Tolerance | None = None,
                      profile: str = "bump", family_scales=None) -> SubsolutionReport:
    """The three checks with ``f = exp(h(phi) + g)``.

    The smoothed sense compares against ``exp(h(phi_eps) + g_eps)``, the
    distributional sense against ``exp((h(phi) + g)/n)``, and the weak
    pairings against ``exp(h(phi) + g)``. Exponents (and ``g``) are clamped
    to ``[-700, 700]`` with a ``CLAMPED`` flag.
    """
    tolerance = tolerance or Tolerance()
    grid = phi.grid
    n = grid.n
    eps_list = _check_eps(eps_list if eps_list is not None else default_eps(grid))
    sample = sample or default_check_sample(n)
    g, clamped = _clamped_g(rhs, phi)
    live = phi.mask.live
    expo, c2 = rhs.exponent(np.where(live, phi.values, 0.0), np.where(live, g.values, 0.0))
    clamped = clamped or c2
    f_dens = np.where(live, np.exp(expo), np.nan)

    def rhs_fn(phe, kernel):
        g_eps = convolve(g, kernel).values
        inner = phe.mask.live
        e, c = rhs.exponent(np.where(inner, phe.values, 0.0), np.where(inner, g_eps, 0.0))
        flags_box["clamped"] |= c
        return np.exp(e)

    flags_box = {"clamped": clamped}
    levels = _levels_for(phi, None, eps_list, profile, rhs_fn=rhs_fn)
    smoothed = _smoothed_record(phi, levels, tolerance)
    pluri = _pluripotential_record(phi, f_dens, levels, smoothed, tolerance, family_scales)
    dist = check_distributional(phi, None, sample, distributional_family(phi, family_scales),
                                tolerance=tolerance, f_root=np.where(live, np.exp(expo / n), 0.0))
    records = {"pluripotential": pluri, "classical_smoothed": smoothed, "distributional": dist}
    if flags_box["clamped"]:
        for r in records.values():
            r.flags.append("CLAMPED")
    return SubsolutionReport(records, {"grid": grid.describe(), "eps": eps_list,
                                       "rhs": rhs.descriptor(), "generalized": True})


def jensen_gap(phi: ScalarField, rhs: GeneralizedRHS, eps: float, profile: str = "bump") -> float:
    """``max [exp(h(phi_eps) + g_eps) - (exp(h(phi) + g)) * chi_eps]`` over the shrunken domain.

    Convexity of ``h`` and ``exp`` makes this ``<= 0`` up to the lattice
    error of the discrete kernel.
    """
    kernel = make_kernel(phi.grid, eps, profile)
    g, _ = _clamped_g(rhs, phi)
    live = phi.mask.live
    e, _ = rhs.exponent(np.where(live, phi.values, 0.0), np.where(live, g.values, 0.0))
    dens = ScalarField(phi.grid, np.where(live, np.exp(e), np.nan), phi.mask)
    right = convolve(dens, kernel)
    phe = convolve(phi, kernel)
    ge = convolve(g, kernel)
    m = phe.mask.live
    left, _ = rhs.exponent(np.where(m, phe.values, 0.0), np.where(m, ge.values, 0.0))
    return float(np.max(np.exp(left[m]) - right.values[m]))
