"""Determinant/trace algebra on Hermitian matrices and finite samples of the
normalized cone {H > 0, det H = 1}.

Matrices are plain ``complex128`` numpy arrays of shape ``(n, n)``; batches
carry leading axes.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

__all__ = [
    "HermitianSample",
    "det",
    "trace_pair",
    "eigen",
    "hermitize",
    "is_hermitian",
    "sample_cone",
    "inf_trace",
    "exact_minimizer",
    "mixed_discriminant",
    "bounded_minimizer",
    "symmetry_images",
    "InfTrace",
]

DET_TOL = 1e-12


def hermitize(a) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    return 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))


def is_hermitian(a, tol: float = 0.0) -> bool:
    a = np.asarray(a, dtype=complex)
    return bool(np.all(np.abs(a - np.conj(np.swapaxes(a, -1, -2))) <= tol))


def det(q) -> np.ndarray | float:
    """Determinant of Hermitian matrices (real part; the imaginary part is round-off)."""
    q = np.asarray(q, dtype=complex)
    n = q.shape[-1]
    if n == 1:
        d = q[..., 0, 0].real
    elif n == 2:
        d = (q[..., 0, 0] * q[..., 1, 1] - q[..., 0, 1] * q[..., 1, 0]).real
    else:
        d = np.linalg.det(q).real
    return float(d) if np.ndim(d) == 0 else d


def trace_pair(h, q) -> np.ndarray | float:
    """``tr(HQ)``, real for Hermitian arguments."""
    t = np.einsum("...jk,...kj->...", np.asarray(h, dtype=complex), np.asarray(q, dtype=complex)).real
    return float(t) if np.ndim(t) == 0 else t


def eigen(q) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (nondecreasing) and unitary eigenvectors (columns)."""
    return np.linalg.eigh(hermitize(q))


def _normalize_det(h: np.ndarray) -> np.ndarray:
    n = h.shape[-1]
    d = det(h)
    return h / np.asarray(d)[..., None, None] ** (1.0 / n)


def symmetry_images(h: np.ndarray) -> list[np.ndarray]:
    """Images of ``h`` under coordinate permutations and complex conjugation."""
    n = h.shape[-1]
    out = []
    for perm in itertools.permutations(range(n)):
        p = h[np.ix_(perm, perm)]
        out.append(p)
        out.append(np.conj(p))
    return out


def _dedupe(mats: list[np.ndarray], tol: float = 1e-12) -> list[np.ndarray]:
    kept: list[np.ndarray] = []
    for m in mats:
        if not any(np.max(np.abs(m - k)) <= tol for k in kept):
            kept.append(m)
    return kept


@dataclass(frozen=True, eq=False)
class HermitianSample:
    """A finite, symmetry-closed subset of the normalized Hermitian cone."""

    matrices: np.ndarray
    kappa_max: float
    seed: int | None = None
    construction: str = "explicit"
    symmetries: tuple[str, ...] = ("permutation", "conjugation")
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.matrices.setflags(write=False)

    @property
    def n(self) -> int:
        return self.matrices.shape[-1]

    def __len__(self) -> int:
        return self.matrices.shape[0]

    def __iter__(self):
        return iter(self.matrices)

    def contains(self, h, tol: float = 1e-12) -> bool:
        return bool(np.any(np.max(np.abs(self.matrices - np.asarray(h)), axis=(-1, -2)) <= tol))

    def augmented(self, *extra) -> "HermitianSample":
        mats = np.concatenate([self.matrices, np.asarray(extra, dtype=complex).reshape(-1, self.n, self.n)])
        return HermitianSample(mats, self.kappa_max, self.seed, self.construction + "+augmented",
                               self.symmetries, dict(self.extra))

    def descriptor(self) -> dict:
        return {"n": self.n, "count": len(self), "kappa_max": self.kappa_max, "seed": self.seed,
                "construction": self.construction, "symmetries": list(self.symmetries), **self.extra}


def _haar_unitaries(points: np.ndarray, n: int) -> np.ndarray:
    """Map quasi-random points in (0,1)^{2n^2} to unitaries (QR of a Gaussian matrix)."""
    from scipy.special import ndtri

    g = ndtri(np.clip(points, 1e-12, 1 - 1e-12)).reshape(-1, 2, n, n)
    z = g[:, 0] + 1j * g[:, 1]
    q, r = np.linalg.qr(z)
    d = np.diagonal(r, axis1=-2, axis2=-1)
    phase = d / np.abs(d)
    return q * phase[:, None, :]


def sample_cone(n: int, count: int, kappa_max: float = 1e4, seed: int = 0) -> HermitianSample:
    """Deterministic quasi-random sample of the normalized cone.

    Members are ``U diag(lam) U*`` with log-eigenvalues drawn uniformly in
    ``[-log sqrt(kappa), log sqrt(kappa)]`` and recentred to sum zero, so the
    condition number stays below ``kappa_max``. The identity is always
    included and the result is closed under coordinate permutations and
    conjugation.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if kappa_max < 1:
        raise ValueError("kappa_max must be >= 1")
    mats = [np.eye(n, dtype=complex)]
    k = count - 1
    if k > 0:
        dim = 2 * n * n + n
        pts = qmc.Halton(d=dim, scramble=True, seed=seed).random(k)
        half = 0.5 * math.log(kappa_max)
        logs = -half + 2 * half * pts[:, :n]
        logs -= logs.mean(axis=1, keepdims=True)
        u = _haar_unitaries(pts[:, n:], n)
        h = np.einsum("aij,aj,akj->aik", u, np.exp(logs), np.conj(u))
        h = _normalize_det(hermitize(h))
        for m in h:
            mats.extend(symmetry_images(m))
    mats = _dedupe([hermitize(m) for m in mats])
    arr = _normalize_det(np.array(mats))
    return HermitianSample(arr, float(kappa_max), seed, f"halton-unitary(count={count})")


@dataclass(frozen=True)
class InfTrace:
    value: float
    argmin: np.ndarray
    index: int
    indefinite_detected: bool


def inf_trace(q, sample: HermitianSample) -> InfTrace:
    """Minimum of ``tr(HQ)/n`` over a finite sample of the cone."""
    q = hermitize(q)
    n = q.shape[-1]
    vals = trace_pair(sample.matrices, q[None]) / n
    i = int(np.argmin(vals))
    v = float(vals[i])
    return InfTrace(v, sample.matrices[i].copy(), i, v < 0)


def exact_minimizer(q) -> np.ndarray:
    """``H* = (det Q)^{1/n} Q^{-1}``, the member of the cone minimizing ``tr(HQ)``."""
    q = hermitize(q)
    n = q.shape[-1]
    w = np.linalg.eigvalsh(q)
    if w[0] <= 0:
        raise ValueError("exact_minimizer requires a positive definite matrix")
    d = float(np.prod(w))
    h = hermitize(d ** (1.0 / n) * np.linalg.inv(q))
    return _normalize_det(h)


def bounded_minimizer(q, kappa_max: float) -> tuple[np.ndarray, np.ndarray]:
    """Minimum of ``tr(HQ)/n`` over cone members with condition number ``<= kappa_max``.

    Batched over leading axes; ``n <= 2``. By the trace inequality the optimum
    is diagonal in Q's eigenbasis with the larger weight on the smaller
    eigenvalue, which leaves a one-dimensional problem with a closed-form
    solution. Unlike ``exact_minimizer`` this is finite for indefinite Q.
    Returns ``(values, H)``.
    """
    q = hermitize(np.asarray(q, dtype=complex))
    n = q.shape[-1]
    if kappa_max < 1:
        raise ValueError("kappa_max must be >= 1")
    w, v = np.linalg.eigh(q)
    if n == 1:
        return w[..., 0].copy(), np.ones(q.shape, dtype=complex)
    if n != 2:
        raise NotImplementedError("bounded_minimizer supports n <= 2")
    mu1, mu2 = w[..., 0], w[..., 1]
    smax = math.sqrt(kappa_max)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(mu1 > 0, np.sqrt(mu2 / np.where(mu1 > 0, mu1, 1.0)), smax)
    s = np.clip(s, 1.0, smax)
    vals = (s * mu1 + mu2 / s) / 2.0
    v1, v2 = v[..., :, 0], v[..., :, 1]
    H = (s[..., None, None] * v1[..., :, None] * v1[..., None, :].conj()
         + (1.0 / s)[..., None, None] * v2[..., :, None] * v2[..., None, :].conj())
    return vals, H


def mixed_discriminant(*qs) -> np.ndarray | float:
    """Fully polarized determinant ``D(Q_1, ..., Q_n)``.

    Uses the inclusion-exclusion form of ``(1/n!) d^n/dt_1..dt_n det(sum t_i Q_i)``.
    Arguments may be batches with matching leading shapes.
    """
    if not qs:
        raise ValueError("need at least one matrix")
    qs = [np.asarray(q, dtype=complex) for q in qs]
    n = qs[0].shape[-1]
    if len(qs) != n or any(q.shape[-2:] != (n, n) for q in qs):
        raise ValueError(f"mixed discriminant needs {n} matrices of size {n}x{n}")
    total = 0.0
    for r in range(1, n + 1):
        sign = (-1) ** (n - r)
        for subset in itertools.combinations(range(n), r):
            total = total + sign * np.asarray(det(sum(qs[i] for i in subset)))
    out = total / math.factorial(n)
    return float(out) if np.ndim(out) == 0 else out
