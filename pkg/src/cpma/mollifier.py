"""Radial mollifiers on the lattice, discrete convolution and the shrunken domain."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .field_core import DomainMask, Grid, ScalarField

__all__ = ["MollifierKernel", "PROFILES", "make_kernel", "convolve", "mollification_ladder",
           "bump_profile"]


def bump_profile(r: np.ndarray) -> np.ndarray:
    """``exp(-1/(1 - r^2))`` on ``r < 1``, zero outside."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = r < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


PROFILES: dict[str, Callable[[np.ndarray], np.ndarray]] = {"bump": bump_profile}


@dataclass(frozen=True, eq=False)
class MollifierKernel:
    """Nonnegative radial weights on lattice offsets ``|o h| < eps`` summing to one."""

    grid: Grid
    eps: float
    weights: np.ndarray  # dense cube of side 2k+1, zero outside the support
    profile: str = "bump"

    @property
    def half_width(self) -> int:
        return self.weights.shape[0] // 2

    @property
    def support(self) -> np.ndarray:
        return self.weights > 0

    def offsets(self) -> np.ndarray:
        k = self.half_width
        idx = np.argwhere(self.support)
        return idx - k

    def second_moment(self) -> float:
        """``sum w(o) |o h|^2``."""
        k = self.half_width
        h = self.grid.spacing
        r2 = sum(((np.indices(self.weights.shape)[a] - k) * h) ** 2 for a in range(self.weights.ndim))
        return float(np.sum(self.weights * r2))

    def support_radius(self) -> float:
        return float(np.max(np.linalg.norm(self.offsets(), axis=1)) * self.grid.spacing)

    def descriptor(self) -> dict:
        return {"eps": self.eps, "eps_over_h": self.eps / self.grid.spacing, "profile": self.profile,
                "support_size": int(self.support.sum())}


def make_kernel(grid: Grid, eps: float, profile: str = "bump") -> MollifierKernel:
    """Discretize ``chi_eps`` and renormalize so the weights sum to exactly one."""
    h = grid.spacing
    if eps < 2 * h * (1 - 1e-12):
        raise ValueError(f"kernel radius too small: eps={eps:.4g} < 2h={2 * h:.4g}")
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}")
    k = int(np.ceil(eps / h))
    ax = np.arange(-k, k + 1) * h
    r2 = np.zeros((2 * k + 1,) * grid.ndim)
    for a in range(grid.ndim):
        shape = [1] * grid.ndim
        shape[a] = 2 * k + 1
        r2 = r2 + ax.reshape(shape) ** 2
    raw = PROFILES[profile](np.sqrt(r2) / eps)
    w = raw / raw.sum()
    return MollifierKernel(grid, float(eps), w, profile)


def convolve(phi: ScalarField, kernel: MollifierKernel) -> ScalarField:
    """``phi * chi_eps`` on the nodes whose whole kernel support is live in ``phi``.

    The result lives on the shrunken domain (restricted to ``phi``'s interior);
    its mask uses the same stencil width as the input.
    """
    if kernel.grid != phi.grid:
        raise ValueError("kernel built for a different grid")
    live = phi.mask.live
    vals = np.where(live, phi.values, 0.0)
    sm = ndimage.correlate(vals, kernel.weights, mode="constant", cval=0.0)
    covered = ndimage.correlate(live.astype(float), kernel.support.astype(float),
                                mode="constant", cval=0.0)
    out_live = (covered > kernel.support.sum() - 0.5) & phi.mask.interior
    if not out_live.any():
        raise ValueError(f"shrunken interior is empty for eps={kernel.eps:.4g}")
    mask = DomainMask.from_live(phi.grid, out_live, phi.mask.width, kind="derived",
                                radius=phi.mask.radius)
    return ScalarField(phi.grid, np.where(out_live, sm, np.nan), mask,
                       meta={"eps": kernel.eps})


def mollification_ladder(phi: ScalarField, eps_list: Sequence[float], profile: str = "bump") -> list[ScalarField]:
    """Convolutions of ``phi`` for a strictly decreasing list of radii."""
    eps_list = list(eps_list)
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps list must be strictly decreasing")
    return [convolve(phi, make_kernel(phi.grid, e, profile)) for e in eps_list]


def common_mask(fields: Sequence[ScalarField]) -> np.ndarray:
    live = fields[0].mask.live.copy()
    for f in fields[1:]:
        live &= f.mask.live
    return live
