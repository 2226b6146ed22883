"""Curated potentials with known Monge-Ampere densities on balls.

Each entry of ``SUITE`` builds ``(phi, f_pass)`` on a ball grid; the paired
failing density is ``1.1 * f_pass + 0.05``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .field_core import ScalarField, ball_mask, fit_extent, make_grid, sample_function
from .oracle import manufactured_family, parse_fixture

__all__ = ["Fixture", "SUITE", "suite_names", "build_fixture", "fail_density", "ball_grid"]


@dataclass(frozen=True)
class Fixture:
    name: str
    n: int
    potential: Callable  # coords -> values
    density: Callable  # coords -> values of f_pass
    smooth: bool

    def build(self, resolution: int, radius: float = 1.0, width: int = 1,
              allow_large: bool = False) -> tuple[ScalarField, ScalarField]:
        grid, mask = ball_grid(self.n, resolution, radius, width, allow_large)
        phi = sample_function(grid, mask, self.potential)
        f = sample_function(grid, mask, self.density, density=True)
        return phi, f


def ball_grid(n: int, resolution: int, radius: float = 1.0, width: int = 1, allow_large=False):
    grid = make_grid(n, fit_extent(radius, resolution, n, width), resolution, allow_large=allow_large)
    return grid, ball_mask(grid, radius, width)


def _abs2(c, j=None):
    idx = range(len(c)) if j is None else (2 * j, 2 * j + 1)
    return sum(c[i] * c[i] for i in idx)


def _zero(c):
    return 0.0 * _abs2(c)


def _const(v):
    return lambda c: v + 0.0 * _abs2(c)


SUITE: dict[str, Fixture] = {
    "quadratic-ball": Fixture("quadratic-ball", 2, lambda c: _abs2(c) - 1.0, _const(1.0), True),
    "quadratic-ball-1d": Fixture("quadratic-ball-1d", 1, lambda c: _abs2(c) - 1.0, _const(1.0), True),
    "anisotropic-quadratic": Fixture("anisotropic-quadratic", 2,
                                     lambda c: 2 * _abs2(c, 0) + 3 * _abs2(c, 1), _const(6.0), True),
    "quartic": Fixture("quartic", 1, lambda c: _abs2(c) ** 2 + _abs2(c),
                       lambda c: 4 * _abs2(c) + 1.0, True),
    "max-modulus": Fixture("max-modulus", 2, lambda c: np.maximum(_abs2(c, 0), _abs2(c, 1)), _zero, False),
    "ridge": Fixture("ridge", 2, lambda c: _abs2(c) + np.maximum(c[0], 0.0), _const(1.0), False),
}


def suite_names(smooth_only: bool = False) -> list[str]:
    return [k for k, v in SUITE.items() if v.smooth or not smooth_only]


def fail_density(f: ScalarField) -> ScalarField:
    """Inflated companion ``1.1 f + 0.05``."""
    return f.map(lambda v: 1.1 * v + 0.05)


def build_fixture(name: str, resolution: int, radius: float = 1.0, n: int | None = None,
                  allow_large: bool = False) -> tuple[ScalarField, ScalarField]:
    """Curated suite entry or a manufactured family (``"exp-quadratic(1,1)"`` etc.).

    Manufactured families return ``(phi*, F)`` where ``F`` is the density of the
    plain equation (for ``exp`` families, ``mu``).
    """
    if name in SUITE:
        fx = SUITE[name]
        if n is not None and n != fx.n:
            raise ValueError(f"fixture {name!r} is defined for n={fx.n}")
        return fx.build(resolution, radius, allow_large=allow_large)
    base, args = parse_fixture(name)
    man = manufactured_family(name, n or 1)
    grid, mask = ball_grid(man.n, resolution, man.radius, allow_large=allow_large)
    phi = sample_function(grid, mask, man.solution)
    f = sample_function(grid, mask, man.rhs, density=True)
    return phi, f
