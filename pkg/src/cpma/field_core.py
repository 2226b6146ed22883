"""Lattice grids over boxes in C^n, domain masks, scalar fields and field I/O.

Real axes are ordered ``x_1, y_1, ..., x_n, y_n`` so that ``z_j = x_j + i y_j``
lives on axes ``2j`` and ``2j + 1``.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

__all__ = [
    "Grid",
    "DomainMask",
    "ScalarField",
    "make_grid",
    "ball_mask",
    "box_mask",
    "sample_function",
    "read_field",
    "write_field",
    "shift",
    "memory_budget",
    "fit_extent",
    "EXTERIOR",
    "INTERIOR",
    "BOUNDARY",
]

EXTERIOR, INTERIOR, BOUNDARY = 0, 1, 2

DEFAULT_MEMORY_BUDGET = 200_000_000
# n=2 grids above this resolution need allow_large=True
N2_RESOLUTION_CAP = 33

MAGIC = b"CPMA"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHBIdBd")
MASK_IDS = {"box": 0, "ball": 1}


def memory_budget() -> int:
    """Node-count budget, overridable through ``CPMA_MEMORY_BUDGET``."""
    raw = os.environ.get("CPMA_MEMORY_BUDGET")
    if raw is None:
        return DEFAULT_MEMORY_BUDGET
    return int(float(raw))


@dataclass(frozen=True)
class Grid:
    n: int
    extent: float
    resolution: int

    @property
    def spacing(self) -> float:
        return 2.0 * self.extent / (self.resolution - 1)

    @property
    def ndim(self) -> int:
        return 2 * self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.resolution,) * self.ndim

    @property
    def size(self) -> int:
        return self.resolution ** self.ndim

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.ndim

    def axis(self) -> np.ndarray:
        """Node coordinates along one real axis, ``-L + i h``."""
        return -self.extent + np.arange(self.resolution) * self.spacing

    def coords(self) -> list[np.ndarray]:
        """Broadcastable coordinate arrays ``[x_1, y_1, ..., x_n, y_n]``."""
        ax = self.axis()
        out = []
        for k in range(self.ndim):
            shape = [1] * self.ndim
            shape[k] = self.resolution
            out.append(ax.reshape(shape))
        return out

    def complex_coords(self) -> list[np.ndarray]:
        c = self.coords()
        return [c[2 * j] + 1j * c[2 * j + 1] for j in range(self.n)]

    def radius_squared(self) -> np.ndarray:
        """|z|^2 at every node (full grid array)."""
        r2 = np.zeros(self.shape)
        for c in self.coords():
            r2 = r2 + c * c
        return r2

    def node_coords(self, index) -> np.ndarray:
        return -self.extent + np.asarray(index, dtype=float) * self.spacing

    def nearest_index(self, point) -> tuple[int, ...]:
        idx = np.rint((np.asarray(point, dtype=float) + self.extent) / self.spacing)
        return tuple(int(i) for i in idx)

    def describe(self) -> dict:
        return {"n": self.n, "extent": self.extent, "resolution": self.resolution,
                "spacing": self.spacing}


def make_grid(n: int, extent: float, resolution: int, *, allow_large: bool = False,
              budget: int | None = None) -> Grid:
    """Build a regular lattice on ``[-extent, extent]^{2n}``.

    Resolution must be odd so that the origin is a node.
    """
    if n not in (1, 2):
        raise ValueError(f"complex dimension must be 1 or 2, got {n}")
    if not np.isfinite(extent) or extent <= 0:
        raise ValueError(f"extent must be positive, got {extent}")
    if resolution % 2 == 0:
        raise ValueError(f"even resolution {resolution}: the origin must be a node")
    if resolution < 5:
        raise ValueError(f"resolution must be at least 5, got {resolution}")
    if n == 2 and resolution > N2_RESOLUTION_CAP and not allow_large:
        raise ValueError(f"n=2 grid with m={resolution} > {N2_RESOLUTION_CAP} "
                         "requires allow_large=True")
    budget = memory_budget() if budget is None else budget
    nodes = resolution ** (2 * n)
    if nodes > budget:
        raise ValueError(f"node count {nodes} exceeds memory budget {budget}")
    return Grid(n=n, extent=float(extent), resolution=int(resolution))


def fit_extent(radius: float, resolution: int, n: int = 1, width: int = 1) -> float:
    """Smallest box half-width keeping every node of the open ball at least
    ``width`` lattice steps away from the grid edge (so the boundary shell fits).
    """
    steps = resolution - 1
    if steps <= 2 * width:
        raise ValueError("resolution too small to host a ball with a boundary shell")
    return float(radius * steps / (steps - 2.0 * width)) * (1.0 + 1e-12)


def shift(a: np.ndarray, offset, fill=np.nan) -> np.ndarray:
    """Return ``b`` with ``b[x] = a[x + offset]`` and ``fill`` where that leaves the grid."""
    out = np.full(a.shape, fill, dtype=np.result_type(a.dtype, type(fill)))
    src, dst = [], []
    for o, size in zip(offset, a.shape):
        o = int(o)
        if abs(o) >= size:
            return out
        if o >= 0:
            src.append(slice(o, size))
            dst.append(slice(0, size - o))
        else:
            src.append(slice(0, size + o))
            dst.append(slice(-o, size))
    out[tuple(dst)] = a[tuple(src)]
    return out


def dilate(active: np.ndarray, width: int) -> np.ndarray:
    """Nodes within l-infinity lattice distance ``width`` of an active node."""
    out = active.copy()
    for axis in range(active.ndim):
        cur = out.copy()
        for s in range(1, width + 1):
            off = [0] * active.ndim
            off[axis] = s
            cur |= shift(out, off, fill=False)
            off[axis] = -s
            cur |= shift(out, off, fill=False)
        out = cur
    return out


def erode(active: np.ndarray, width: int) -> np.ndarray:
    """Nodes whose whole l-infinity ``width`` neighbourhood is active."""
    return ~dilate(~active, width)


@dataclass(frozen=True, eq=False)
class DomainMask:
    """Per-node INTERIOR / BOUNDARY / EXTERIOR classification.

    ``width`` is the l-infinity stencil reach: every INTERIOR node has its whole
    ``width`` neighbourhood INTERIOR or BOUNDARY.
    """

    grid: Grid
    labels: np.ndarray
    kind: str = "ball"
    radius: float = 1.0
    width: int = 1

    def __post_init__(self):
        self.labels.setflags(write=False)

    @property
    def interior(self) -> np.ndarray:
        return self.labels == INTERIOR

    @property
    def boundary(self) -> np.ndarray:
        return self.labels == BOUNDARY

    @property
    def live(self) -> np.ndarray:
        return self.labels != EXTERIOR

    @property
    def canonical(self) -> bool:
        return self.kind in MASK_IDS

    def describe(self) -> dict:
        return {"kind": self.kind, "radius": self.radius, "width": self.width,
                "interior_nodes": int(self.interior.sum()),
                "boundary_nodes": int(self.boundary.sum())}

    @classmethod
    def from_live(cls, grid: Grid, live: np.ndarray, width: int, kind: str = "derived",
                  radius: float = float("nan")) -> "DomainMask":
        """Interior = live nodes whose ``width`` neighbourhood is live; rest of live is boundary."""
        interior = erode(live, width) & live
        labels = np.full(grid.shape, EXTERIOR, dtype=np.int8)
        labels[live] = BOUNDARY
        labels[interior] = INTERIOR
        return cls(grid, labels, kind=kind, radius=radius, width=width)


def ball_mask(grid: Grid, radius: float | None = None, width: int = 1) -> DomainMask:
    """Ball ``|z| < R`` centred at the origin with a ``width``-thick boundary shell."""
    radius = grid.extent if radius is None else float(radius)
    if radius <= 0 or radius > grid.extent:
        raise ValueError(f"ball radius {radius} must lie in (0, L={grid.extent}]")
    r2 = grid.radius_squared()
    inside = r2 < radius * radius
    shell = dilate(inside, width) & ~inside
    if not erode(np.ones(grid.shape, bool), width)[inside].all():
        raise ValueError("ball interior reaches the grid edge; enlarge the extent")
    labels = np.full(grid.shape, EXTERIOR, dtype=np.int8)
    labels[shell] = BOUNDARY
    labels[inside] = INTERIOR
    return DomainMask(grid, labels, kind="ball", radius=radius, width=width)


def box_mask(grid: Grid, width: int = 1) -> DomainMask:
    """Full box; the outer ``width`` layers of nodes are BOUNDARY."""
    m = grid.resolution
    if m <= 2 * width:
        raise ValueError("grid too small for a boundary shell of this width")
    interior = np.zeros(grid.shape, bool)
    interior[(slice(width, m - width),) * grid.ndim] = True
    labels = np.full(grid.shape, BOUNDARY, dtype=np.int8)
    labels[interior] = INTERIOR
    return DomainMask(grid, labels, kind="box", radius=grid.extent, width=width)


def mask_from_header(grid: Grid, kind: str, radius: float, width: int = 1) -> DomainMask:
    if kind == "ball":
        return ball_mask(grid, radius, width)
    return box_mask(grid, width)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real values on a grid; EXTERIOR nodes hold NaN."""

    grid: Grid
    values: np.ndarray
    mask: DomainMask
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} != grid shape {self.grid.shape}")
        if not np.isfinite(self.values[self.mask.live]).all():
            raise ValueError("field has non-finite values at live nodes")
        self.values.setflags(write=False)

    @property
    def n(self) -> int:
        return self.grid.n

    def live_values(self) -> np.ndarray:
        return self.values[self.mask.live]

    def interior_values(self) -> np.ndarray:
        return self.values[self.mask.interior]

    def scale(self) -> float:
        """Oscillation of the field over live nodes (at least 1e-300)."""
        v = self.live_values()
        if v.size == 0:
            return 1.0
        return max(float(v.max() - v.min()), 1e-300)

    def with_values(self, values: np.ndarray, mask: DomainMask | None = None) -> "ScalarField":
        mask = self.mask if mask is None else mask
        values = np.where(mask.live, values, np.nan)
        return ScalarField(self.grid, values, mask)

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "ScalarField":
        return self.with_values(fn(np.where(self.mask.live, self.values, 0.0)))

    def __add__(self, other):
        if isinstance(other, ScalarField):
            _check_same(self, other)
            return self.with_values(self.values + other.values)
        return self.with_values(self.values + other)

    def __mul__(self, c: float):
        return self.with_values(self.values * c)

    __rmul__ = __mul__


def _check_same(a: ScalarField, b: ScalarField) -> None:
    if a.grid != b.grid:
        raise ValueError("fields live on different grids")


def density_field(field_: ScalarField) -> ScalarField:
    """Validate a density (values >= 0 at live nodes) and return it unchanged."""
    if (field_.live_values() < 0).any():
        raise ValueError("density must be nonnegative")
    return field_


def sample_function(grid: Grid, mask: DomainMask, fn: Callable, *, density: bool = False) -> ScalarField:
    """Evaluate ``fn(coords)`` at every live node.

    ``fn`` receives the list of broadcastable real coordinate arrays
    ``[x_1, y_1, ..., x_n, y_n]`` and returns an array (or scalar).
    """
    raw = np.broadcast_to(np.asarray(fn(grid.coords()), dtype=float), grid.shape)
    live = mask.live
    if not np.isfinite(raw[live]).all():
        bad = np.argwhere(live & ~np.isfinite(raw))[0]
        raise ValueError(f"non-finite function value at live node {tuple(bad)}")
    values = np.where(live, raw, np.nan)
    out = ScalarField(grid, values, mask)
    return density_field(out) if density else out


def write_field(field_: ScalarField, path) -> None:
    """Write the binary ``CPMA`` field format (EXTERIOR nodes stored as 0.0)."""
    mask = field_.mask
    if not mask.canonical:
        raise ValueError(f"cannot serialise derived mask kind {mask.kind!r}")
    g = field_.grid
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, g.n, g.resolution, g.extent,
                          MASK_IDS[mask.kind], mask.radius)
    payload = np.where(mask.live, field_.values, 0.0).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes(order="C"))


def read_field(path, width: int = 1) -> ScalarField:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError("truncated header")
    magic, version, n, m, extent, mask_id, radius = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported format version {version}")
    if mask_id not in (0, 1):
        raise ValueError(f"unknown mask id {mask_id}")
    grid = make_grid(n, extent, m, allow_large=True)
    expected = grid.size * 8
    payload = data[_HEADER.size:]
    if len(payload) != expected:
        raise ValueError(f"truncated payload: {len(payload)} bytes, expected {expected}")
    values = np.frombuffer(payload, dtype="<f8").reshape(grid.shape).astype(float)
    if np.isnan(values).any():
        raise ValueError("NaN in payload")
    kind = "box" if mask_id == 0 else "ball"
    mask = mask_from_header(grid, kind, radius, width)
    return ScalarField(grid, np.where(mask.live, values, np.nan), mask)
